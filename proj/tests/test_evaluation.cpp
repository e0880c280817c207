#include <gtest/gtest.h>

#include <cmath>

#include "oracles.hpp"
#include "scadapter/errors.hpp"
#include "scadapter/evaluation.hpp"
#include "test_support.hpp"

using namespace scadapter;

namespace {

LabeledEmbeddingSet random_set(Rng& rng, int clusters, int per, int dim, double spread) {
    LabeledEmbeddingSet s;
    s.vectors.resize(clusters * per, dim);
    for (int c = 0; c < clusters; ++c) {
        const Eigen::RowVectorXd center = rng.normal_matrix(1, dim, spread);
        for (int i = 0; i < per; ++i) {
            s.vectors.row(c * per + i) = center + rng.normal_matrix(1, dim);
            s.labels.push_back("L" + std::to_string(c));
        }
    }
    return s;
}

TEST(Silhouette, MatchesBruteForceOracle) {
    Rng rng(1);
    for (int trial = 0; trial < 20; ++trial) {
        auto s = random_set(rng, 2 + static_cast<int>(rng.below(3)), 2 + static_cast<int>(rng.below(5)),
                            1 + static_cast<int>(rng.below(6)), rng.uniform(0.0, 4.0));
        EXPECT_NEAR(silhouette(s), oracle::silhouette(s.vectors, s.labels), 1e-9);
    }
}

TEST(Silhouette, SingletonClusterScoresZero) {
    LabeledEmbeddingSet s;
    s.vectors.resize(3, 1);
    s.vectors << 0.0, 1.0, 10.0;
    s.labels = {"a", "a", "b"};
    // a-points: a = 1, b = 10 and 9 -> 0.9 and 8/9; the singleton contributes 0.
    EXPECT_NEAR(silhouette(s), (0.9 + 8.0 / 9.0) / 3.0, 1e-12);
}

TEST(Silhouette, InvariantToTranslationAndRotation) {
    Rng rng(2);
    auto s = random_set(rng, 3, 5, 4, 3.0);
    const double base = silhouette(s);
    auto shifted = s;
    shifted.vectors.rowwise() += rng.normal_matrix(1, 4, 5.0).row(0);
    EXPECT_NEAR(silhouette(shifted), base, 1e-12);
    const Eigen::MatrixXd q = Eigen::HouseholderQR<Eigen::MatrixXd>(rng.normal_matrix(4, 4)).householderQ();
    auto rotated = s;
    rotated.vectors = s.vectors * q;
    EXPECT_NEAR(silhouette(rotated), base, 1e-12);
}

TEST(CalinskiHarabasz, MatchesBruteForceOracle) {
    Rng rng(3);
    for (int trial = 0; trial < 20; ++trial) {
        auto s = random_set(rng, 2 + static_cast<int>(rng.below(3)), 2 + static_cast<int>(rng.below(5)),
                            1 + static_cast<int>(rng.below(6)), rng.uniform(0.0, 4.0));
        const double expected = oracle::calinski_harabasz(s.vectors, s.labels);
        EXPECT_NEAR(calinski_harabasz(s), expected, 1e-6 * std::abs(expected));
    }
}

TEST(CalinskiHarabasz, ScaleInvariantAndRejectsZeroDispersion) {
    Rng rng(4);
    auto s = random_set(rng, 3, 4, 3, 2.0);
    auto scaled = s;
    scaled.vectors *= 7.5;
    EXPECT_NEAR(calinski_harabasz(scaled), calinski_harabasz(s), 1e-9 * calinski_harabasz(s));
    LabeledEmbeddingSet tight;
    tight.vectors.resize(4, 2);
    tight.vectors << 0, 0, 0, 0, 1, 1, 1, 1;
    tight.labels = {"a", "a", "b", "b"};
    EXPECT_THROW(calinski_harabasz(tight), MetricError);
}

TEST(LabeledEmbeddingSet, Validation) {
    LabeledEmbeddingSet s;
    s.vectors = Eigen::MatrixXd::Zero(3, 2);
    s.labels = {"a", "a", "a"};
    EXPECT_THROW(s.validate(), MetricError);
    s.labels = {"a", "b"};
    EXPECT_THROW(s.validate(), InputError);
    s.labels = {"a", "b", "b"};
    s.vectors(0, 0) = std::nan("");
    EXPECT_THROW(s.validate(), InputError);
}

TEST(FrechetDistance, SelfDistanceIsZero) {
    Rng rng(5);
    const Eigen::MatrixXd a = rng.normal_matrix(30, 5);
    EXPECT_LT(std::abs(frechet_distance(a, a)), 1e-6);
}

TEST(FrechetDistance, MeanShiftClosedForm) {
    Rng rng(6);
    const Eigen::MatrixXd a = rng.normal_matrix(40, 4);
    const Eigen::RowVectorXd v = rng.normal_matrix(1, 4, 2.0);
    const Eigen::MatrixXd b = a.rowwise() + v;
    EXPECT_NEAR(frechet_distance(a, b), v.squaredNorm(), 1e-8);
}

TEST(FrechetDistance, MatchesDenmanBeaversOracleAndIsSymmetric) {
    Rng rng(7);
    for (int trial = 0; trial < 10; ++trial) {
        const Eigen::MatrixXd a = rng.normal_matrix(25, 3) * rng.normal_matrix(3, 3);
        const Eigen::MatrixXd b = (rng.normal_matrix(30, 3) * rng.normal_matrix(3, 3)).array() + 0.5;
        const double expected = oracle::frechet(a, b);
        EXPECT_NEAR(frechet_distance(a, b), expected, 1e-7 * std::max(1.0, expected));
        EXPECT_NEAR(frechet_distance(a, b), frechet_distance(b, a), 1e-7 * std::max(1.0, expected));
        EXPECT_GE(frechet_distance(a, b), 0.0);
    }
}

TEST(FrechetDistance, RejectsBadInput) {
    Rng rng(8);
    EXPECT_THROW(frechet_distance(rng.normal_matrix(1, 3), rng.normal_matrix(5, 3)), InputError);
    Eigen::MatrixXd bad = rng.normal_matrix(5, 3);
    bad(0, 0) = std::nan("");
    EXPECT_THROW(frechet_distance(bad, rng.normal_matrix(5, 3)), InputError);
}

TEST(PsdSqrt, SquaresBackAndClipsRoundOff) {
    Rng rng(9);
    const Eigen::MatrixXd g = rng.normal_matrix(4, 4);
    const Eigen::MatrixXd m = g * g.transpose();
    const Eigen::MatrixXd r = psd_sqrt(m);
    EXPECT_LT((r * r - m).cwiseAbs().maxCoeff(), 1e-10);
    Eigen::MatrixXd nearly = Eigen::MatrixXd::Zero(2, 2);
    nearly(0, 0) = 1.0;
    nearly(1, 1) = -1e-12;
    EXPECT_NO_THROW(psd_sqrt(nearly));
    nearly(1, 1) = -0.5;
    EXPECT_THROW(psd_sqrt(nearly), MetricError);
}

TEST(ArtFid, CompositeFormula) {
    EXPECT_DOUBLE_EQ(artfid(0.0, 0.0), 1.0);
    EXPECT_NEAR(artfid(18.201, 0.4951), 28.707, 0.005);
    EXPECT_NEAR(artfid(21.151, 0.3015), 28.8295, 0.0005);
    EXPECT_LT(artfid(10.0, 0.2), artfid(11.0, 0.2));
    EXPECT_LT(artfid(10.0, 0.2), artfid(10.0, 0.3));
    EXPECT_THROW(artfid(-1.0, 0.1), InputError);
}

class FixedLayers final : public ImageBackbone {
public:
    std::string id() const override { return "fixed"; }
    Eigen::Index penultimate_dim() const override { return 1; }
    Eigen::VectorXd penultimate(const Image&) const override { return Eigen::VectorXd::Ones(1); }
    const ProjectorWeights& final_projector() const override { return proj_; }
    std::vector<LayerFeatures> layer_features(const Image& image) const override {
        // One 2-position layer whose channel vectors depend on the first pixel.
        const double v = image.at(0, 0, 0);
        LayerFeatures l;
        l.map.resize(2, 2);
        l.map << 1.0, v, 3.0, 4.0;
        l.height = 1;
        l.width = 2;
        return {l};
    }

private:
    ProjectorWeights proj_{Eigen::MatrixXd::Ones(1, 1), Eigen::VectorXd::Zero(1), 0, "fixed"};
};

TEST(PerceptualDistance, MatchesHandComputedLayerDistance) {
    FixedLayers bb;
    Image a(1, 1), b(1, 1);
    a.at(0, 0, 0) = 0;  // channel vector (1, 0)
    b.at(0, 0, 0) = 1;  // channel vector (1, 1) -> (1, 1)/sqrt(2)
    const double d0 = std::pow(1.0 - 1.0 / std::sqrt(2.0), 2) + std::pow(1.0 / std::sqrt(2.0), 2);
    EXPECT_NEAR(perceptual_distance(bb, a, b), d0 / 2.0, 1e-9);
    EXPECT_NEAR(perceptual_distance(bb, b, a), perceptual_distance(bb, a, b), 1e-15);
    EXPECT_EQ(perceptual_distance(bb, a, a), 0.0);
}

TEST(PerceptualDistance, ToyEncoderIdentityAndSymmetry) {
    ToyConvEncoder enc(0);
    const Image a = test::fixture_image(0), b = test::fixture_image(1);
    EXPECT_EQ(perceptual_distance(enc, a, a), 0.0);
    EXPECT_NEAR(perceptual_distance(enc, a, b), perceptual_distance(enc, b, a), 1e-12);
    EXPECT_GT(perceptual_distance(enc, a, b), 0.0);
}

TEST(TextAlignment, RequiresCompatibleEncoder) {
    ToyConvEncoder enc(0);
    const Image img = test::fixture_image(0);
    EXPECT_THROW(text_alignment(nullptr, enc, "a cat", img), ConfigError);
    HashTextEncoder wrong(8, 32, 0);
    EXPECT_THROW(text_alignment(&wrong, enc, "a cat", img), ConfigError);
    HashTextEncoder right(8, enc.embed_dim(), 0);
    const double ta = text_alignment(&right, enc, "a red circle", img);
    EXPECT_GE(ta, -1.0);
    EXPECT_LE(ta, 1.0);
}

TEST(EvaluateTriples, IdenticalStylizedGivesUnitContentSimilarity) {
    ToyConvEncoder enc(0);
    const auto ex = ContentStyleExtractor::at_initialization(enc);
    std::vector<EvalTriple> triples;
    for (int i = 0; i < 3; ++i) {
        EvalTriple t{"c" + std::to_string(i), "s" + std::to_string(i), "x" + std::to_string(i),
                     test::fixture_image(i), test::fixture_image(10 + i), test::fixture_image(i), ""};
        triples.push_back(t);
    }
    const auto r = evaluate_triples(ex, triples);
    ASSERT_EQ(r.pairs.size(), 3u);
    for (const auto& p : r.pairs) EXPECT_NEAR(p.cs, 1.0, 1e-12);
    ASSERT_TRUE(r.mean_cs && r.lpips && r.fid && r.artfid);
    EXPECT_NEAR(*r.lpips, 0.0, 1e-12);
    EXPECT_NEAR(*r.artfid, artfid(*r.fid, *r.lpips), 1e-12);
    EXPECT_FALSE(r.mean_ta);
}

TEST(MetricReport, AbsentFieldsAreExplicit) {
    MetricReport r;
    r.mean_cs = 0.5;
    r.backbone_id = "toy";
    const json j = r.to_json();
    EXPECT_EQ(j.at("format"), MetricReport::kFormat);
    EXPECT_TRUE(j.at("aggregates").at("fid").is_null());
    const auto absent = j.at("absent").get<std::vector<std::string>>();
    EXPECT_NE(std::find(absent.begin(), absent.end(), "fid"), absent.end());
    EXPECT_EQ(std::find(absent.begin(), absent.end(), "mean_cs"), absent.end());
    const auto back = MetricReport::from_json(j);
    EXPECT_EQ(back.mean_cs, r.mean_cs);
    EXPECT_FALSE(back.fid);
}

}  // namespace
