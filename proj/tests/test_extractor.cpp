#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "scadapter/errors.hpp"
#include "scadapter/extractor.hpp"
#include "test_support.hpp"

using namespace scadapter;
using scadapter::test::fixture_image;
using scadapter::test::random_image;
using scadapter::test::TempDir;

namespace {

const ToyConvEncoder& encoder() {
    static const ToyConvEncoder enc(0);
    return enc;
}

Image solid(int w, int h, std::uint8_t r, std::uint8_t g, std::uint8_t b) {
    Image img(w, h);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            img.at(y, x, 0) = r;
            img.at(y, x, 1) = g;
            img.at(y, x, 2) = b;
        }
    return img;
}

TEST(Grayscale, PureGrayIsFixedPoint) {
    const Image g = solid(5, 4, 77, 77, 77);
    EXPECT_EQ(to_grayscale(g), g);
}

TEST(Grayscale, PureRedMapsToLumaRounded) {
    const Image out = to_grayscale(solid(1, 1, 255, 0, 0));
    const int expected = static_cast<int>(std::lround(0.299 * 255.0));
    EXPECT_EQ(expected, 76);
    for (int c = 0; c < 3; ++c) EXPECT_EQ(out.at(0, 0, c), expected);
}

TEST(Grayscale, IsIdempotentOnRandomImages) {
    Rng rng(5);
    for (int i = 0; i < 20; ++i) {
        const Image img = random_image(rng, 7, 5);
        const Image g = to_grayscale(img);
        EXPECT_EQ(to_grayscale(g), g);
    }
}

TEST(EmbedImage, IsDeterministic) {
    const Image img = fixture_image(0);
    EXPECT_EQ(embed_image(encoder(), img).values, embed_image(encoder(), img).values);
}

TEST(EmbedImage, AllBlackIsFiniteWithEmbedDim) {
    const auto e = embed_image(encoder(), Image(64, 64));
    EXPECT_EQ(e.size(), ToyConvEncoder::kEmbedDim);
    EXPECT_TRUE(e.all_finite());
}

TEST(EmbedImage, DistinctImagesAreNotParallel) {
    const auto a = embed_image(encoder(), fixture_image(0)).values;
    const auto b = embed_image(encoder(), fixture_image(1)).values;
    EXPECT_LT(a.dot(b) / (a.norm() * b.norm()), 1.0);
}

TEST(EmbedImage, EmptyImageIsInputError) { EXPECT_THROW(embed_image(encoder(), Image()), InputError); }

TEST(Extractor, DecompositionIsExact) {
    const auto ex = ContentStyleExtractor::at_initialization(encoder());
    Rng rng(11);
    for (int i = 0; i < 20; ++i) {
        const Image img = i % 2 ? fixture_image(i) : random_image(rng, 16, 16);
        const auto e = ex.embed(img).values;
        const auto c = ex.extract_content(img).values;
        const auto s = ex.extract_style(img).values;
        EXPECT_LT((s + c - e).cwiseAbs().maxCoeff(), 1e-6);
    }
}

TEST(Extractor, InitialContentOfGrayImageEqualsEmbedding) {
    const auto ex = ContentStyleExtractor::at_initialization(encoder());
    const Image g = to_grayscale(fixture_image(2));
    EXPECT_LT((ex.extract_content(g).values - embed_image(encoder(), g).values).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_LT(ex.extract_style(g).values.cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Extractor, StyleIsResidualAgainstGrayEmbeddingAtInit) {
    const auto ex = ContentStyleExtractor::at_initialization(encoder());
    const Image img = fixture_image(3);
    const Eigen::VectorXd expected = embed_image(encoder(), img).values - embed_image(encoder(), to_grayscale(img)).values;
    EXPECT_LT((ex.extract_style(img).values - expected).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Extractor, LuminancePreservingRecolorKeepsContent) {
    const auto ex = ContentStyleExtractor::at_initialization(encoder());
    const Image img = fixture_image(4);
    const Image recolored = apply_synthetic_style(img, "synthetic/hue120", 0);
    EXPECT_NE(embed_image(encoder(), img).values, embed_image(encoder(), recolored).values);
    const Image ga = to_grayscale(img), gb = to_grayscale(recolored);
    int worst = 0;
    for (std::size_t i = 0; i < ga.bytes().size(); ++i) worst = std::max(worst, std::abs(ga.bytes()[i] - gb.bytes()[i]));
    EXPECT_LE(worst, 1);
}

TEST(Extractor, MissingProjectorIsConfigError) {
    const ContentStyleExtractor ex(encoder());
    EXPECT_THROW(ex.extract_content(fixture_image(0)), ConfigError);
    EXPECT_THROW(ex.extract_style(fixture_image(0)), ConfigError);
}

TEST(Projector, LoaderRejectsMismatchedBackbone) {
    TempDir dir("projector");
    const auto path = dir.path() / "p.json";
    save_projector(encoder().final_projector(), path);
    EXPECT_NO_THROW(load_projector(path, encoder().id()));
    EXPECT_THROW(load_projector(path, ToyConvEncoder(1).id()), ConfigError);
    const auto loaded = load_projector(path, encoder().id());
    EXPECT_EQ(loaded.matrix, encoder().final_projector().matrix);
    EXPECT_EQ(loaded.bias, encoder().final_projector().bias);
}

TEST(ToyEncoder, CheckpointReloadIsBitExact) {
    TempDir dir("encoder");
    const ToyConvEncoder enc(9);
    enc.save(dir.path() / "enc.json");
    const auto loaded = ToyConvEncoder::load(dir.path() / "enc.json");
    EXPECT_EQ(loaded.id(), enc.id());
    EXPECT_EQ(loaded.penultimate(fixture_image(1)), enc.penultimate(fixture_image(1)));
}

TEST(ContentTarget, IdenticalVariantsGiveTheSingleEmbedding) {
    const Image img = fixture_image(5);
    const std::vector<Image> variants{img, img};
    const ContentGroup g{"g", {"a", "b"}, {"s1", "s2"}};
    const auto t = content_target(encoder(), g, variants);
    EXPECT_LT((t.values - embed_image(encoder(), to_grayscale(img)).values).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(ContentTarget, IsArithmeticMeanAndOrderFree) {
    const std::vector<Image> v{fixture_image(6), fixture_image(7)};
    const ContentGroup g{"g", {"a", "b"}, {"s1", "s2"}};
    const auto e1 = embed_image(encoder(), to_grayscale(v[0])).values;
    const auto e2 = embed_image(encoder(), to_grayscale(v[1])).values;
    const auto t = content_target(encoder(), g, v).values;
    EXPECT_LT((t - (e1 + e2) / 2.0).cwiseAbs().maxCoeff(), 1e-12);
    const std::vector<Image> swapped{v[1], v[0]};
    const ContentGroup gs{"g", {"b", "a"}, {"s2", "s1"}};
    EXPECT_LT((content_target(encoder(), gs, swapped).values - t).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(ContentGroupValidation, RejectsShortOrDuplicateGroups) {
    const std::vector<Image> one{fixture_image(0)};
    EXPECT_THROW(content_target(encoder(), ContentGroup{"g", {"a"}, {"s"}}, one), InputError);
    EXPECT_THROW((ContentGroup{"g", {"a", "b"}, {"s", "s"}}.validate()), InputError);
}

TEST(ContentTraining, ZeroStepsReturnsInitialWeights) {
    std::vector<ContentGroupImages> groups{{{"g", {"a", "b"}, {"s1", "s2"}}, {fixture_image(0), fixture_image(1)}}};
    ContentTrainConfig cfg;
    cfg.steps = 0;
    const auto r = train_content_extractor(encoder(), groups, cfg);
    EXPECT_EQ(r.weights.matrix, encoder().final_projector().matrix);
    EXPECT_EQ(r.weights.bias, encoder().final_projector().bias);
    EXPECT_EQ(r.weights.version, encoder().final_projector().version);
}

TEST(ContentTraining, IdenticalVariantsStartAtZeroLoss) {
    // At initialisation the projector already reproduces the target exactly.
    const Image img = fixture_image(2);
    std::vector<ContentGroupImages> groups{{{"g", {"a", "b"}, {"s1", "s2"}}, {img, img}}};
    ContentTrainConfig cfg;
    cfg.steps = 20;
    const auto r = train_content_extractor(encoder(), groups, cfg);
    EXPECT_LT(r.loss_log.front(), 1e-12);
    // Adam takes lr-sized steps even on round-off gradients, so the loss only stays near zero.
    EXPECT_LT(*std::max_element(r.loss_log.begin(), r.loss_log.end()), 1e-2);
}

TEST(ContentTraining, SyntheticSetLossDecreasesAndIsDeterministic) {
    const std::vector<std::string> styles{"synthetic/hue120", "synthetic/sepia", "synthetic/posterize",
                                          "synthetic/contrast"};
    std::vector<ContentGroupImages> groups;
    for (int c = 0; c < 8; ++c) {
        ContentGroupImages g;
        g.group.group_id = "c" + std::to_string(c);
        const Image base = fixture_image(c);
        for (const auto& s : styles) {
            g.group.variant_image_ids.push_back(g.group.group_id + s);
            g.group.style_labels.push_back(s);
            g.variants.push_back(apply_synthetic_style(base, s, 1));
        }
        groups.push_back(std::move(g));
    }
    ContentTrainConfig cfg;
    cfg.steps = 60;
    cfg.batch_size = 8;
    cfg.seed = 4;
    const auto a = train_content_extractor(encoder(), groups, cfg);
    const auto b = train_content_extractor(encoder(), groups, cfg);
    EXPECT_LT(a.loss_log.back(), a.loss_log.front());
    EXPECT_EQ(a.weights.matrix, b.weights.matrix);
    EXPECT_EQ(a.loss_log, b.loss_log);
    EXPECT_EQ(a.weights.version, encoder().final_projector().version + 1);
}

TEST(ContentLoss, IsZeroAtTargetAndPositiveElsewhere) {
    Rng rng(1);
    const Eigen::VectorXd t = rng.normal_vector(16);
    EXPECT_NEAR(content_loss(t, t), 0.0, 1e-12);
    EXPECT_GT(content_loss(t + rng.normal_vector(16), t), 0.0);
}

TEST(Cosine, ZeroNormIsMetricError) {
    EXPECT_THROW(cosine_similarity(Eigen::VectorXd::Zero(3), Eigen::VectorXd::Ones(3)), MetricError);
}

}  // namespace
