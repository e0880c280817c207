#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "scadapter/csadain.hpp"
#include "scadapter/errors.hpp"
#include "scadapter/rng.hpp"

using namespace scadapter;

namespace {

StyleFeature sf(std::initializer_list<double> v) {
    StyleFeature s;
    s.values = Eigen::VectorXd::Map(std::data(v), static_cast<Eigen::Index>(v.size()));
    return s;
}

StyleFeature random_style(Rng& rng, Eigen::Index d = 64) {
    StyleFeature s;
    s.values = rng.normal_vector(d) * rng.uniform(0.1, 3.0) + Eigen::VectorXd::Constant(d, rng.uniform(-2.0, 2.0));
    return s;
}

// Scalar-loop oracle for the blended statistics rule, written independently of the library.
std::vector<double> oracle_blend(const std::vector<std::vector<double>>& styles, const std::vector<double>& w) {
    auto stats = [](const std::vector<double>& v) {
        double mu = 0.0;
        for (double x : v) mu += x;
        mu /= static_cast<double>(v.size());
        double var = 0.0;
        for (double x : v) var += (x - mu) * (x - mu);
        return std::pair{mu, std::sqrt(var / static_cast<double>(v.size()))};
    };
    double mu_w = 0.0, sd_w = 0.0;
    for (std::size_t i = 0; i < styles.size(); ++i) {
        const auto [mu, sd] = stats(styles[i]);
        mu_w += w[i] * mu;
        sd_w += w[i] * sd;
    }
    const auto [mu0, sd0] = stats(styles[0]);
    std::vector<double> out;
    for (double x : styles[0]) out.push_back(sd_w * (x - mu0) / (sd0 + 1e-8) + mu_w);
    return out;
}

TEST(FeatureStats, ConstantVector) {
    const auto s = feature_stats(sf({1, 1, 1, 1}).values);
    EXPECT_DOUBLE_EQ(s.mu, 1.0);
    EXPECT_DOUBLE_EQ(s.sigma, 0.0);
}

TEST(FeatureStats, TwoPointSymmetric) {
    const auto s = feature_stats(sf({0, 2}).values);
    EXPECT_DOUBLE_EQ(s.mu, 1.0);
    EXPECT_DOUBLE_EQ(s.sigma, 1.0);
}

TEST(FeatureStats, PopulationVariance) {
    const auto s = feature_stats(sf({1, 2, 3, 4}).values);
    EXPECT_DOUBLE_EQ(s.mu, 2.5);
    EXPECT_NEAR(s.sigma, std::sqrt(1.25), 1e-15);
}

TEST(Csadain, OmegaOneReturnsFirstStyle) {
    const auto a = sf({0.3, -1.2, 4.0, 2.2});
    const auto b = sf({10, 11, 9, 30});
    EXPECT_LT((csadain(a, b, 1.0).values - a.values).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(Csadain, HandEvaluatedOmegaZero) {
    const auto out = csadain(sf({0, 2}), sf({10, 14}), 0.0).values;
    EXPECT_NEAR(out(0), 10.0, 1e-6);
    EXPECT_NEAR(out(1), 14.0, 1e-6);
}

TEST(Csadain, OmegaOutsideUnitIntervalIsInputError) {
    const auto a = sf({0, 2});
    EXPECT_THROW(csadain(a, a, -0.01), InputError);
    EXPECT_THROW(csadain(a, a, 1.01), InputError);
    EXPECT_THROW(csadain(a, a, std::nan("")), InputError);
}

TEST(Csadain, LengthMismatchIsInputError) { EXPECT_THROW(csadain(sf({0, 2}), sf({0, 2, 3}), 0.5), InputError); }

TEST(Csadain, ConstantShapeDonorStaysFinite) {
    const auto out = csadain(sf({3, 3, 3}), sf({0, 1, 2}), 0.5).values;
    EXPECT_TRUE(out.allFinite());
}

TEST(CsadainProperty, RandomPairsSatisfyAlgebra) {
    Rng rng(2024);
    for (int trial = 0; trial < 300; ++trial) {
        const auto s1 = random_style(rng), s2 = random_style(rng);
        const double omega = rng.uniform();
        EXPECT_LT((csadain(s1, s2, 1.0).values - s1.values).cwiseAbs().maxCoeff(), 1e-6);
        for (double w : {0.0, 0.25, 0.5, 0.75, 1.0})
            EXPECT_LT((csadain(s1, s1, w).values - s1.values).cwiseAbs().maxCoeff(), 1e-6);
        const auto o0 = csadain(s1, s2, 0.0).values, o1 = csadain(s1, s2, 1.0).values;
        EXPECT_LT((csadain(s1, s2, 0.5).values - 0.5 * (o0 + o1)).cwiseAbs().maxCoeff(), 1e-6);
        const auto st1 = feature_stats(s1.values), st2 = feature_stats(s2.values);
        const auto got = feature_stats(csadain(s1, s2, omega).values);
        EXPECT_NEAR(got.mu, omega * st1.mu + (1 - omega) * st2.mu, 1e-6);
        EXPECT_NEAR(got.sigma, omega * st1.sigma + (1 - omega) * st2.sigma, 1e-6);
    }
}

TEST(BlendWeights, Validation) {
    EXPECT_NO_THROW(BlendWeights({0.5, 0.3, 0.2}));
    EXPECT_THROW(BlendWeights({0.5, 0.6}), InputError);
    EXPECT_THROW(BlendWeights({1.2, -0.2}), InputError);
    EXPECT_THROW(BlendWeights::two_style(1.5), InputError);
}

TEST(BlendStyles, FirstWeightOneReturnsFirstStyle) {
    Rng rng(4);
    const std::vector<StyleFeature> styles{random_style(rng), random_style(rng), random_style(rng)};
    const auto out = blend_styles(styles, BlendWeights({1.0, 0.0, 0.0})).values;
    EXPECT_LT((out - styles[0].values).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(BlendStyles, IdenticalStylesCollapse) {
    Rng rng(5);
    const auto s = random_style(rng);
    const std::vector<StyleFeature> styles{s, s, s};
    const auto out = blend_styles(styles, BlendWeights({0.2, 0.5, 0.3})).values;
    EXPECT_LT((out - s.values).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(BlendStyles, ThreeStylesMatchScalarOracle) {
    const std::vector<StyleFeature> styles{sf({1, 4, -2, 0.5}), sf({3, 3, 8, -1}), sf({0, 0, 1, 7})};
    const auto got = blend_styles(styles, BlendWeights({0.5, 0.3, 0.2})).values;
    const auto expected = oracle_blend({{1, 4, -2, 0.5}, {3, 3, 8, -1}, {0, 0, 1, 7}}, {0.5, 0.3, 0.2});
    for (int i = 0; i < 4; ++i) EXPECT_NEAR(got(i), expected[static_cast<std::size_t>(i)], 1e-12);
}

TEST(BlendStyles, TwoStylesEqualCsadainBitwise) {
    Rng rng(6);
    for (int i = 0; i < 50; ++i) {
        const auto s1 = random_style(rng), s2 = random_style(rng);
        const double w = rng.uniform();
        const std::vector<StyleFeature> styles{s1, s2};
        EXPECT_EQ(blend_styles(styles, BlendWeights::two_style(w)).values, csadain(s1, s2, w).values);
    }
}

TEST(BlendStyles, WeightCountMismatchIsInputError) {
    const std::vector<StyleFeature> styles{sf({0, 1}), sf({1, 2})};
    EXPECT_THROW(blend_styles(styles, BlendWeights({0.2, 0.3, 0.5})), InputError);
}

}  // namespace
