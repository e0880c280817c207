#include "scadapter/csadain.hpp"

#include <cmath>

#include "scadapter/errors.hpp"

namespace scadapter {

FeatureStats feature_stats(const Eigen::VectorXd& s) {
    if (s.size() < 2) throw InputError("feature statistics need at least 2 entries");
    if (!s.allFinite()) throw InputError("feature statistics of a non-finite vector");
    const double mu = s.mean();
    const double var = (s.array() - mu).square().mean();
    return {mu, std::sqrt(var)};
}

BlendWeights::BlendWeights(std::vector<double> weights) : weights_(std::move(weights)) {
    if (weights_.empty()) throw InputError("blend weights are empty");
    double sum = 0.0;
    for (double w : weights_) {
        if (!(w >= 0.0 && w <= 1.0)) throw InputError("blend weight outside [0, 1]");
        sum += w;
    }
    if (std::abs(sum - 1.0) > 1e-9) throw InputError("blend weights must sum to 1");
}

BlendWeights BlendWeights::two_style(double omega) {
    if (!(omega >= 0.0 && omega <= 1.0)) throw InputError("omega must lie in [0, 1]");
    return BlendWeights({omega, 1.0 - omega});
}

namespace {

// Shared by csadain and blend_styles so the two-style paths agree bitwise.
Eigen::VectorXd restatisticize(const Eigen::VectorXd& donor, const FeatureStats& donor_stats, double mu_w,
                               double sigma_w) {
    const double denom = donor_stats.sigma + kCsadainEpsilon;
    return (sigma_w * ((donor.array() - donor_stats.mu) / denom) + mu_w).matrix();
}

}  // namespace

StyleFeature csadain(const StyleFeature& s1, const StyleFeature& s2, double omega) {
    if (!(omega >= 0.0 && omega <= 1.0)) throw InputError("omega must lie in [0, 1]");
    if (s1.size() != s2.size()) throw InputError("csadain: style features differ in length");
    const auto st1 = feature_stats(s1.values);
    const auto st2 = feature_stats(s2.values);
    const double mu_w = omega * st1.mu + (1.0 - omega) * st2.mu;
    const double sigma_w = omega * st1.sigma + (1.0 - omega) * st2.sigma;
    return {restatisticize(s1.values, st1, mu_w, sigma_w), s1.source_id};
}

StyleFeature blend_styles(std::span<const StyleFeature> styles, const BlendWeights& weights) {
    if (styles.size() < 2) throw InputError("blend_styles needs at least 2 styles");
    if (weights.size() != styles.size())
        throw InputError("blend_styles: " + std::to_string(weights.size()) + " weights for " +
                         std::to_string(styles.size()) + " styles");
    double mu_w = 0.0, sigma_w = 0.0;
    FeatureStats donor{};
    for (std::size_t i = 0; i < styles.size(); ++i) {
        if (styles[i].size() != styles[0].size()) throw InputError("blend_styles: style features differ in length");
        const auto st = feature_stats(styles[i].values);
        if (i == 0) donor = st;
        mu_w += weights.values()[i] * st.mu;
        sigma_w += weights.values()[i] * st.sigma;
    }
    return {restatisticize(styles[0].values, donor, mu_w, sigma_w), styles[0].source_id};
}

}  // namespace scadapter
