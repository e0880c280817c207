#pragma once

#include <span>
#include <vector>

#include "scadapter/extractor.hpp"

namespace scadapter {

// Scalar statistics over the entries of one style vector (population form).
struct FeatureStats {
    double mu = 0.0;
    double sigma = 0.0;
};

// Denominator guard for constant shape-donor vectors.
inline constexpr double kCsadainEpsilon = 1e-8;

FeatureStats feature_stats(const Eigen::VectorXd& s);

// Convex weights over N >= 2 styles. The two-style case is {omega, 1 - omega}.
class BlendWeights {
public:
    explicit BlendWeights(std::vector<double> weights);
    static BlendWeights two_style(double omega);

    std::span<const double> values() const noexcept { return weights_; }
    std::size_t size() const noexcept { return weights_.size(); }

private:
    std::vector<double> weights_;
};

// sigma_w * (s1 - mu(s1)) / sigma(s1) + mu_w with mu_w, sigma_w interpolated by omega
// toward s1's statistics.
StyleFeature csadain(const StyleFeature& s1, const StyleFeature& s2, double omega);

// Generalisation to N styles; styles[0] donates the normalised shape.
StyleFeature blend_styles(std::span<const StyleFeature> styles, const BlendWeights& weights);

}  // namespace scadapter
