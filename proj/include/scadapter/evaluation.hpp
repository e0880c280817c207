#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "scadapter/extractor.hpp"
#include "scadapter/serialization.hpp"
#include "scadapter/text_encoder.hpp"

namespace scadapter {

// CS = cos(C(I_c), C(I_cs)).
double content_similarity(const ContentStyleExtractor& extractor, const Image& content, const Image& stylized);
// SS = cos(S(I_s), S(I_cs)); also used as the style-feature similarity.
double style_similarity(const ContentStyleExtractor& extractor, const Image& style, const Image& stylized);

// Cosine between the pooled prompt embedding and the image embedding. A null
// encoder raises ConfigError so callers can report the metric as absent.
double text_alignment(const TextEncoder* encoder, const ImageBackbone& backbone, const std::string& prompt,
                      const Image& image);

struct LabeledEmbeddingSet {
    Eigen::MatrixXd vectors;  // M x d
    std::vector<std::string> labels;

    // Shape, finiteness and at least two distinct labels.
    void validate() const;
    std::vector<int> label_indices(std::vector<std::string>* names = nullptr) const;
};

// Mean silhouette with Euclidean distances. A point alone in its cluster scores 0,
// as does a point with a = b = 0.
double silhouette(const LabeledEmbeddingSet& set);

// [tr(B)/(k-1)] / [tr(W)/(M-k)]. Throws MetricError when tr(W) = 0.
double calinski_harabasz(const LabeledEmbeddingSet& set);

// |mu_a - mu_b|^2 + tr(S_a + S_b - 2 (S_a S_b)^{1/2}) over sample moments (rows are samples).
// tr((S_a S_b)^{1/2}) is taken as tr((A S_b A)^{1/2}) with A = S_a^{1/2}, both roots by
// symmetric eigendecomposition; eigenvalues in [-1e-8 * scale, 0) are clipped to 0.
double frechet_distance(const Eigen::MatrixXd& set_a, const Eigen::MatrixXd& set_b);

// Symmetric PSD square root by eigendecomposition with the clipping rule above.
Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& m);

// Encoder-layer distance standing in for LPIPS: per layer, the mean over positions
// of the squared L2 distance between unit-normalised channel vectors; averaged over layers.
double perceptual_distance(const ImageBackbone& backbone, const Image& a, const Image& b);

// (1 + lpips)(1 + fid).
double artfid(double fid, double lpips);

struct PairMetrics {
    std::string content_id;
    std::string style_id;
    std::string stylized_id;
    double cs = 0.0;
    double ss = 0.0;
    std::optional<double> ta;
};

struct MetricReport {
    static constexpr const char* kFormat = "scadapter.metric_report/1";

    std::vector<PairMetrics> pairs;
    std::optional<double> mean_cs;
    std::optional<double> mean_ss;
    std::optional<double> mean_ta;
    std::optional<double> fid;
    std::optional<double> lpips;
    std::optional<double> artfid;
    std::optional<double> silhouette;
    std::optional<double> calinski_harabasz;
    std::string lpips_name = "lpips_standin";
    std::string backbone_id;

    json to_json() const;
    static MetricReport from_json(const json& j);
};

struct EvalTriple {
    std::string content_id, style_id, stylized_id;
    Image content, style, stylized;
    std::string prompt;  // optional, for TA
};

// Per-pair CS/SS (and TA when an encoder is given), mean aggregates, FID between the
// style and stylized embedding sets (when both have >= 2 samples), mean perceptual
// distance content vs stylized, and ArtFID when both inputs exist.
MetricReport evaluate_triples(const ContentStyleExtractor& extractor, std::span<const EvalTriple> triples,
                              const TextEncoder* text_encoder = nullptr);

}  // namespace scadapter
