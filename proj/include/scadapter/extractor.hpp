#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "scadapter/image.hpp"
#include "scadapter/serialization.hpp"

namespace scadapter {

// Embedding-space vectors share a representation but never convert implicitly.
template <typename Tag>
struct FeatureVector {
    Eigen::VectorXd values;
    std::string source_id;

    Eigen::Index size() const noexcept { return values.size(); }
    bool all_finite() const { return values.allFinite(); }
};

struct ImageEmbeddingTag {};
struct ContentFeatureTag {};
struct StyleFeatureTag {};
using ImageEmbedding = FeatureVector<ImageEmbeddingTag>;
using ContentFeature = FeatureVector<ContentFeatureTag>;
using StyleFeature = FeatureVector<StyleFeatureTag>;

// Final linear map from penultimate backbone features to the embedding space:
// embedding = matrix^T * penultimate + bias.
struct ProjectorWeights {
    Eigen::MatrixXd matrix;  // d_backbone x d_embed
    Eigen::VectorXd bias;    // d_embed
    int version = 0;
    std::string backbone_id;

    Eigen::Index d_backbone() const noexcept { return matrix.rows(); }
    Eigen::Index d_embed() const noexcept { return matrix.cols(); }
    Eigen::VectorXd apply(const Eigen::VectorXd& penultimate) const;
    void validate() const;
};

json projector_to_json(const ProjectorWeights& p);
ProjectorWeights projector_from_json(const json& j);
void save_projector(const ProjectorWeights& p, const std::filesystem::path& path);
// Rejects checkpoints whose backbone_id differs from expected_backbone_id.
ProjectorWeights load_projector(const std::filesystem::path& path, const std::string& expected_backbone_id);

// (height*width) x channels activation map from one encoder layer.
struct LayerFeatures {
    Eigen::MatrixXd map;
    int height = 0;
    int width = 0;
};

// Frozen image encoder. Implementations must be pure functions of pixels.
class ImageBackbone {
public:
    virtual ~ImageBackbone() = default;

    virtual std::string id() const = 0;
    virtual Eigen::Index penultimate_dim() const = 0;
    virtual Eigen::VectorXd penultimate(const Image& image) const = 0;
    virtual const ProjectorWeights& final_projector() const = 0;
    // Intermediate activations for the perceptual distance; may be unsupported.
    virtual std::vector<LayerFeatures> layer_features(const Image& image) const = 0;

    Eigen::Index embed_dim() const { return final_projector().d_embed(); }
};

// Small seeded convolutional encoder bundled for desk-scale work.
//   input -> bilinear 16x16 -> conv3x3(3->12) tanh -> pool2 -> conv3x3(12->16) tanh -> pool2
//   penultimate = [pooled 4x4x16 map | per-channel mean and std of the first layer]
class ToyConvEncoder final : public ImageBackbone {
public:
    static constexpr int kInputSize = 16;
    static constexpr int kLayer1Channels = 12;
    static constexpr int kLayer2Channels = 16;
    static constexpr int kEmbedDim = 64;

    explicit ToyConvEncoder(std::uint64_t seed = 0);

    std::string id() const override { return id_; }
    Eigen::Index penultimate_dim() const override;
    Eigen::VectorXd penultimate(const Image& image) const override;
    const ProjectorWeights& final_projector() const override { return projector_; }
    std::vector<LayerFeatures> layer_features(const Image& image) const override;

    // Replaces the final projector after pretraining; id_suffix marks the new weights.
    void set_final_projector(ProjectorWeights projector, const std::string& id_suffix);

    void save(const std::filesystem::path& path) const;
    static ToyConvEncoder load(const std::filesystem::path& path);

private:
    struct Uninit {};
    explicit ToyConvEncoder(Uninit) {}
    struct Activations;
    Activations forward(const Image& image) const;

    std::string id_;
    Eigen::MatrixXd conv1_w_, conv1_b_, conv2_w_, conv2_b_;
    ProjectorWeights projector_;
};

// Adapter for an external encoder (e.g. a CLIP model run offline): penultimate
// features are looked up by pixel digest from a precomputed feature file.
//   {"format": "scadapter.precomputed_features/1", "backbone_id": ..., "projector": {...},
//    "features": {"<sha256 of image key>": [...]}}
class PrecomputedBackbone final : public ImageBackbone {
public:
    static PrecomputedBackbone load(const std::filesystem::path& path);
    PrecomputedBackbone(std::string id, ProjectorWeights projector, std::map<std::string, Eigen::VectorXd> features);

    static std::string image_key(const Image& image);

    std::string id() const override { return id_; }
    Eigen::Index penultimate_dim() const override { return projector_.d_backbone(); }
    Eigen::VectorXd penultimate(const Image& image) const override;
    const ProjectorWeights& final_projector() const override { return projector_; }
    std::vector<LayerFeatures> layer_features(const Image& image) const override;

private:
    std::string id_;
    ProjectorWeights projector_;
    std::map<std::string, Eigen::VectorXd> features_;
};

// ITU-R BT.601 luma, replicated across the three channels.
Image to_grayscale(const Image& image);

ImageEmbedding embed_image(const ImageBackbone& backbone, const Image& image, std::string source_id = {});

// C(I) = projector(penultimate(gray(I))); S(I) = E(I) - C(I).
class ContentStyleExtractor {
public:
    explicit ContentStyleExtractor(const ImageBackbone& backbone, std::optional<ProjectorWeights> projector = {});

    // Projector initialised to the backbone's own final projector.
    static ContentStyleExtractor at_initialization(const ImageBackbone& backbone);

    const ImageBackbone& backbone() const noexcept { return *backbone_; }
    bool has_projector() const noexcept { return projector_.has_value(); }
    const ProjectorWeights& projector() const;
    void set_projector(ProjectorWeights projector);

    ImageEmbedding embed(const Image& image, std::string source_id = {}) const;
    ContentFeature extract_content(const Image& image, std::string source_id = {}) const;
    StyleFeature extract_style(const Image& image, std::string source_id = {}) const;

    struct Decomposition {
        ImageEmbedding embedding;
        ContentFeature content;
        StyleFeature style;
    };
    // One backbone pass per view, for callers that need all three.
    Decomposition decompose(const Image& image, std::string source_id = {}) const;

private:
    const ImageBackbone* backbone_;
    std::optional<ProjectorWeights> projector_;
};

// Variants of one content rendered in pairwise-distinct styles.
struct ContentGroup {
    std::string group_id;
    std::vector<std::string> variant_image_ids;
    std::vector<std::string> style_labels;

    void validate() const;
};

// Mean frozen-backbone embedding of the grayscaled variants.
ImageEmbedding content_target(const ImageBackbone& backbone, const ContentGroup& group,
                              std::span<const Image> variants);

struct ContentTrainConfig {
    double learning_rate = 1e-3;
    long steps = 300;
    std::uint64_t seed = 0;
    // 0 = full batch; otherwise variants per step drawn in a seeded order.
    int batch_size = 0;
};

struct ContentGroupImages {
    ContentGroup group;
    std::vector<Image> variants;
};

struct ContentTrainResult {
    ProjectorWeights weights;
    std::vector<double> loss_log;  // loss before each step, plus the final loss
};

// Per-variant loss against the group target: MSE + (1 - cosine).
double content_loss(const Eigen::VectorXd& prediction, const Eigen::VectorXd& target);

// Fine-tunes only the final projector with Adam; everything upstream stays frozen.
ContentTrainResult train_content_extractor(const ImageBackbone& backbone, std::span<const ContentGroupImages> groups,
                                           const ContentTrainConfig& config,
                                           const std::function<void(long, double)>& on_step = {});

double cosine_similarity(const Eigen::VectorXd& a, const Eigen::VectorXd& b);

}  // namespace scadapter
