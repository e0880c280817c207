#include "scadapter/extractor.hpp"

#include <cmath>
#include <numeric>

#include "scadapter/autodiff.hpp"
#include "scadapter/errors.hpp"
#include "scadapter/rng.hpp"

namespace scadapter {

// ---------------------------------------------------------------- projector

Eigen::VectorXd ProjectorWeights::apply(const Eigen::VectorXd& penultimate) const {
    if (penultimate.size() != d_backbone())
        throw ConfigError("projector expects " + std::to_string(d_backbone()) + " inputs, got " +
                          std::to_string(penultimate.size()));
    return matrix.transpose() * penultimate + bias;
}

void ProjectorWeights::validate() const {
    if (matrix.size() == 0) throw ConfigError("projector matrix is empty");
    if (bias.size() != matrix.cols()) throw ConfigError("projector bias length does not match d_embed");
    if (!matrix.allFinite() || !bias.allFinite()) throw ConfigError("projector weights contain non-finite values");
}

json projector_to_json(const ProjectorWeights& p) {
    return {{"format", "scadapter.projector/1"},
            {"backbone_id", p.backbone_id},
            {"version", p.version},
            {"d_backbone", p.d_backbone()},
            {"d_embed", p.d_embed()},
            {"matrix", matrix_to_json(p.matrix)},
            {"bias", vector_to_json(p.bias)}};
}

ProjectorWeights projector_from_json(const json& j) {
    ProjectorWeights p;
    try {
        if (j.at("format").get<std::string>() != "scadapter.projector/1")
            throw FormatError("unsupported projector format " + j.at("format").dump());
        p.backbone_id = j.at("backbone_id").get<std::string>();
        p.version = j.at("version").get<int>();
        p.matrix = matrix_from_json(j.at("matrix"));
        p.bias = vector_from_json(j.at("bias"));
        if (p.d_backbone() != j.at("d_backbone").get<Eigen::Index>() || p.d_embed() != j.at("d_embed").get<Eigen::Index>())
            throw FormatError("projector header dimensions disagree with the stored matrix");
    } catch (const json::exception& e) {
        throw FormatError(std::string("malformed projector checkpoint: ") + e.what());
    }
    p.validate();
    return p;
}

void save_projector(const ProjectorWeights& p, const std::filesystem::path& path) {
    write_json_file(projector_to_json(p), path, -1);
}

ProjectorWeights load_projector(const std::filesystem::path& path, const std::string& expected_backbone_id) {
    auto p = projector_from_json(read_json_file(path));
    if (p.backbone_id != expected_backbone_id)
        throw ConfigError("projector checkpoint " + path.string() + " was trained for backbone '" + p.backbone_id +
                          "', not '" + expected_backbone_id + "'");
    return p;
}

// ---------------------------------------------------------------- toy encoder

struct ToyConvEncoder::Activations {
    Eigen::MatrixXd layer1;  // 256 x 12
    Eigen::MatrixXd layer2;  // 64 x 16
    Eigen::VectorXd penultimate;
};

ToyConvEncoder::ToyConvEncoder(std::uint64_t seed) : id_("toy-conv-encoder/v1/seed=" + std::to_string(seed)) {
    Rng rng(seed);
    // Gains chosen so tanh units sit mostly in their responsive range.
    conv1_w_ = rng.normal_matrix(9 * 3, kLayer1Channels, 1.5 / std::sqrt(27.0));
    conv1_b_ = rng.normal_matrix(1, kLayer1Channels, 0.1);
    conv2_w_ = rng.normal_matrix(9 * kLayer1Channels, kLayer2Channels, 1.5 / std::sqrt(9.0 * kLayer1Channels));
    conv2_b_ = rng.normal_matrix(1, kLayer2Channels, 0.1);
    const Eigen::Index d_backbone = penultimate_dim();
    projector_.matrix = rng.normal_matrix(d_backbone, kEmbedDim, 1.0 / std::sqrt(static_cast<double>(d_backbone)));
    projector_.bias = Eigen::VectorXd::Zero(kEmbedDim);
    projector_.version = 0;
    projector_.backbone_id = id_;
}

Eigen::Index ToyConvEncoder::penultimate_dim() const {
    return (kInputSize / 4) * (kInputSize / 4) * kLayer2Channels + 2 * kLayer1Channels;
}

ToyConvEncoder::Activations ToyConvEncoder::forward(const Image& image) const {
    if (image.empty()) throw InputError("cannot embed an image with zero area");
    const Image resized = resize_bilinear(image, kInputSize, kInputSize);
    // planes are 3 x HW; the encoder works on HW x 3 in [-1, 1]
    const Eigen::MatrixXd input = (resized.to_planes().transpose().array() * 2.0 - 1.0).matrix();

    auto conv = [](const Eigen::MatrixXd& x, int size, const Eigen::MatrixXd& w, const Eigen::MatrixXd& b) {
        auto cols = ad::im2col3x3(ad::constant(x), size, size);
        Eigen::MatrixXd out = cols->value * w;
        out.rowwise() += b.row(0);
        return Eigen::MatrixXd(out.array().tanh().matrix());
    };

    Activations act;
    act.layer1 = conv(input, kInputSize, conv1_w_, conv1_b_);
    const auto pooled1 = ad::avgpool2(ad::constant(act.layer1), kInputSize, kInputSize)->value;
    act.layer2 = conv(pooled1, kInputSize / 2, conv2_w_, conv2_b_);
    const auto pooled2 = ad::avgpool2(ad::constant(act.layer2), kInputSize / 2, kInputSize / 2)->value;

    act.penultimate.resize(penultimate_dim());
    Eigen::Index k = 0;
    for (Eigen::Index r = 0; r < pooled2.rows(); ++r)
        for (Eigen::Index c = 0; c < pooled2.cols(); ++c) act.penultimate(k++) = pooled2(r, c);
    const Eigen::RowVectorXd mean = act.layer1.colwise().mean();
    const Eigen::RowVectorXd sd =
        ((act.layer1.rowwise() - mean).array().square().colwise().mean()).sqrt().matrix();
    for (int c = 0; c < kLayer1Channels; ++c) act.penultimate(k++) = mean(c);
    for (int c = 0; c < kLayer1Channels; ++c) act.penultimate(k++) = sd(c);
    return act;
}

Eigen::VectorXd ToyConvEncoder::penultimate(const Image& image) const { return forward(image).penultimate; }

std::vector<LayerFeatures> ToyConvEncoder::layer_features(const Image& image) const {
    auto act = forward(image);
    return {{std::move(act.layer1), kInputSize, kInputSize}, {std::move(act.layer2), kInputSize / 2, kInputSize / 2}};
}

void ToyConvEncoder::set_final_projector(ProjectorWeights projector, const std::string& id_suffix) {
    if (projector.d_backbone() != penultimate_dim() || projector.d_embed() != kEmbedDim)
        throw ConfigError("toy encoder projector must be " + std::to_string(penultimate_dim()) + " x " +
                          std::to_string(kEmbedDim));
    id_ += id_suffix;
    projector.backbone_id = id_;
    projector.validate();
    projector_ = std::move(projector);
}

void ToyConvEncoder::save(const std::filesystem::path& path) const {
    json doc = {{"format", "scadapter.toy_encoder/1"},
                {"backbone_id", id_},
                {"conv1_w", matrix_to_json(conv1_w_)},
                {"conv1_b", matrix_to_json(conv1_b_)},
                {"conv2_w", matrix_to_json(conv2_w_)},
                {"conv2_b", matrix_to_json(conv2_b_)},
                {"projector", projector_to_json(projector_)}};
    write_json_file(doc, path, -1);
}

ToyConvEncoder ToyConvEncoder::load(const std::filesystem::path& path) {
    const json doc = read_json_file(path);
    ToyConvEncoder enc{Uninit{}};
    try {
        if (doc.at("format").get<std::string>() != "scadapter.toy_encoder/1")
            throw FormatError(path.string() + ": not a toy encoder checkpoint");
        enc.id_ = doc.at("backbone_id").get<std::string>();
        enc.conv1_w_ = matrix_from_json(doc.at("conv1_w"));
        enc.conv1_b_ = matrix_from_json(doc.at("conv1_b"));
        enc.conv2_w_ = matrix_from_json(doc.at("conv2_w"));
        enc.conv2_b_ = matrix_from_json(doc.at("conv2_b"));
        enc.projector_ = projector_from_json(doc.at("projector"));
    } catch (const json::exception& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
    if (enc.conv1_w_.rows() != 27 || enc.conv1_w_.cols() != kLayer1Channels || enc.conv2_w_.cols() != kLayer2Channels ||
        enc.projector_.d_backbone() != enc.penultimate_dim())
        throw ConfigError(path.string() + ": toy encoder dimensions do not match this build");
    return enc;
}

// ---------------------------------------------------------------- precomputed backbone

PrecomputedBackbone::PrecomputedBackbone(std::string id, ProjectorWeights projector,
                                         std::map<std::string, Eigen::VectorXd> features)
    : id_(std::move(id)), projector_(std::move(projector)), features_(std::move(features)) {
    projector_.validate();
    for (const auto& [key, v] : features_)
        if (v.size() != projector_.d_backbone()) throw ConfigError("precomputed feature " + key + " has wrong length");
}

std::string PrecomputedBackbone::image_key(const Image& image) {
    std::vector<std::uint8_t> buf;
    const std::string header = std::to_string(image.width()) + "x" + std::to_string(image.height()) + ":";
    buf.insert(buf.end(), header.begin(), header.end());
    buf.insert(buf.end(), image.bytes().begin(), image.bytes().end());
    return sha256_hex(buf);
}

PrecomputedBackbone PrecomputedBackbone::load(const std::filesystem::path& path) {
    const json doc = read_json_file(path);
    try {
        if (doc.at("format").get<std::string>() != "scadapter.precomputed_features/1")
            throw FormatError(path.string() + ": not a precomputed feature file");
        std::map<std::string, Eigen::VectorXd> features;
        for (const auto& [key, v] : doc.at("features").items()) features.emplace(key, vector_from_json(v));
        return PrecomputedBackbone(doc.at("backbone_id").get<std::string>(), projector_from_json(doc.at("projector")),
                                   std::move(features));
    } catch (const json::exception& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
}

Eigen::VectorXd PrecomputedBackbone::penultimate(const Image& image) const {
    if (image.empty()) throw InputError("cannot embed an image with zero area");
    const auto it = features_.find(image_key(image));
    if (it == features_.end())
        throw ConfigError("backbone '" + id_ + "' has no precomputed features for this image");
    return it->second;
}

std::vector<LayerFeatures> PrecomputedBackbone::layer_features(const Image&) const {
    throw ConfigError("backbone '" + id_ + "' does not expose intermediate layers");
}

// ---------------------------------------------------------------- extractors

Image to_grayscale(const Image& image) {
    Image out(image.width(), image.height());
    for (int y = 0; y < image.height(); ++y)
        for (int x = 0; x < image.width(); ++x) {
            const double luma = 0.299 * image.at(y, x, 0) + 0.587 * image.at(y, x, 1) + 0.114 * image.at(y, x, 2);
            const std::uint8_t v = clamp_to_byte(luma);
            out.at(y, x, 0) = out.at(y, x, 1) = out.at(y, x, 2) = v;
        }
    return out;
}

ImageEmbedding embed_image(const ImageBackbone& backbone, const Image& image, std::string source_id) {
    ImageEmbedding e{backbone.final_projector().apply(backbone.penultimate(image)), std::move(source_id)};
    if (!e.all_finite()) throw InputError("backbone produced a non-finite embedding");
    return e;
}

ContentStyleExtractor::ContentStyleExtractor(const ImageBackbone& backbone, std::optional<ProjectorWeights> projector)
    : backbone_(&backbone) {
    if (projector) set_projector(std::move(*projector));
}

ContentStyleExtractor ContentStyleExtractor::at_initialization(const ImageBackbone& backbone) {
    return ContentStyleExtractor(backbone, backbone.final_projector());
}

const ProjectorWeights& ContentStyleExtractor::projector() const {
    if (!projector_) throw ConfigError("content extractor has no projector weights loaded");
    return *projector_;
}

void ContentStyleExtractor::set_projector(ProjectorWeights projector) {
    projector.validate();
    if (projector.d_backbone() != backbone_->penultimate_dim() || projector.d_embed() != backbone_->embed_dim())
        throw ConfigError("projector dimensions do not match the backbone");
    if (projector.backbone_id != backbone_->id())
        throw ConfigError("projector belongs to backbone '" + projector.backbone_id + "', not '" + backbone_->id() + "'");
    projector_ = std::move(projector);
}

ImageEmbedding ContentStyleExtractor::embed(const Image& image, std::string source_id) const {
    return embed_image(*backbone_, image, std::move(source_id));
}

ContentFeature ContentStyleExtractor::extract_content(const Image& image, std::string source_id) const {
    const auto& proj = projector();
    return {proj.apply(backbone_->penultimate(to_grayscale(image))), std::move(source_id)};
}

StyleFeature ContentStyleExtractor::extract_style(const Image& image, std::string source_id) const {
    return decompose(image, std::move(source_id)).style;
}

ContentStyleExtractor::Decomposition ContentStyleExtractor::decompose(const Image& image, std::string source_id) const {
    Decomposition d{embed(image, source_id), extract_content(image, source_id), {}};
    d.style = {d.embedding.values - d.content.values, std::move(source_id)};
    return d;
}

// ---------------------------------------------------------------- content groups & training

void ContentGroup::validate() const {
    if (variant_image_ids.size() < 2)
        throw InputError("content group '" + group_id + "' needs at least 2 variants");
    if (style_labels.size() != variant_image_ids.size())
        throw InputError("content group '" + group_id + "' has " + std::to_string(style_labels.size()) +
                         " style labels for " + std::to_string(variant_image_ids.size()) + " variants");
    for (std::size_t i = 0; i < style_labels.size(); ++i)
        for (std::size_t j = i + 1; j < style_labels.size(); ++j)
            if (style_labels[i] == style_labels[j])
                throw InputError("content group '" + group_id + "' repeats style label '" + style_labels[i] + "'");
}

ImageEmbedding content_target(const ImageBackbone& backbone, const ContentGroup& group,
                              std::span<const Image> variants) {
    group.validate();
    if (variants.size() != group.variant_image_ids.size())
        throw InputError("content group '" + group.group_id + "': image count does not match variant ids");
    Eigen::VectorXd sum = Eigen::VectorXd::Zero(backbone.embed_dim());
    for (const auto& v : variants) sum += embed_image(backbone, to_grayscale(v)).values;
    return {sum / static_cast<double>(variants.size()), group.group_id};
}

double cosine_similarity(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
    if (a.size() != b.size()) throw InputError("cosine similarity of vectors with different lengths");
    const double na = a.norm(), nb = b.norm();
    if (na == 0.0 || nb == 0.0) throw MetricError("cosine similarity of a zero-norm vector");
    return std::clamp(a.dot(b) / (na * nb), -1.0, 1.0);
}

double content_loss(const Eigen::VectorXd& prediction, const Eigen::VectorXd& target) {
    const double mse = (prediction - target).squaredNorm() / static_cast<double>(prediction.size());
    const double denom = prediction.norm() * target.norm();
    const double cos = denom > 0.0 ? prediction.dot(target) / denom : 0.0;
    return mse + (1.0 - cos);
}

namespace {

// Gradient of content_loss with respect to the prediction.
Eigen::VectorXd content_loss_grad(const Eigen::VectorXd& p, const Eigen::VectorXd& t) {
    Eigen::VectorXd g = 2.0 * (p - t) / static_cast<double>(p.size());
    const double np = p.norm(), nt = t.norm();
    if (np > 0.0 && nt > 0.0) {
        const double dot = p.dot(t);
        g -= t / (np * nt) - p * (dot / (np * np * np * nt));
    }
    return g;
}

struct TrainSample {
    Eigen::VectorXd penultimate;  // of the grayscaled variant
    Eigen::VectorXd target;
};

}  // namespace

ContentTrainResult train_content_extractor(const ImageBackbone& backbone, std::span<const ContentGroupImages> groups,
                                           const ContentTrainConfig& config,
                                           const std::function<void(long, double)>& on_step) {
    if (groups.empty()) throw InputError("content extractor training needs at least one group");
    if (!(config.learning_rate > 0.0)) throw ConfigError("learning rate must be positive");
    if (config.steps < 0) throw ConfigError("step count must be non-negative");

    // The backbone is frozen, so penultimate features and targets are computed once.
    std::vector<TrainSample> samples;
    for (const auto& g : groups) {
        const auto target = content_target(backbone, g.group, g.variants).values;
        for (const auto& v : g.variants) samples.push_back({backbone.penultimate(to_grayscale(v)), target});
    }

    ProjectorWeights w = backbone.final_projector();
    Rng rng(config.seed);
    std::vector<std::size_t> order(samples.size());
    std::iota(order.begin(), order.end(), 0);
    const std::size_t batch =
        config.batch_size > 0 ? std::min<std::size_t>(config.batch_size, samples.size()) : samples.size();
    std::size_t cursor = samples.size();

    auto full_loss = [&](const ProjectorWeights& pw) {
        double total = 0.0;
        for (const auto& s : samples) total += content_loss(pw.apply(s.penultimate), s.target);
        return total / static_cast<double>(samples.size());
    };

    // Adam state
    constexpr double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    Eigen::MatrixXd m_w = Eigen::MatrixXd::Zero(w.matrix.rows(), w.matrix.cols()), v_w = m_w;
    Eigen::VectorXd m_b = Eigen::VectorXd::Zero(w.bias.size()), v_b = m_b;

    ContentTrainResult result;
    for (long step = 0; step < config.steps; ++step) {
        const double loss = full_loss(w);
        if (!std::isfinite(loss)) throw TrainingError("content extractor loss diverged", step);
        result.loss_log.push_back(loss);
        if (on_step) on_step(step, loss);

        if (cursor + batch > samples.size()) {
            // seeded Fisher-Yates reshuffle at each epoch boundary
            for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
            cursor = 0;
        }
        Eigen::MatrixXd g_w = Eigen::MatrixXd::Zero(w.matrix.rows(), w.matrix.cols());
        Eigen::VectorXd g_b = Eigen::VectorXd::Zero(w.bias.size());
        for (std::size_t k = 0; k < batch; ++k) {
            const auto& s = samples[order[cursor + k]];
            const Eigen::VectorXd g = content_loss_grad(w.apply(s.penultimate), s.target);
            g_w.noalias() += s.penultimate * g.transpose();
            g_b += g;
        }
        cursor += batch;
        g_w /= static_cast<double>(batch);
        g_b /= static_cast<double>(batch);

        const double t = static_cast<double>(step + 1);
        const double c1 = 1.0 - std::pow(beta1, t), c2 = 1.0 - std::pow(beta2, t);
        m_w = beta1 * m_w + (1 - beta1) * g_w;
        v_w = beta2 * v_w + (1 - beta2) * g_w.cwiseAbs2();
        m_b = beta1 * m_b + (1 - beta1) * g_b;
        v_b = beta2 * v_b + (1 - beta2) * g_b.cwiseAbs2();
        w.matrix -= (config.learning_rate * (m_w / c1).array() / ((v_w / c2).array().sqrt() + eps)).matrix();
        w.bias -= (config.learning_rate * (m_b / c1).array() / ((v_b / c2).array().sqrt() + eps)).matrix();
    }
    const double final_loss = full_loss(w);
    if (!std::isfinite(final_loss)) throw TrainingError("content extractor loss diverged", config.steps);
    result.loss_log.push_back(final_loss);
    if (config.steps > 0) ++w.version;
    result.weights = std::move(w);
    return result;
}

}  // namespace scadapter
