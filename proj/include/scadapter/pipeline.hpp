#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "scadapter/csadain.hpp"
#include "scadapter/dataset.hpp"
#include "scadapter/diffusion.hpp"
#include "scadapter/evaluation.hpp"
#include "scadapter/extractor.hpp"
#include "scadapter/text_encoder.hpp"
#include "scadapter/training.hpp"

namespace scadapter {

// Everything a command needs, loaded from one JSON document. Relative paths resolve
// against the config file's directory. Defaults follow the reference setup: 50 DDIM
// steps, CFG 10, lr 1e-4, drop rate 0.05, lambda 0.1, consistency probability 0.3.
struct RunConfig {
    std::filesystem::path base_dir = ".";
    std::filesystem::path dataset_dir = "data";
    std::filesystem::path checkpoint_dir = "checkpoints";
    std::filesystem::path out_dir = "out";
    std::uint64_t seed = 0;

    std::string backbone = "toy";          // "toy" or "precomputed"
    std::uint64_t backbone_seed = 0;       // toy encoder weights
    std::filesystem::path backbone_path;   // precomputed feature file
    std::string codec = "identity";        // "identity" or "toy_ae"
    bool text_encoder = true;              // bundled hash text encoder
    std::uint64_t text_encoder_seed = 0;

    DatasetConfig dataset;
    ContentTrainConfig content_train;
    TrainConfig base_train;
    TrainConfig adapter_train;
    long codec_train_steps = 400;
    int base_corpus_size = 64;
    UNetConfig unet;
    AdapterConfig adapter;
    GuidanceConfig guidance;
    std::string schedule = "scaled_linear";

    double omega = 1.0;
    std::vector<double> weights;
    std::vector<double> sweep_omegas{0.0, 0.25, 0.5, 0.75, 1.0};
    std::string prompt;

    static RunConfig defaults();
    static RunConfig load(const std::filesystem::path& path);
    static RunConfig from_json(const json& j, const std::filesystem::path& base_dir);
    json to_json() const;
    std::string hash() const;  // sha256 of the canonical JSON form
    void validate() const;

    std::filesystem::path resolve(const std::filesystem::path& p) const;
    std::filesystem::path projector_path() const { return resolve(checkpoint_dir) / "content_projector.json"; }
    std::filesystem::path base_model_path() const { return resolve(checkpoint_dir) / "base_model.json"; }
    std::filesystem::path model_path() const { return resolve(checkpoint_dir) / "scadapter_model.json"; }
    std::filesystem::path codec_path() const { return resolve(checkpoint_dir) / "toy_ae.json"; }
    std::filesystem::path manifest_path() const { return resolve(dataset_dir) / "manifest.jsonl"; }
};

// Frozen encoders and codecs shared by all commands.
struct Runtime {
    RunConfig config;
    std::unique_ptr<ImageBackbone> backbone;
    std::unique_ptr<TextEncoder> text;  // null when disabled
    std::unique_ptr<LatentCodec> codec;

    static Runtime create(const RunConfig& config, bool require_codec_checkpoint = true);

    ContentStyleExtractor extractor(bool require_projector = true) const;
    NoiseSchedule schedule() const;
    Eigen::MatrixXd prompt_tokens(const std::string& prompt) const;
    // Resizes to the model's pixel resolution.
    Image fit(const Image& image) const;
    int pixel_height() const { return config.unet.height * codec->spatial_factor(); }
    int pixel_width() const { return config.unet.width * codec->spatial_factor(); }
};

TrainingItem make_training_item(const Runtime& rt, const ContentStyleExtractor& extractor, const Image& image,
                                const std::string& id, const std::string& caption);
TripletItem make_triplet_item(const Runtime& rt, const ContentStyleExtractor& extractor, const TripletRecord& record,
                              const Image& content, const Image& style, const Image& stylized,
                              const std::string& caption);

json guidance_to_json(const GuidanceConfig& g);
GuidanceConfig guidance_from_json(const json& j, GuidanceConfig defaults = GuidanceConfig{});

// sha256 of a file, or "absent".
std::string checkpoint_hash(const std::filesystem::path& path);

// Writes "<path>.meta.json" next to an artifact.
void write_sidecar(const std::filesystem::path& artifact, json metadata);

// Conditioning for the style-transfer and text-driven modes. content is empty in t2i mode.
struct GuidanceVectors {
    std::optional<Eigen::VectorXd> content;
    Eigen::VectorXd style;
    json to_json() const;
};

struct GenerationResult {
    Image image;
    json metadata;
    GuidanceVectors guidance;
    InjectionAudit audit;
};

// Multi-style blend: styles[0] donates the shape; weights default to {omega, 1 - omega}
// against the content image's own style when one style is given.
GuidanceVectors transfer_guidance(const ContentStyleExtractor& extractor, const Image& content,
                                  const std::vector<Image>& styles, const std::optional<BlendWeights>& weights,
                                  double omega);

enum class GenerationMode { transfer, t2i };
std::string to_string(GenerationMode m);
GenerationMode generation_mode_from_string(const std::string& s);

// extract -> blend -> tokenize -> DDIM -> decode. In t2i mode the content stream is
// replaced by the learned null content embedding.
GenerationResult generate(const Runtime& rt, const ScAdapterModel& model, const NoiseSchedule& schedule,
                          GenerationMode mode, const GuidanceVectors& guidance, const std::string& prompt,
                          std::uint64_t seed);

// Commands. Each returns the paths of written artifacts.
DatasetManifest cmd_build_dataset(const RunConfig& config);
ContentTrainResult cmd_train_content_extractor(const RunConfig& config);
struct AdapterTrainSummary {
    std::vector<StepRecord> base_log;
    std::vector<StepRecord> adapter_log;
    std::vector<std::string> changed_outside_adapter;
};
AdapterTrainSummary cmd_train_adapter(const RunConfig& config);

GenerationResult cmd_transfer(const RunConfig& config, const std::filesystem::path& content_path,
                              const std::vector<std::filesystem::path>& style_paths,
                              const std::filesystem::path& out_path);
GenerationResult cmd_t2i_stylize(const RunConfig& config, const std::string& prompt,
                                 const std::filesystem::path& style_path, const std::filesystem::path& out_path);
// One output per omega plus a grid image and a per-omega metadata table.
std::vector<GenerationResult> cmd_sweep_omega(const RunConfig& config, const std::filesystem::path& content_path,
                                              const std::filesystem::path& style_path,
                                              const std::filesystem::path& out_dir);
GenerationResult cmd_mix_styles(const RunConfig& config, const std::filesystem::path& content_path,
                                const std::vector<std::filesystem::path>& style_paths,
                                const std::filesystem::path& out_path);
// Evaluates the manifest's triplets (content, style reference, stylized output).
MetricReport cmd_evaluate(const RunConfig& config, const std::filesystem::path& manifest_path,
                          const std::filesystem::path& report_path);

}  // namespace scadapter
