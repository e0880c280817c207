#include "scadapter/pipeline.hpp"

#include <chrono>
#include <cmath>
#include <ctime>
#include <fstream>
#include <set>

#include "scadapter/errors.hpp"

namespace scadapter {

namespace {

constexpr const char* kGenerationFormat = "scadapter.generation/1";

const std::set<std::string> kConfigKeys{
    "dataset_dir", "checkpoint_dir", "out_dir", "seed", "backbone", "backbone_seed", "backbone_path", "codec",
    "text_encoder", "text_encoder_seed", "dataset", "content_train", "base_train", "adapter_train",
    "codec_train_steps", "base_corpus_size", "unet", "adapter", "guidance", "schedule", "omega", "weights",
    "sweep_omegas", "prompt"};

TrainConfig base_train_defaults() {
    TrainConfig c;
    c.consistency_prob = 0.0;
    c.optimizer = OptimizerKind::adam;
    c.learning_rate = 2e-3;
    c.steps = 3000;
    c.batch_size = 4;
    c.trainable = all_components();
    return c;
}

std::string utc_now() {
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

std::string image_hash(const Image& image) { return sha256_hex(image.bytes()); }

Image read_input_image(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path)) throw InputError("image not found: " + path.string());
    return read_ppm(path);
}

ScAdapterModel::Loaded load_model_checkpoint(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path))
        throw ConfigError("missing model checkpoint " + path.string() + " (run train-adapter first)");
    return ScAdapterModel::load(path);
}

}  // namespace

// ---------------------------------------------------------------- config

json guidance_to_json(const GuidanceConfig& g) {
    return {{"cfg_scale", g.cfg_scale}, {"steps", g.steps},   {"eta", g.eta},
            {"clip_x0", g.clip_x0},      {"clip_lo", g.clip_lo}, {"clip_hi", g.clip_hi}};
}

GuidanceConfig guidance_from_json(const json& j, GuidanceConfig g) {
    try {
        g.cfg_scale = j.value("cfg_scale", g.cfg_scale);
        g.steps = j.value("steps", g.steps);
        g.eta = j.value("eta", g.eta);
        g.clip_x0 = j.value("clip_x0", g.clip_x0);
        g.clip_lo = j.value("clip_lo", g.clip_lo);
        g.clip_hi = j.value("clip_hi", g.clip_hi);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("malformed guidance config: ") + e.what());
    }
    return g;
}

RunConfig RunConfig::defaults() {
    RunConfig c;
    c.base_train = base_train_defaults();
    return c;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path)) throw ConfigError("config file not found: " + path.string());
    json doc;
    try {
        doc = read_json_file(path);
    } catch (const Error& e) {
        throw ConfigError(e.what());
    }
    return from_json(doc, path.parent_path().empty() ? std::filesystem::path(".") : path.parent_path());
}

RunConfig RunConfig::from_json(const json& j, const std::filesystem::path& base_dir) {
    if (!j.is_object()) throw ConfigError("config must be a JSON object");
    for (const auto& [key, value] : j.items())
        if (!kConfigKeys.count(key)) throw ConfigError("unknown config key '" + key + "'");
    RunConfig c = defaults();
    c.base_dir = base_dir;
    try {
        c.dataset_dir = j.value("dataset_dir", c.dataset_dir.string());
        c.checkpoint_dir = j.value("checkpoint_dir", c.checkpoint_dir.string());
        c.out_dir = j.value("out_dir", c.out_dir.string());
        c.seed = j.value("seed", c.seed);
        c.backbone = j.value("backbone", c.backbone);
        c.backbone_seed = j.value("backbone_seed", c.backbone_seed);
        c.backbone_path = j.value("backbone_path", c.backbone_path.string());
        c.codec = j.value("codec", c.codec);
        c.text_encoder = j.value("text_encoder", c.text_encoder);
        c.text_encoder_seed = j.value("text_encoder_seed", c.text_encoder_seed);
        if (j.contains("dataset")) c.dataset = DatasetConfig::from_json(j.at("dataset"));
        if (j.contains("content_train")) {
            const auto& ct = j.at("content_train");
            c.content_train.learning_rate = ct.value("learning_rate", c.content_train.learning_rate);
            c.content_train.steps = ct.value("steps", c.content_train.steps);
            c.content_train.seed = ct.value("seed", c.content_train.seed);
            c.content_train.batch_size = ct.value("batch_size", c.content_train.batch_size);
        }
        if (j.contains("base_train")) c.base_train = TrainConfig::from_json(j.at("base_train"), c.base_train);
        if (j.contains("adapter_train")) c.adapter_train = TrainConfig::from_json(j.at("adapter_train"), c.adapter_train);
        c.codec_train_steps = j.value("codec_train_steps", c.codec_train_steps);
        c.base_corpus_size = j.value("base_corpus_size", c.base_corpus_size);
        if (j.contains("unet")) c.unet = UNetConfig::from_json(j.at("unet"));
        if (j.contains("adapter")) c.adapter = AdapterConfig::from_json(j.at("adapter"));
        if (j.contains("guidance")) c.guidance = guidance_from_json(j.at("guidance"), c.guidance);
        c.schedule = j.value("schedule", c.schedule);
        c.omega = j.value("omega", c.omega);
        if (j.contains("weights")) c.weights = j.at("weights").get<std::vector<double>>();
        if (j.contains("sweep_omegas")) c.sweep_omegas = j.at("sweep_omegas").get<std::vector<double>>();
        c.prompt = j.value("prompt", c.prompt);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("malformed config: ") + e.what());
    }
    c.validate();
    return c;
}

json RunConfig::to_json() const {
    return {{"dataset_dir", dataset_dir.string()},
            {"checkpoint_dir", checkpoint_dir.string()},
            {"out_dir", out_dir.string()},
            {"seed", seed},
            {"backbone", backbone},
            {"backbone_seed", backbone_seed},
            {"backbone_path", backbone_path.string()},
            {"codec", codec},
            {"text_encoder", text_encoder},
            {"text_encoder_seed", text_encoder_seed},
            {"dataset", dataset.to_json()},
            {"content_train",
             {{"learning_rate", content_train.learning_rate},
              {"steps", content_train.steps},
              {"seed", content_train.seed},
              {"batch_size", content_train.batch_size}}},
            {"base_train", base_train.to_json()},
            {"adapter_train", adapter_train.to_json()},
            {"codec_train_steps", codec_train_steps},
            {"base_corpus_size", base_corpus_size},
            {"unet", unet.to_json()},
            {"adapter", adapter.to_json()},
            {"guidance", guidance_to_json(guidance)},
            {"schedule", schedule},
            {"omega", omega},
            {"weights", weights},
            {"sweep_omegas", sweep_omegas},
            {"prompt", prompt}};
}

std::string RunConfig::hash() const { return sha256_hex(to_json().dump()); }

void RunConfig::validate() const {
    if (backbone != "toy" && backbone != "precomputed") throw ConfigError("backbone must be 'toy' or 'precomputed'");
    if (backbone == "precomputed" && backbone_path.empty()) throw ConfigError("precomputed backbone needs backbone_path");
    if (codec != "identity" && codec != "toy_ae") throw ConfigError("codec must be 'identity' or 'toy_ae'");
    if (schedule != "linear_beta" && schedule != "scaled_linear")
        throw ConfigError("schedule must be 'linear_beta' or 'scaled_linear'");
    if (!(omega >= 0.0 && omega <= 1.0)) throw ConfigError("omega must lie in [0, 1]");
    for (double w : sweep_omegas)
        if (!(w >= 0.0 && w <= 1.0)) throw ConfigError("sweep omegas must lie in [0, 1]");
    if (base_corpus_size < 1) throw ConfigError("base_corpus_size must be positive");
    if (content_train.steps < 0 || !(content_train.learning_rate > 0.0))
        throw ConfigError("content_train needs steps >= 0 and a positive learning rate");
    unet.validate();
    adapter.validate();
    base_train.validate();
    adapter_train.validate();
    if (adapter_train.trainable.count(Component::base))
        throw ConfigError("adapter_train.trainable may only name adapter components");
    if (codec == "identity" && unet.latent_channels != 3) throw ConfigError("identity codec needs 3 latent channels");
    if (codec == "toy_ae" && unet.latent_channels != ToyAutoencoder::kLatentChannels)
        throw ConfigError("toy_ae codec needs " + std::to_string(ToyAutoencoder::kLatentChannels) + " latent channels");
}

std::filesystem::path RunConfig::resolve(const std::filesystem::path& p) const {
    return p.is_absolute() ? p : base_dir / p;
}

// ---------------------------------------------------------------- runtime

Runtime Runtime::create(const RunConfig& config, bool require_codec_checkpoint) {
    Runtime rt;
    rt.config = config;
    if (config.backbone == "toy" && !config.backbone_path.empty()) {
        rt.backbone = std::make_unique<ToyConvEncoder>(ToyConvEncoder::load(config.resolve(config.backbone_path)));
    } else if (config.backbone == "toy") {
        EncoderPretrainConfig pc;
        pc.seed = config.backbone_seed;
        rt.backbone = std::make_unique<ToyConvEncoder>(pretrain_toy_encoder(pc));
    } else
        rt.backbone = std::make_unique<PrecomputedBackbone>(PrecomputedBackbone::load(config.resolve(config.backbone_path)));
    if (config.text_encoder)
        rt.text = std::make_unique<HashTextEncoder>(config.unet.d_token, rt.backbone->embed_dim(),
                                                    config.text_encoder_seed);
    if (config.codec == "identity") {
        rt.codec = std::make_unique<IdentityCodec>();
    } else if (std::filesystem::exists(config.codec_path())) {
        rt.codec = std::make_unique<ToyAutoencoder>(ToyAutoencoder::load(config.codec_path()));
    } else if (require_codec_checkpoint) {
        throw ConfigError("missing codec checkpoint " + config.codec_path().string());
    } else {
        rt.codec = std::make_unique<ToyAutoencoder>(config.seed);
    }
    if (rt.backbone->embed_dim() != config.adapter.d_embed)
        throw ConfigError("adapter d_embed " + std::to_string(config.adapter.d_embed) +
                          " does not match backbone embedding size " + std::to_string(rt.backbone->embed_dim()));
    return rt;
}

ContentStyleExtractor Runtime::extractor(bool require_projector) const {
    const auto path = config.projector_path();
    if (std::filesystem::exists(path)) return ContentStyleExtractor(*backbone, load_projector(path, backbone->id()));
    if (require_projector)
        throw ConfigError("missing content projector " + path.string() + " (run train-content-extractor first)");
    return ContentStyleExtractor::at_initialization(*backbone);
}

NoiseSchedule Runtime::schedule() const {
    return config.schedule == "linear_beta" ? NoiseSchedule::linear_beta() : NoiseSchedule::scaled_linear();
}

Eigen::MatrixXd Runtime::prompt_tokens(const std::string& prompt) const {
    if (text) return text->prompt_tokens(prompt);
    // Without an encoder the prompt stream is a single zero token.
    return Eigen::MatrixXd::Zero(1, config.unet.d_token);
}

Image Runtime::fit(const Image& image) const {
    if (image.width() == pixel_width() && image.height() == pixel_height()) return image;
    return resize_bilinear(image, pixel_width(), pixel_height());
}

TrainingItem make_training_item(const Runtime& rt, const ContentStyleExtractor& extractor, const Image& image,
                                const std::string& id, const std::string& caption) {
    const Image fitted = rt.fit(image);
    const auto d = extractor.decompose(image, id);
    return {id, rt.codec->encode(fitted), d.content.values, d.style.values, rt.prompt_tokens(caption)};
}

TripletItem make_triplet_item(const Runtime& rt, const ContentStyleExtractor& extractor, const TripletRecord& record,
                              const Image& content, const Image& style, const Image& stylized,
                              const std::string& caption) {
    const auto c = extractor.decompose(content, record.content_image_id);
    return {record,
            rt.codec->encode(rt.fit(stylized)),
            c.content.values,
            c.style.values,
            extractor.extract_style(style, record.style_image_id).values,
            rt.prompt_tokens(caption)};
}

std::string checkpoint_hash(const std::filesystem::path& path) {
    return std::filesystem::exists(path) ? sha256_file(path) : std::string("absent");
}

void write_sidecar(const std::filesystem::path& artifact, json metadata) {
    write_json_file(metadata, artifact.string() + ".meta.json");
}

// ---------------------------------------------------------------- generation

json GuidanceVectors::to_json() const {
    return {{"content", content ? vector_to_json(*content) : json(nullptr)}, {"style", vector_to_json(style)}};
}

GuidanceVectors transfer_guidance(const ContentStyleExtractor& extractor, const Image& content,
                                  const std::vector<Image>& styles, const std::optional<BlendWeights>& weights,
                                  double omega) {
    if (styles.empty()) throw InputError("at least one style image is required");
    const auto c = extractor.decompose(content, "content");
    GuidanceVectors g;
    g.content = c.content.values;
    if (styles.size() == 1 && !weights) {
        g.style = csadain(extractor.extract_style(styles[0], "style_0"), c.style, omega).values;
        return g;
    }
    if (!weights) throw InputError("mixing several styles needs blend weights");
    if (weights->size() != styles.size())
        throw InputError("got " + std::to_string(weights->size()) + " weights for " + std::to_string(styles.size()) +
                         " styles");
    std::vector<StyleFeature> features;
    for (std::size_t i = 0; i < styles.size(); ++i)
        features.push_back(extractor.extract_style(styles[i], "style_" + std::to_string(i)));
    g.style = blend_styles(features, *weights).values;
    return g;
}

std::string to_string(GenerationMode m) { return m == GenerationMode::transfer ? "transfer" : "t2i"; }

GenerationMode generation_mode_from_string(const std::string& s) {
    if (s == "transfer") return GenerationMode::transfer;
    if (s == "t2i") return GenerationMode::t2i;
    throw ConfigError("mode must be 'transfer' or 't2i'");
}

GenerationResult generate(const Runtime& rt, const ScAdapterModel& model, const NoiseSchedule& schedule,
                          GenerationMode mode, const GuidanceVectors& guidance, const std::string& prompt,
                          std::uint64_t seed) {
    if (mode == GenerationMode::t2i && guidance.content)
        throw InputError("text-driven mode takes no content guidance");
    if (mode == GenerationMode::transfer && !guidance.content) throw InputError("transfer mode needs a content feature");
    Conditioning cond;
    cond.prompt_tokens = rt.prompt_tokens(prompt);
    cond.content = guidance.content;
    cond.style = guidance.style;

    GenerationResult result;
    result.guidance = guidance;
    ForwardOptions options;
    options.audit = &result.audit;
    Rng rng(seed);
    const auto& u = model.unet_config();
    const LatentTensor noise = LatentTensor::gaussian(u.latent_channels, u.height, u.width, rng);
    SamplerTrace trace;
    const LatentTensor z = ddim_sample(model, noise, cond, rt.config.guidance, schedule, &rng, options, &trace);
    result.image = rt.codec->decode(z);

    json blocks = json::object();
    for (const auto* side : {&result.audit.down, &result.audit.up}) {
        json rows = json::array();
        for (const auto& kinds : *side) {
            json names = json::array();
            for (auto k : kinds) names.push_back(to_string(k));
            rows.push_back(names);
        }
        blocks[side == &result.audit.down ? "down" : "up"] = rows;
    }
    const bool content_seen = result.audit.any_block_saw(TokenKind::content);
    result.metadata = {
        {"format", kGenerationFormat},
        {"mode", to_string(mode)},
        {"seed", seed},
        {"prompt", prompt},
        {"guidance", guidance_to_json(rt.config.guidance)},
        {"schedule", rt.config.schedule},
        {"timesteps", trace.timesteps},
        {"guidance_vectors", guidance.to_json()},
        {"audit",
         {{"content_branch", mode == GenerationMode::t2i ? "removed" : "active"},
          {"content_tokens_in_forward", content_seen},
          {"content_reached_up_blocks", result.audit.content_reached_up()},
          {"style_reached_down_blocks", result.audit.style_reached_down()},
          {"blocks", blocks}}},
        {"config_hash", rt.config.hash()},
        {"checkpoints",
         {{"model", checkpoint_hash(rt.config.model_path())},
          {"projector", checkpoint_hash(rt.config.projector_path())},
          {"codec", rt.config.codec == "identity" ? std::string("identity") : checkpoint_hash(rt.config.codec_path())},
          {"backbone", rt.backbone->id()},
          {"text_encoder", rt.text ? rt.text->id() : std::string("none")}}},
        {"output_sha256", image_hash(result.image)},
        {"created_at", utc_now()}};
    if (mode == GenerationMode::t2i && content_seen)
        throw SamplingError("content tokens reached the forward pass in text-driven mode", 0);
    return result;
}

// ---------------------------------------------------------------- commands

DatasetManifest cmd_build_dataset(const RunConfig& config) {
    const auto dir = config.resolve(config.dataset_dir);
    DatasetConfig dc = config.dataset;
    const auto m = build_dataset(dc, dir);
    write_sidecar(config.manifest_path(), {{"command", "build-dataset"},
                                           {"seed", dc.seed},
                                           {"dataset", dc.to_json()},
                                           {"config_hash", config.hash()},
                                           {"images", m.images.size()},
                                           {"groups", m.groups.size()},
                                           {"triplets", m.triplets.size()},
                                           {"created_at", utc_now()}});
    return m;
}

namespace {

DatasetManifest load_valid_manifest(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path)) throw DataError("manifest not found: " + path.string());
    auto m = read_manifest(path);
    const auto violations = validate_manifest(m, path.parent_path());
    if (!violations.empty()) {
        std::string msg = "manifest " + path.string() + " has " + std::to_string(violations.size()) + " violation(s):";
        for (const auto& v : violations) msg += "\n  " + v.row + " [" + v.rule + "] " + v.message;
        throw DataError(msg);
    }
    return m;
}

}  // namespace

ContentTrainResult cmd_train_content_extractor(const RunConfig& config) {
    const Runtime rt = Runtime::create(config, false);
    const auto manifest = load_valid_manifest(config.manifest_path());
    const auto groups = load_content_groups(manifest, config.manifest_path().parent_path());
    if (groups.empty()) throw DataError("manifest has no content groups");
    auto result = train_content_extractor(*rt.backbone, groups, config.content_train);
    save_projector(result.weights, config.projector_path());
    std::string log;
    for (std::size_t i = 0; i < result.loss_log.size(); ++i)
        log += json{{"step", i}, {"loss", result.loss_log[i]}}.dump() + "\n";
    write_text_file(log, config.projector_path().string() + ".log.jsonl");
    write_sidecar(config.projector_path(), {{"command", "train-content-extractor"},
                                            {"seed", config.content_train.seed},
                                            {"config_hash", config.hash()},
                                            {"backbone", rt.backbone->id()},
                                            {"manifest", checkpoint_hash(config.manifest_path())},
                                            {"groups", groups.size()},
                                            {"initial_loss", result.loss_log.front()},
                                            {"final_loss", result.loss_log.back()},
                                            {"created_at", utc_now()}});
    return result;
}

AdapterTrainSummary cmd_train_adapter(const RunConfig& config) {
    const auto manifest = load_valid_manifest(config.manifest_path());
    const auto data_dir = config.manifest_path().parent_path();

    if (config.codec == "toy_ae" && !std::filesystem::exists(config.codec_path())) {
        std::vector<Image> images;
        for (const auto& r : manifest.images) images.push_back(read_ppm(data_dir / r.path));
        ToyAutoencoder ae(config.seed);
        ae.train(images, config.codec_train_steps, 1e-2, config.seed);
        ae.save(config.codec_path());
    }
    const Runtime rt = Runtime::create(config);
    const auto extractor = rt.extractor();
    const NoiseSchedule schedule = rt.schedule();
    AdapterTrainSummary summary;

    // Stage 1: base denoiser (frozen afterwards).
    std::optional<ScAdapterModel> model;
    if (std::filesystem::exists(config.base_model_path())) {
        model.emplace(ScAdapterModel::load(config.base_model_path()).model);
    } else {
        model.emplace(config.unet, config.adapter, config.seed);
        std::vector<TrainingItem> corpus;
        for (int i = 0; i < config.base_corpus_size; ++i) {
            const auto scene = generate_scene(config.seed * 1000003ull + 7919ull * static_cast<std::uint64_t>(i) + 1,
                                              rt.pixel_width());
            corpus.push_back(make_training_item(rt, extractor, scene.image, "base_" + std::to_string(i), scene.caption));
        }
        std::ofstream log(config.base_model_path().string() + ".log.jsonl");
        summary.base_log = pretrain_base(*model, corpus, config.base_train, schedule, &log);
        model->save(config.base_model_path(), schedule);
    }

    // Stage 2: adapter components only.
    model->init_style_projections_from_prompt();
    std::vector<TrainingItem> items;
    for (const auto& g : manifest.groups) {
        const auto* content = manifest.find(g.group_id);
        const std::string caption = content ? content->caption : std::string();
        for (const auto& id : g.variant_image_ids)
            items.push_back(make_training_item(rt, extractor, load_manifest_image(manifest, id, data_dir), id, caption));
    }
    std::vector<TripletItem> triplets;
    for (const auto& t : manifest.triplets)
        triplets.push_back(make_triplet_item(rt, extractor, t, load_manifest_image(manifest, t.content_image_id, data_dir),
                                             load_manifest_image(manifest, t.style_image_id, data_dir),
                                             load_manifest_image(manifest, t.stylized_image_id, data_dir),
                                             manifest.find(t.content_image_id)->caption));
    const auto before = snapshot(model->parameters());
    Trainer trainer(*model, std::move(items), std::move(triplets), config.adapter_train, schedule);
    {
        std::ofstream log(config.model_path().string() + ".log.jsonl");
        summary.adapter_log = trainer.run(config.adapter_train.steps, &log);
    }
    for (const auto& name : changed_parameters(model->parameters(), before)) {
        for (const auto& p : model->parameters().all())
            if (p.name == name && !adapter_components().count(p.component))
                summary.changed_outside_adapter.push_back(name);
    }
    if (!summary.changed_outside_adapter.empty())
        throw TrainingError("frozen parameter changed during adapter training: " + summary.changed_outside_adapter.front(),
                            trainer.steps_taken());
    model->save(config.model_path(), schedule);
    write_sidecar(config.model_path(), {{"command", "train-adapter"},
                                        {"seed", config.adapter_train.seed},
                                        {"config_hash", config.hash()},
                                        {"train_config", config.adapter_train.to_json()},
                                        {"base_model", checkpoint_hash(config.base_model_path())},
                                        {"projector", checkpoint_hash(config.projector_path())},
                                        {"manifest", checkpoint_hash(config.manifest_path())},
                                        {"steps", trainer.steps_taken()},
                                        {"frozen_parameters_unchanged", true},
                                        {"created_at", utc_now()}});
    return summary;
}

namespace {

json input_record(const std::filesystem::path& path, const Image& image) {
    return {{"path", path.string()}, {"sha256", image_hash(image)}};
}

GenerationResult run_transfer(const RunConfig& config, const std::filesystem::path& content_path,
                              const std::vector<std::filesystem::path>& style_paths,
                              const std::optional<BlendWeights>& weights, double omega) {
    const Runtime rt = Runtime::create(config);
    const auto extractor = rt.extractor();
    const auto loaded = load_model_checkpoint(config.model_path());
    const Image content = read_input_image(content_path);
    std::vector<Image> styles;
    for (const auto& p : style_paths) styles.push_back(read_input_image(p));
    const auto guidance = transfer_guidance(extractor, content, styles, weights, omega);
    auto result = generate(rt, loaded.model, loaded.schedule, GenerationMode::transfer, guidance, config.prompt,
                           config.seed);
    json style_inputs = json::array();
    for (std::size_t i = 0; i < styles.size(); ++i) style_inputs.push_back(input_record(style_paths[i], styles[i]));
    result.metadata["inputs"] = {{"content", input_record(content_path, content)}, {"styles", style_inputs}};
    if (weights)
        result.metadata["weights"] = std::vector<double>(weights->values().begin(), weights->values().end());
    else
        result.metadata["omega"] = omega;
    return result;
}

}  // namespace

GenerationResult cmd_transfer(const RunConfig& config, const std::filesystem::path& content_path,
                              const std::vector<std::filesystem::path>& style_paths,
                              const std::filesystem::path& out_path) {
    std::optional<BlendWeights> weights;
    if (!config.weights.empty()) weights = BlendWeights(config.weights);
    auto result = run_transfer(config, content_path, style_paths, weights, config.omega);
    result.metadata["command"] = "transfer";
    write_ppm(result.image, out_path);
    write_sidecar(out_path, result.metadata);
    return result;
}

GenerationResult cmd_mix_styles(const RunConfig& config, const std::filesystem::path& content_path,
                                const std::vector<std::filesystem::path>& style_paths,
                                const std::filesystem::path& out_path) {
    if (style_paths.size() < 2) throw InputError("mix-styles needs at least two style images");
    if (config.weights.empty()) throw InputError("mix-styles needs --weights");
    auto result = run_transfer(config, content_path, style_paths, BlendWeights(config.weights), config.omega);
    result.metadata["command"] = "mix-styles";
    write_ppm(result.image, out_path);
    write_sidecar(out_path, result.metadata);
    return result;
}

std::vector<GenerationResult> cmd_sweep_omega(const RunConfig& config, const std::filesystem::path& content_path,
                                              const std::filesystem::path& style_path,
                                              const std::filesystem::path& out_dir) {
    std::vector<GenerationResult> results;
    std::vector<Image> tiles;
    json table = json::array();
    for (double omega : config.sweep_omegas) {
        auto r = run_transfer(config, content_path, {style_path}, std::nullopt, omega);
        char name[48];
        std::snprintf(name, sizeof name, "omega_%.4f.ppm", omega);
        r.metadata["command"] = "sweep-omega";
        write_ppm(r.image, out_dir / name);
        write_sidecar(out_dir / name, r.metadata);
        table.push_back({{"omega", omega},
                         {"output", name},
                         {"output_sha256", r.metadata["output_sha256"]},
                         {"style_guidance", r.metadata["guidance_vectors"]["style"]}});
        tiles.push_back(r.image);
        results.push_back(std::move(r));
    }
    const Image grid = tile_grid(tiles, static_cast<int>(tiles.size()));
    write_ppm(grid, out_dir / "grid.ppm");
    write_sidecar(out_dir / "grid.ppm", {{"command", "sweep-omega"},
                                         {"seed", config.seed},
                                         {"config_hash", config.hash()},
                                         {"checkpoints", results.front().metadata["checkpoints"]},
                                         {"omegas", table},
                                         {"output_sha256", image_hash(grid)},
                                         {"created_at", utc_now()}});
    return results;
}

GenerationResult cmd_t2i_stylize(const RunConfig& config, const std::string& prompt,
                                 const std::filesystem::path& style_path, const std::filesystem::path& out_path) {
    const Runtime rt = Runtime::create(config);
    const auto extractor = rt.extractor();
    const auto loaded = load_model_checkpoint(config.model_path());
    const Image style = read_input_image(style_path);
    GuidanceVectors guidance;
    guidance.style = extractor.extract_style(style, "style").values;
    auto result = generate(rt, loaded.model, loaded.schedule, GenerationMode::t2i, guidance, prompt, config.seed);
    result.metadata["command"] = "t2i";
    result.metadata["inputs"] = {{"style", input_record(style_path, style)}};

    MetricReport report;
    report.backbone_id = rt.backbone->id();
    report.mean_ss = style_similarity(extractor, style, result.image);
    if (rt.text) report.mean_ta = text_alignment(rt.text.get(), *rt.backbone, prompt, result.image);
    result.metadata["metrics"] = {{"ss", *report.mean_ss},
                                  {"ta", report.mean_ta ? json(*report.mean_ta) : json(nullptr)}};
    write_ppm(result.image, out_path);
    write_sidecar(out_path, result.metadata);
    write_json_file(report.to_json(), out_path.string() + ".report.json");
    return result;
}

MetricReport cmd_evaluate(const RunConfig& config, const std::filesystem::path& manifest_path,
                          const std::filesystem::path& report_path) {
    const Runtime rt = Runtime::create(config, false);
    const auto extractor = rt.extractor();
    const auto manifest = load_valid_manifest(manifest_path);
    if (manifest.triplets.empty()) throw DataError("manifest has no (content, style, stylized) triplets to evaluate");
    const auto dir = manifest_path.parent_path();
    std::vector<EvalTriple> triples;
    for (const auto& t : manifest.triplets) {
        EvalTriple e;
        e.content_id = t.content_image_id;
        e.style_id = t.style_image_id;
        e.stylized_id = t.stylized_image_id;
        e.content = load_manifest_image(manifest, t.content_image_id, dir);
        e.style = load_manifest_image(manifest, t.style_image_id, dir);
        e.stylized = load_manifest_image(manifest, t.stylized_image_id, dir);
        e.prompt = manifest.find(t.content_image_id)->caption;
        triples.push_back(std::move(e));
    }
    MetricReport report = evaluate_triples(extractor, triples, rt.text.get());

    // Clustering quality of stylized outputs' style features by style label.
    LabeledEmbeddingSet set;
    set.vectors.resize(static_cast<Eigen::Index>(triples.size()), rt.backbone->embed_dim());
    for (std::size_t i = 0; i < triples.size(); ++i) {
        set.vectors.row(static_cast<Eigen::Index>(i)) = extractor.extract_style(triples[i].stylized).values.transpose();
        set.labels.push_back(manifest.triplets[i].style_label);
    }
    try {
        report.silhouette = silhouette(set);
        report.calinski_harabasz = calinski_harabasz(set);
    } catch (const MetricError&) {
        // Reported as absent.
    }
    write_json_file(report.to_json(), report_path);
    write_sidecar(report_path, {{"command", "evaluate"},
                                {"config_hash", config.hash()},
                                {"manifest", checkpoint_hash(manifest_path)},
                                {"projector", checkpoint_hash(config.projector_path())},
                                {"backbone", rt.backbone->id()},
                                {"created_at", utc_now()}});
    return report;
}

}  // namespace scadapter
