#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "scadapter/autodiff.hpp"
#include "scadapter/image.hpp"
#include "scadapter/kvs_attention.hpp"
#include "scadapter/parameters.hpp"
#include "scadapter/rng.hpp"

namespace scadapter {

// ---------------------------------------------------------------- schedule

class NoiseSchedule {
public:
    // DDPM linear betas, alpha_bar_t = prod_{s<=t} (1 - beta_s).
    static NoiseSchedule linear_beta(int steps = 1000, double beta_start = 1e-4, double beta_end = 0.02);
    // Stable-Diffusion style: betas linear in sqrt space.
    static NoiseSchedule scaled_linear(int steps = 1000, double beta_start = 0.00085, double beta_end = 0.012);
    static NoiseSchedule from_alphas_cumprod(std::vector<double> alphas_cumprod);

    int steps() const noexcept { return static_cast<int>(alphas_cumprod_.size()); }
    double alpha_bar(int t) const;
    const std::vector<double>& alphas_cumprod() const noexcept { return alphas_cumprod_; }

    json to_json() const;
    static NoiseSchedule from_json(const json& j);

private:
    std::vector<double> alphas_cumprod_;
    std::string kind_ = "custom";
    double beta_start_ = 0.0, beta_end_ = 0.0;
};

// ---------------------------------------------------------------- latents

struct LatentTensor {
    int channels = 0;
    int height = 0;
    int width = 0;
    Eigen::MatrixXd values;  // (height*width) x channels

    static LatentTensor zeros(int channels, int height, int width);
    static LatentTensor gaussian(int channels, int height, int width, Rng& rng);
    bool same_shape(const LatentTensor& o) const {
        return channels == o.channels && height == o.height && width == o.width;
    }
    bool all_finite() const { return values.allFinite(); }
};

LatentTensor add_noise(const LatentTensor& z0, int t, const LatentTensor& noise, const NoiseSchedule& schedule);

LatentTensor cfg_combine(const LatentTensor& uncond, const LatentTensor& cond, double scale);

// Pixel <-> latent mapping. Identity mode stores pixel/255 per channel; the toy
// autoencoder halves the spatial size into 4 latent channels.
class LatentCodec {
public:
    virtual ~LatentCodec() = default;
    virtual std::string id() const = 0;
    virtual int spatial_factor() const = 0;
    virtual int latent_channels() const = 0;
    virtual LatentTensor encode(const Image& image) const = 0;
    virtual Image decode(const LatentTensor& latent) const = 0;
};

class IdentityCodec final : public LatentCodec {
public:
    std::string id() const override { return "identity"; }
    int spatial_factor() const override { return 1; }
    int latent_channels() const override { return 3; }
    LatentTensor encode(const Image& image) const override;
    Image decode(const LatentTensor& latent) const override;
};

class ToyAutoencoder final : public LatentCodec {
public:
    static constexpr int kLatentChannels = 4;
    static constexpr int kHidden = 16;

    explicit ToyAutoencoder(std::uint64_t seed = 0);

    std::string id() const override { return "toy-ae/v1"; }
    int spatial_factor() const override { return 2; }
    int latent_channels() const override { return kLatentChannels; }
    LatentTensor encode(const Image& image) const override;
    Image decode(const LatentTensor& latent) const override;

    // Trains on the given images with Adam and records the mean absolute
    // round-trip error (pixel scale [0, 1]) measured on them afterwards.
    void train(const std::vector<Image>& images, long steps, double learning_rate, std::uint64_t seed);
    double recorded_error_bound() const noexcept { return error_bound_; }
    double mean_abs_roundtrip_error(const std::vector<Image>& images) const;

    void save(const std::filesystem::path& path) const;
    static ToyAutoencoder load(const std::filesystem::path& path);

    ParameterStore& parameters() noexcept { return params_; }

private:
    ad::Var encode_graph(const ad::Var& pixels, int height, int width) const;
    ad::Var decode_graph(const ad::Var& latent, int height, int width) const;

    ParameterStore params_;
    double error_bound_ = 1.0;
};

// ---------------------------------------------------------------- UNet

struct UNetConfig {
    int latent_channels = 3;
    int height = 16;
    int width = 16;
    std::vector<int> widths{16, 32};  // one entry per resolution level
    int d_token = 32;                 // prompt/content/style token width
    int time_dim = 32;
    int heads = 1;
    int position_channels = 4;  // fixed sin/cos coordinate channels appended to the input

    int levels() const { return static_cast<int>(widths.size()); }
    void validate() const;
    json to_json() const;
    static UNetConfig from_json(const json& j);
};

struct AdapterConfig {
    int d_embed = 64;
    int content_tokens = 4;
    int style_tokens = 4;
    int tokenizer_hidden = 64;
    Nonlinearity nonlinearity = Nonlinearity::silu;

    void validate() const;
    json to_json() const;
    static AdapterConfig from_json(const json& j);
};

// A token stream entering attention, tagged with what it carries.
struct TokenStream {
    ad::Var tokens;
    TokenKind kind;
};

struct ConditioningTokens {
    TokenStream prompt;
    TokenStream content;
    TokenStream style;
};

// Which stream kinds each attention block read during one forward pass.
struct InjectionAudit {
    std::vector<std::set<TokenKind>> down;
    std::vector<std::set<TokenKind>> up;

    bool content_reached_up() const;
    bool style_reached_down() const;
    bool any_block_saw(TokenKind kind) const;
};

// External structural-control slot (e.g. a ControlNet stand-in). Called with the
// level index and skip activation; may return a residual of the same shape or null.
using ControlHook = std::function<ad::Var(int level, const ad::Var& skip)>;

struct ForwardOptions {
    bool skip_attention = false;  // convolution-only path
    bool prompt_only = false;     // base-model pretraining: attention sees the prompt stream alone
    ControlHook control_hook;
    InjectionAudit* audit = nullptr;
};

// Conditioning supplied by callers in feature space; tokenization happens inside
// the model so tokenizer weights take part in training.
struct Conditioning {
    Eigen::MatrixXd prompt_tokens;               // from the frozen text encoder
    std::optional<Eigen::VectorXd> content;      // C(I); nullopt selects the null content embedding
    std::optional<Eigen::VectorXd> style;        // style guidance vector; nullopt selects the null style embedding
    bool drop_prompt = false;                    // replace the prompt by the null prompt embedding
};

class ScAdapterModel {
public:
    ScAdapterModel(UNetConfig unet, AdapterConfig adapter, std::uint64_t seed);

    const UNetConfig& unet_config() const noexcept { return unet_; }
    const AdapterConfig& adapter_config() const noexcept { return adapter_; }
    ParameterStore& parameters() noexcept { return params_; }
    const ParameterStore& parameters() const noexcept { return params_; }

    ConditioningTokens tokens(const Conditioning& cond) const;
    ConditioningTokens null_tokens(const Eigen::MatrixXd& prompt_tokens, bool drop_prompt = true) const;

    // z_t: (H*W) x C. Returns the predicted noise with the same shape.
    ad::Var predict_noise(const ad::Var& z_t, int t, const ConditioningTokens& cond,
                          const ForwardOptions& options = {}) const;
    LatentTensor predict_noise(const LatentTensor& z_t, int t, const Conditioning& cond,
                               const ForwardOptions& options = {}) const;

    // Seeds W_K_S / W_V_S of every KVS block from the block's prompt projections.
    void init_style_projections_from_prompt();

    void save(const std::filesystem::path& path, const NoiseSchedule& schedule) const;
    struct Loaded;
    static Loaded load(const std::filesystem::path& path);

private:
    ScAdapterModel(UNetConfig unet, AdapterConfig adapter, ParameterStore params);
    void build(std::uint64_t seed);
    ad::Var conv(const std::string& name, const ad::Var& x, int height, int width) const;
    ad::Var res_block(const std::string& name, const ad::Var& x, const ad::Var& temb, int height, int width) const;
    ad::Var time_embedding(int t) const;
    AttentionVars attention_vars(const std::string& name, bool with_style) const;
    TokenizerVars tokenizer_vars(const std::string& name, int tokens) const;

    UNetConfig unet_;
    AdapterConfig adapter_;
    ParameterStore params_;
    Eigen::MatrixXd position_;  // (H*W) x position_channels
};

struct ScAdapterModel::Loaded {
    ScAdapterModel model;
    NoiseSchedule schedule;
};

// Fixed sin/cos coordinate channels for an H x W grid.
Eigen::MatrixXd position_channels(int height, int width, int channels);

// ---------------------------------------------------------------- sampling

struct GuidanceConfig {
    double cfg_scale = 10.0;
    int steps = 50;
    double eta = 0.0;
    // Clamp each x0 estimate to [clip_lo, clip_hi] and re-derive eps from it
    // (pixel-space latents only).
    bool clip_x0 = false;
    double clip_lo = 0.0;
    double clip_hi = 1.0;

    void validate(const NoiseSchedule& schedule) const;
};

// Descending timesteps, evenly spaced and ending near 0 ("trailing" spacing):
// steps = 1 yields {T - 1}.
std::vector<int> ddim_timesteps(int total_steps, int sample_steps);

struct SamplerTrace {
    std::vector<int> timesteps;
    std::vector<double> latent_rms;  // after each step
};

// DDIM from pure noise. Uncond branch nulls prompt, content and style jointly.
// eta > 0 draws fresh noise from rng (eta = 0 never touches it).
LatentTensor ddim_sample(const ScAdapterModel& model, const LatentTensor& initial_noise, const Conditioning& cond,
                         const GuidanceConfig& guidance, const NoiseSchedule& schedule, Rng* rng = nullptr,
                         const ForwardOptions& options = {}, SamplerTrace* trace = nullptr);

// x0 estimate implied by a noise prediction at step t.
LatentTensor predict_x0(const LatentTensor& z_t, const LatentTensor& eps, int t, const NoiseSchedule& schedule);

}  // namespace scadapter
