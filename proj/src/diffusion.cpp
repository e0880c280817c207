#include "scadapter/diffusion.hpp"

#include <cmath>
#include <numbers>

#include "scadapter/errors.hpp"
#include "scadapter/optim.hpp"

namespace scadapter {

// ---------------------------------------------------------------- schedule

NoiseSchedule NoiseSchedule::linear_beta(int steps, double beta_start, double beta_end) {
    if (steps < 1) throw ConfigError("noise schedule needs at least one step");
    std::vector<double> ac(steps);
    double prod = 1.0;
    for (int t = 0; t < steps; ++t) {
        const double beta = steps == 1 ? beta_start : beta_start + (beta_end - beta_start) * t / (steps - 1);
        prod *= 1.0 - beta;
        ac[t] = prod;
    }
    auto s = from_alphas_cumprod(std::move(ac));
    s.kind_ = "linear_beta";
    s.beta_start_ = beta_start;
    s.beta_end_ = beta_end;
    return s;
}

NoiseSchedule NoiseSchedule::scaled_linear(int steps, double beta_start, double beta_end) {
    if (steps < 1) throw ConfigError("noise schedule needs at least one step");
    std::vector<double> ac(steps);
    double prod = 1.0;
    const double a = std::sqrt(beta_start), b = std::sqrt(beta_end);
    for (int t = 0; t < steps; ++t) {
        const double r = steps == 1 ? a : a + (b - a) * t / (steps - 1);
        prod *= 1.0 - r * r;
        ac[t] = prod;
    }
    auto s = from_alphas_cumprod(std::move(ac));
    s.kind_ = "scaled_linear";
    s.beta_start_ = beta_start;
    s.beta_end_ = beta_end;
    return s;
}

NoiseSchedule NoiseSchedule::from_alphas_cumprod(std::vector<double> ac) {
    if (ac.empty()) throw ConfigError("noise schedule is empty");
    for (std::size_t i = 0; i < ac.size(); ++i) {
        if (!(ac[i] > 0.0 && ac[i] <= 1.0)) throw ConfigError("alpha_bar values must lie in (0, 1]");
        if (i > 0 && !(ac[i] < ac[i - 1])) throw ConfigError("alpha_bar must be strictly decreasing");
    }
    NoiseSchedule s;
    s.alphas_cumprod_ = std::move(ac);
    return s;
}

double NoiseSchedule::alpha_bar(int t) const {
    if (t < 0 || t >= steps())
        throw InputError("timestep " + std::to_string(t) + " outside [0, " + std::to_string(steps()) + ")");
    return alphas_cumprod_[t];
}

json NoiseSchedule::to_json() const {
    json j = {{"kind", kind_}, {"steps", steps()}};
    if (kind_ == "custom")
        j["alphas_cumprod"] = alphas_cumprod_;
    else
        j["beta_start"] = beta_start_, j["beta_end"] = beta_end_;
    return j;
}

NoiseSchedule NoiseSchedule::from_json(const json& j) {
    try {
        const auto kind = j.at("kind").get<std::string>();
        if (kind == "linear_beta")
            return linear_beta(j.at("steps"), j.at("beta_start"), j.at("beta_end"));
        if (kind == "scaled_linear")
            return scaled_linear(j.at("steps"), j.at("beta_start"), j.at("beta_end"));
        if (kind == "custom") return from_alphas_cumprod(j.at("alphas_cumprod").get<std::vector<double>>());
        throw FormatError("unknown schedule kind '" + kind + "'");
    } catch (const json::exception& e) {
        throw FormatError(std::string("malformed schedule: ") + e.what());
    }
}

// ---------------------------------------------------------------- latents

LatentTensor LatentTensor::zeros(int channels, int height, int width) {
    return {channels, height, width, Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(height) * width, channels)};
}

LatentTensor LatentTensor::gaussian(int channels, int height, int width, Rng& rng) {
    return {channels, height, width, rng.normal_matrix(static_cast<Eigen::Index>(height) * width, channels)};
}

LatentTensor add_noise(const LatentTensor& z0, int t, const LatentTensor& noise, const NoiseSchedule& schedule) {
    if (!z0.same_shape(noise)) throw InputError("add_noise: noise shape differs from the latent");
    const double a = schedule.alpha_bar(t);
    LatentTensor out = z0;
    out.values = std::sqrt(a) * z0.values + std::sqrt(1.0 - a) * noise.values;
    return out;
}

LatentTensor cfg_combine(const LatentTensor& uncond, const LatentTensor& cond, double scale) {
    if (!uncond.same_shape(cond)) throw InputError("cfg_combine: shapes differ");
    LatentTensor out = uncond;
    out.values = uncond.values + scale * (cond.values - uncond.values);
    return out;
}

LatentTensor IdentityCodec::encode(const Image& image) const {
    if (image.empty()) throw InputError("cannot encode an empty image");
    return {3, image.height(), image.width(), image.to_planes().transpose()};
}

Image IdentityCodec::decode(const LatentTensor& latent) const {
    if (latent.channels != 3) throw InputError("identity codec decodes 3-channel latents only");
    return Image::from_planes(latent.values.transpose(), latent.width, latent.height);
}

namespace {

ad::Var conv3x3(const ad::Var& x, const ad::Var& w, const ad::Var& b, int height, int width) {
    return ad::add_row(ad::matmul(ad::im2col3x3(x, height, width), w), b);
}

Eigen::MatrixXd conv_init(int cin, int cout, Rng& rng, double gain = 1.0) {
    return rng.normal_matrix(9 * cin, cout, gain / std::sqrt(9.0 * cin));
}

}  // namespace

ToyAutoencoder::ToyAutoencoder(std::uint64_t seed) {
    Rng rng(seed);
    params_.add("enc.conv1.w", Component::base, conv_init(3, kHidden, rng));
    params_.add("enc.conv1.b", Component::base, Eigen::MatrixXd::Zero(1, kHidden));
    params_.add("enc.conv2.w", Component::base, conv_init(kHidden, kLatentChannels, rng));
    params_.add("enc.conv2.b", Component::base, Eigen::MatrixXd::Zero(1, kLatentChannels));
    params_.add("dec.conv1.w", Component::base, conv_init(kLatentChannels, kHidden, rng));
    params_.add("dec.conv1.b", Component::base, Eigen::MatrixXd::Zero(1, kHidden));
    params_.add("dec.conv2.w", Component::base, conv_init(kHidden, kHidden, rng));
    params_.add("dec.conv2.b", Component::base, Eigen::MatrixXd::Zero(1, kHidden));
    params_.add("dec.conv3.w", Component::base, conv_init(kHidden, 3, rng));
    params_.add("dec.conv3.b", Component::base, Eigen::MatrixXd::Zero(1, 3));
}

ad::Var ToyAutoencoder::encode_graph(const ad::Var& pixels, int height, int width) const {
    auto h = ad::silu(conv3x3(pixels, params_.get("enc.conv1.w"), params_.get("enc.conv1.b"), height, width));
    h = ad::avgpool2(h, height, width);
    return conv3x3(h, params_.get("enc.conv2.w"), params_.get("enc.conv2.b"), height / 2, width / 2);
}

ad::Var ToyAutoencoder::decode_graph(const ad::Var& latent, int height, int width) const {
    auto h = ad::upsample2(latent, height, width);
    const int H = height * 2, W = width * 2;
    h = ad::silu(conv3x3(h, params_.get("dec.conv1.w"), params_.get("dec.conv1.b"), H, W));
    h = ad::silu(conv3x3(h, params_.get("dec.conv2.w"), params_.get("dec.conv2.b"), H, W));
    return conv3x3(h, params_.get("dec.conv3.w"), params_.get("dec.conv3.b"), H, W);
}

LatentTensor ToyAutoencoder::encode(const Image& image) const {
    if (image.empty() || image.width() % 2 || image.height() % 2)
        throw InputError("toy autoencoder needs even, nonzero image dimensions");
    auto z = encode_graph(ad::constant(image.to_planes().transpose()), image.height(), image.width());
    return {kLatentChannels, image.height() / 2, image.width() / 2, z->value};
}

Image ToyAutoencoder::decode(const LatentTensor& latent) const {
    if (latent.channels != kLatentChannels) throw InputError("toy autoencoder expects 4 latent channels");
    auto x = decode_graph(ad::constant(latent.values), latent.height, latent.width);
    return Image::from_planes(x->value.transpose(), latent.width * 2, latent.height * 2);
}

double ToyAutoencoder::mean_abs_roundtrip_error(const std::vector<Image>& images) const {
    if (images.empty()) throw InputError("no images to measure");
    double total = 0.0;
    for (const auto& img : images) {
        const Image back = decode(encode(img));
        double sum = 0.0;
        for (std::size_t i = 0; i < img.bytes().size(); ++i)
            sum += std::abs(static_cast<double>(img.bytes()[i]) - back.bytes()[i]);
        total += sum / (255.0 * static_cast<double>(img.bytes().size()));
    }
    return total / static_cast<double>(images.size());
}

void ToyAutoencoder::train(const std::vector<Image>& images, long steps, double learning_rate, std::uint64_t seed) {
    if (images.empty()) throw InputError("toy autoencoder training needs images");
    Rng rng(seed);
    params_.set_trainable({Component::base});
    Optimizer opt(OptimizerKind::adam, learning_rate);
    for (long step = 0; step < steps; ++step) {
        const Image& img = images[rng.below(images.size())];
        const Eigen::MatrixXd target = img.to_planes().transpose();
        params_.zero_grad();
        auto z = encode_graph(ad::constant(target), img.height(), img.width());
        auto recon = decode_graph(z, img.height() / 2, img.width() / 2);
        auto loss = ad::mse(recon, target);
        if (!std::isfinite(ad::scalar(loss))) throw TrainingError("autoencoder loss diverged", step);
        ad::backward(loss);
        opt.step(params_);
    }
    params_.set_trainable({});
    error_bound_ = mean_abs_roundtrip_error(images);
}

void ToyAutoencoder::save(const std::filesystem::path& path) const {
    write_json_file({{"format", "scadapter.toy_ae/1"}, {"error_bound", error_bound_}, {"parameters", params_.to_json()}},
                    path, -1);
}

ToyAutoencoder ToyAutoencoder::load(const std::filesystem::path& path) {
    const json doc = read_json_file(path);
    ToyAutoencoder ae(0);
    try {
        if (doc.at("format").get<std::string>() != "scadapter.toy_ae/1")
            throw FormatError(path.string() + ": not a toy autoencoder checkpoint");
        ae.error_bound_ = doc.at("error_bound").get<double>();
        auto loaded = ParameterStore::from_json(doc.at("parameters"));
        for (auto& p : ae.params_.all()) {
            const auto& src = loaded.get(p.name)->value;
            if (src.rows() != p.var->value.rows() || src.cols() != p.var->value.cols())
                throw FormatError(path.string() + ": parameter " + p.name + " has the wrong shape");
            p.var->value = src;
        }
    } catch (const json::exception& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
    return ae;
}

// ---------------------------------------------------------------- configs

void UNetConfig::validate() const {
    if (latent_channels < 1 || height < 1 || width < 1) throw ConfigError("UNet latent shape must be positive");
    if (widths.empty()) throw ConfigError("UNet needs at least one resolution level");
    for (int w : widths)
        if (w < 1) throw ConfigError("UNet channel widths must be positive");
    const int factor = 1 << (levels() - 1);
    if (height % factor || width % factor)
        throw ConfigError("UNet latent size must be divisible by 2^(levels-1)");
    if (d_token < 1 || time_dim < 2 || time_dim % 2) throw ConfigError("token and time dims must be positive (time even)");
    if (heads < 1) throw ConfigError("attention heads must be >= 1");
    for (int w : widths)
        if (w % heads) throw ConfigError("every level width must be divisible by the head count");
    if (position_channels < 0 || position_channels % 4) throw ConfigError("position channels must be a multiple of 4");
}

json UNetConfig::to_json() const {
    return {{"latent_channels", latent_channels}, {"height", height},     {"width", width},
            {"widths", widths},                   {"d_token", d_token},   {"time_dim", time_dim},
            {"heads", heads},                     {"position_channels", position_channels},
            {"placement", {{"down", "prompt+content"}, {"up", "prompt+style (kvs)"}}}};
}

UNetConfig UNetConfig::from_json(const json& j) {
    UNetConfig c;
    try {
        c.latent_channels = j.at("latent_channels");
        c.height = j.at("height");
        c.width = j.at("width");
        c.widths = j.at("widths").get<std::vector<int>>();
        c.d_token = j.at("d_token");
        c.time_dim = j.at("time_dim");
        c.heads = j.at("heads");
        c.position_channels = j.at("position_channels");
    } catch (const json::exception& e) {
        throw FormatError(std::string("malformed UNet config: ") + e.what());
    }
    c.validate();
    return c;
}

void AdapterConfig::validate() const {
    if (d_embed < 1 || content_tokens < 1 || style_tokens < 1 || tokenizer_hidden < 1)
        throw ConfigError("adapter dimensions must be positive");
}

json AdapterConfig::to_json() const {
    return {{"d_embed", d_embed},
            {"content_tokens", content_tokens},
            {"style_tokens", style_tokens},
            {"tokenizer_hidden", tokenizer_hidden},
            {"nonlinearity", to_string(nonlinearity)}};
}

AdapterConfig AdapterConfig::from_json(const json& j) {
    AdapterConfig c;
    try {
        c.d_embed = j.at("d_embed");
        c.content_tokens = j.at("content_tokens");
        c.style_tokens = j.at("style_tokens");
        c.tokenizer_hidden = j.at("tokenizer_hidden");
        c.nonlinearity = nonlinearity_from_string(j.at("nonlinearity").get<std::string>());
    } catch (const json::exception& e) {
        throw FormatError(std::string("malformed adapter config: ") + e.what());
    }
    c.validate();
    return c;
}

// ---------------------------------------------------------------- model

bool InjectionAudit::content_reached_up() const {
    for (const auto& s : up)
        for (auto k : s)
            if (is_content_stream(k)) return true;
    return false;
}

bool InjectionAudit::style_reached_down() const {
    for (const auto& s : down)
        for (auto k : s)
            if (is_style_stream(k)) return true;
    return false;
}

bool InjectionAudit::any_block_saw(TokenKind kind) const {
    for (const auto* side : {&down, &up})
        for (const auto& s : *side)
            if (s.count(kind)) return true;
    return false;
}

Eigen::MatrixXd position_channels(int height, int width, int channels) {
    Eigen::MatrixXd pos(static_cast<Eigen::Index>(height) * width, channels);
    for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x)
            for (int k = 0; k < channels / 4; ++k) {
                const double f = std::ldexp(2.0 * std::numbers::pi, k);
                const double u = (x + 0.5) / width, v = (y + 0.5) / height;
                const Eigen::Index r = y * width + x;
                pos(r, 4 * k + 0) = std::sin(f * u);
                pos(r, 4 * k + 1) = std::cos(f * u);
                pos(r, 4 * k + 2) = std::sin(f * v);
                pos(r, 4 * k + 3) = std::cos(f * v);
            }
    return pos;
}

ScAdapterModel::ScAdapterModel(UNetConfig unet, AdapterConfig adapter, std::uint64_t seed)
    : unet_(std::move(unet)), adapter_(adapter) {
    unet_.validate();
    adapter_.validate();
    build(seed);
    position_ = position_channels(unet_.height, unet_.width, unet_.position_channels);
}

ScAdapterModel::ScAdapterModel(UNetConfig unet, AdapterConfig adapter, ParameterStore params)
    : unet_(std::move(unet)), adapter_(adapter), params_(std::move(params)) {
    unet_.validate();
    adapter_.validate();
    // Cross-check the loaded store against a freshly built layout.
    ScAdapterModel reference(unet_, adapter_, 0);
    const auto& ref = reference.params_.all();
    if (ref.size() != params_.all().size()) throw FormatError("checkpoint parameter count does not match its config");
    for (std::size_t i = 0; i < ref.size(); ++i) {
        const auto& a = ref[i];
        const auto& b = params_.all()[i];
        if (a.name != b.name || a.component != b.component || a.var->value.rows() != b.var->value.rows() ||
            a.var->value.cols() != b.var->value.cols())
            throw FormatError("checkpoint parameter '" + b.name + "' does not match the configured architecture");
    }
    position_ = position_channels(unet_.height, unet_.width, unet_.position_channels);
}

void ScAdapterModel::build(std::uint64_t seed) {
    Rng rng(seed);
    const int L = unet_.levels();
    const int td = unet_.time_dim;
    const int dt = unet_.d_token;
    auto lin = [&](const std::string& name, int in, int out, Component c) {
        params_.add(name + ".w", c, rng.normal_matrix(in, out, 1.0 / std::sqrt(static_cast<double>(in))));
        params_.add(name + ".b", c, Eigen::MatrixXd::Zero(1, out));
    };
    auto conv = [&](const std::string& name, int in, int out, double gain = 1.0) {
        params_.add(name + ".w", Component::base, conv_init(in, out, rng, gain));
        params_.add(name + ".b", Component::base, Eigen::MatrixXd::Zero(1, out));
    };
    auto res = [&](const std::string& name, int w) {
        conv(name + ".conv1", w, w);
        lin(name + ".temb", td, w, Component::base);
        conv(name + ".conv2", w, w, 0.5);
    };
    auto attn = [&](const std::string& name, int w, Component c, bool style) {
        const double sq = 1.0 / std::sqrt(static_cast<double>(w)), sk = 1.0 / std::sqrt(static_cast<double>(dt));
        params_.add(name + ".q", c, rng.normal_matrix(w, w, sq));
        params_.add(name + ".k_p", c, rng.normal_matrix(dt, w, sk));
        params_.add(name + ".v_p", c, rng.normal_matrix(dt, w, sk));
        if (style) {
            params_.add(name + ".k_s", c, rng.normal_matrix(dt, w, sk));
            params_.add(name + ".v_s", c, rng.normal_matrix(dt, w, sk));
        }
    };

    lin("time.l1", td, td, Component::base);
    lin("time.l2", td, td, Component::base);
    conv("conv_in", unet_.latent_channels + unet_.position_channels, unet_.widths[0]);
    for (int l = 0; l < L; ++l) {
        const std::string p = "down" + std::to_string(l);
        res(p + ".res", unet_.widths[l]);
        attn(p + ".attn", unet_.widths[l], Component::cross_attention, false);
        if (l + 1 < L) conv(p + ".to_next", unet_.widths[l], unet_.widths[l + 1]);
    }
    res("mid.res", unet_.widths[L - 1]);
    for (int l = L - 1; l >= 0; --l) {
        const std::string p = "up" + std::to_string(l);
        conv(p + ".merge", 2 * unet_.widths[l], unet_.widths[l]);
        res(p + ".res", unet_.widths[l]);
        attn(p + ".attn", unet_.widths[l], Component::kvs_injection, true);
        if (l > 0) conv(p + ".to_prev", unet_.widths[l], unet_.widths[l - 1]);
    }
    conv("out", unet_.widths[0], unet_.latent_channels, 0.5);

    const double sk = 1.0 / std::sqrt(static_cast<double>(dt));
    params_.add("cross_attn.null_prompt", Component::cross_attention, rng.normal_matrix(1, dt, sk));
    for (const auto& [name, comp, count] :
         {std::tuple{std::string("content_tok"), Component::content_tokenizer, adapter_.content_tokens},
          std::tuple{std::string("style_tok"), Component::style_tokenizer, adapter_.style_tokens}}) {
        lin(name + ".l1", adapter_.d_embed, adapter_.tokenizer_hidden, comp);
        lin(name + ".l2", adapter_.tokenizer_hidden, count * dt, comp);
        params_.add(name + ".null", comp, rng.normal_matrix(count, dt, sk));
    }
}

void ScAdapterModel::init_style_projections_from_prompt() {
    for (int l = 0; l < unet_.levels(); ++l) {
        const std::string p = "up" + std::to_string(l) + ".attn";
        params_.get(p + ".k_s")->value = params_.get(p + ".k_p")->value;
        params_.get(p + ".v_s")->value = params_.get(p + ".v_p")->value;
    }
}

ad::Var ScAdapterModel::conv(const std::string& name, const ad::Var& x, int height, int width) const {
    return conv3x3(x, params_.get(name + ".w"), params_.get(name + ".b"), height, width);
}

ad::Var ScAdapterModel::res_block(const std::string& name, const ad::Var& x, const ad::Var& temb, int height,
                                  int width) const {
    auto h = conv(name + ".conv1", ad::silu(x), height, width);
    auto t = ad::add_row(ad::matmul(ad::silu(temb), params_.get(name + ".temb.w")), params_.get(name + ".temb.b"));
    h = ad::add_row(h, t);
    h = conv(name + ".conv2", ad::silu(h), height, width);
    return ad::add(x, h);
}

ad::Var ScAdapterModel::time_embedding(int t) const {
    const int half = unet_.time_dim / 2;
    Eigen::MatrixXd s(1, unet_.time_dim);
    for (int i = 0; i < half; ++i) {
        const double freq = std::exp(-std::log(10000.0) * i / half);
        s(0, i) = std::sin(t * freq);
        s(0, half + i) = std::cos(t * freq);
    }
    auto h = ad::add_row(ad::matmul(ad::constant(s), params_.get("time.l1.w")), params_.get("time.l1.b"));
    return ad::add_row(ad::matmul(ad::silu(h), params_.get("time.l2.w")), params_.get("time.l2.b"));
}

AttentionVars ScAdapterModel::attention_vars(const std::string& name, bool with_style) const {
    AttentionVars v;
    v.w_q = params_.get(name + ".q");
    v.w_k_p = params_.get(name + ".k_p");
    v.w_v_p = params_.get(name + ".v_p");
    if (with_style) {
        v.w_k_s = params_.get(name + ".k_s");
        v.w_v_s = params_.get(name + ".v_s");
    }
    v.heads = unet_.heads;
    return v;
}

TokenizerVars ScAdapterModel::tokenizer_vars(const std::string& name, int tokens) const {
    return {params_.get(name + ".l1.w"), params_.get(name + ".l1.b"), params_.get(name + ".l2.w"),
            params_.get(name + ".l2.b"), tokens, unet_.d_token, adapter_.nonlinearity};
}

ConditioningTokens ScAdapterModel::tokens(const Conditioning& cond) const {
    ConditioningTokens out;
    if (cond.drop_prompt) {
        out.prompt = {params_.get("cross_attn.null_prompt"), TokenKind::null_prompt};
    } else {
        if (cond.prompt_tokens.rows() < 1 || cond.prompt_tokens.cols() != unet_.d_token)
            throw InputError("prompt tokens must be N x " + std::to_string(unet_.d_token) + " with N >= 1");
        out.prompt = {ad::constant(cond.prompt_tokens), TokenKind::prompt};
    }
    if (cond.content)
        out.content = {tokenize(ad::constant(cond.content->transpose()), tokenizer_vars("content_tok", adapter_.content_tokens)),
                       TokenKind::content};
    else
        out.content = {params_.get("content_tok.null"), TokenKind::null_content};
    if (cond.style)
        out.style = {tokenize(ad::constant(cond.style->transpose()), tokenizer_vars("style_tok", adapter_.style_tokens)),
                     TokenKind::style};
    else
        out.style = {params_.get("style_tok.null"), TokenKind::null_style};
    return out;
}

ConditioningTokens ScAdapterModel::null_tokens(const Eigen::MatrixXd& prompt_tokens, bool drop_prompt) const {
    Conditioning c;
    c.prompt_tokens = prompt_tokens;
    c.drop_prompt = drop_prompt;
    return tokens(c);
}

ad::Var ScAdapterModel::predict_noise(const ad::Var& z_t, int t, const ConditioningTokens& cond,
                                      const ForwardOptions& options) const {
    const int L = unet_.levels();
    if (!z_t || z_t->value.rows() != static_cast<Eigen::Index>(unet_.height) * unet_.width ||
        z_t->value.cols() != unet_.latent_channels)
        throw InputError("latent shape does not match the UNet configuration");
    if (!z_t->value.allFinite()) throw InputError("latent contains non-finite values");
    if (t < 0) throw InputError("negative timestep");
    if (!options.skip_attention) {
        if (!cond.prompt.tokens || !is_prompt_stream(cond.prompt.kind))
            throw ConfigError("prompt stream missing; pass the null prompt embedding explicitly");
        if (!options.prompt_only) {
            if (!cond.content.tokens || !is_content_stream(cond.content.kind))
                throw ConfigError("content stream missing; pass the null content embedding explicitly");
            if (!cond.style.tokens || !is_style_stream(cond.style.kind))
                throw ConfigError("style stream missing; pass the null style embedding explicitly");
        }
    }
    // The audit accumulates across calls (e.g. both CFG branches of a sampler run).
    if (options.audit && options.audit->down.size() != static_cast<std::size_t>(L)) {
        options.audit->down.assign(L, {});
        options.audit->up.assign(L, {});
    }

    // Downsample attention only ever receives prompt + content, upsample attention
    // only prompt + style; the streams are routed here and nowhere else.
    ad::Var down_context, up_prompt, up_style;
    if (!options.skip_attention) {
        if (options.prompt_only) {
            down_context = cond.prompt.tokens;
            up_prompt = cond.prompt.tokens;
        } else {
            down_context = ad::concat_rows({cond.prompt.tokens, cond.content.tokens});
            up_prompt = cond.prompt.tokens;
            up_style = cond.style.tokens;
        }
    }

    auto temb = time_embedding(t);
    auto h = conv("conv_in", ad::concat_cols({z_t, ad::constant(position_)}), unet_.height, unet_.width);
    std::vector<ad::Var> skips(L);
    int H = unet_.height, W = unet_.width;
    for (int l = 0; l < L; ++l) {
        const std::string p = "down" + std::to_string(l);
        h = res_block(p + ".res", h, temb, H, W);
        if (!options.skip_attention) {
            h = ad::add(h, cross_attention(h, down_context, attention_vars(p + ".attn", false)));
            if (options.audit) {
                options.audit->down[l].insert(cond.prompt.kind);
                if (!options.prompt_only) options.audit->down[l].insert(cond.content.kind);
            }
        }
        skips[l] = h;
        if (options.control_hook)
            if (auto r = options.control_hook(l, h)) skips[l] = ad::add(h, r);
        if (l + 1 < L) {
            h = ad::avgpool2(h, H, W);
            H /= 2;
            W /= 2;
            h = conv(p + ".to_next", h, H, W);
        }
    }
    h = res_block("mid.res", h, temb, H, W);
    for (int l = L - 1; l >= 0; --l) {
        const std::string p = "up" + std::to_string(l);
        h = conv(p + ".merge", ad::concat_cols({h, skips[l]}), H, W);
        h = res_block(p + ".res", h, temb, H, W);
        if (!options.skip_attention) {
            h = ad::add(h, kvs_attention(h, up_prompt, up_style, attention_vars(p + ".attn", !options.prompt_only)));
            if (options.audit) {
                options.audit->up[l].insert(cond.prompt.kind);
                if (!options.prompt_only) options.audit->up[l].insert(cond.style.kind);
            }
        }
        if (l > 0) {
            h = ad::upsample2(h, H, W);
            H *= 2;
            W *= 2;
            h = conv(p + ".to_prev", h, H, W);
        }
    }
    return conv("out", ad::silu(h), H, W);
}

LatentTensor ScAdapterModel::predict_noise(const LatentTensor& z_t, int t, const Conditioning& cond,
                                           const ForwardOptions& options) const {
    if (z_t.channels != unet_.latent_channels || z_t.height != unet_.height || z_t.width != unet_.width)
        throw InputError("latent shape does not match the UNet configuration");
    auto eps = predict_noise(ad::constant(z_t.values), t, tokens(cond), options);
    return {z_t.channels, z_t.height, z_t.width, eps->value};
}

void ScAdapterModel::save(const std::filesystem::path& path, const NoiseSchedule& schedule) const {
    write_json_file({{"format", "scadapter.model/1"},
                     {"unet", unet_.to_json()},
                     {"adapter", adapter_.to_json()},
                     {"schedule", schedule.to_json()},
                     {"parameters", params_.to_json()}},
                    path, -1);
}

ScAdapterModel::Loaded ScAdapterModel::load(const std::filesystem::path& path) {
    const json doc = read_json_file(path);
    try {
        if (doc.at("format").get<std::string>() != "scadapter.model/1")
            throw FormatError(path.string() + ": unsupported model checkpoint format");
        ScAdapterModel model(UNetConfig::from_json(doc.at("unet")), AdapterConfig::from_json(doc.at("adapter")),
                             ParameterStore::from_json(doc.at("parameters")));
        return {std::move(model), NoiseSchedule::from_json(doc.at("schedule"))};
    } catch (const json::exception& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
}

// ---------------------------------------------------------------- sampling

void GuidanceConfig::validate(const NoiseSchedule& schedule) const {
    if (steps < 1 || steps > schedule.steps())
        throw ConfigError("sampling steps must lie in [1, " + std::to_string(schedule.steps()) + "]");
    if (!(cfg_scale >= 1.0)) throw ConfigError("classifier-free guidance scale must be >= 1");
    if (!(eta >= 0.0)) throw ConfigError("eta must be non-negative");
    if (clip_x0 && !(clip_lo < clip_hi)) throw ConfigError("x0 clip range is empty");
}

std::vector<int> ddim_timesteps(int total_steps, int sample_steps) {
    if (sample_steps < 1 || sample_steps > total_steps) throw ConfigError("sampling steps must lie in [1, T]");
    std::vector<int> ts(sample_steps);
    for (int i = 0; i < sample_steps; ++i)
        ts[i] = total_steps - 1 - static_cast<int>((static_cast<long>(i) * total_steps) / sample_steps);
    return ts;
}

LatentTensor predict_x0(const LatentTensor& z_t, const LatentTensor& eps, int t, const NoiseSchedule& schedule) {
    const double a = schedule.alpha_bar(t);
    LatentTensor out = z_t;
    out.values = (z_t.values - std::sqrt(1.0 - a) * eps.values) / std::sqrt(a);
    return out;
}

LatentTensor ddim_sample(const ScAdapterModel& model, const LatentTensor& initial_noise, const Conditioning& cond,
                         const GuidanceConfig& guidance, const NoiseSchedule& schedule, Rng* rng,
                         const ForwardOptions& options, SamplerTrace* trace) {
    guidance.validate(schedule);
    if (guidance.eta > 0.0 && !rng) throw ConfigError("stochastic DDIM (eta > 0) needs a random generator");
    const auto ts = ddim_timesteps(schedule.steps(), guidance.steps);
    const auto cond_tokens = model.tokens(cond);
    const auto uncond_tokens = model.null_tokens(cond.prompt_tokens, true);
    LatentTensor x = initial_noise;
    if (trace) trace->timesteps = ts;
    for (std::size_t i = 0; i < ts.size(); ++i) {
        const int t = ts[i];
        auto eps_c = model.predict_noise(ad::constant(x.values), t, cond_tokens, options)->value;
        LatentTensor eps{x.channels, x.height, x.width, std::move(eps_c)};
        if (guidance.cfg_scale != 1.0) {
            LatentTensor eps_u{x.channels, x.height, x.width,
                               model.predict_noise(ad::constant(x.values), t, uncond_tokens, options)->value};
            eps = cfg_combine(eps_u, eps, guidance.cfg_scale);
        }
        const double a_t = schedule.alpha_bar(t);
        const double a_prev = i + 1 < ts.size() ? schedule.alpha_bar(ts[i + 1]) : 1.0;
        LatentTensor x0 = predict_x0(x, eps, t, schedule);
        if (guidance.clip_x0) {
            x0.values = x0.values.cwiseMax(guidance.clip_lo).cwiseMin(guidance.clip_hi);
            eps.values = (x.values - std::sqrt(a_t) * x0.values) / std::sqrt(1.0 - a_t);
        }
        const double sigma =
            guidance.eta * std::sqrt((1.0 - a_prev) / (1.0 - a_t)) * std::sqrt(std::max(0.0, 1.0 - a_t / a_prev));
        const double dir = std::sqrt(std::max(0.0, 1.0 - a_prev - sigma * sigma));
        x.values = std::sqrt(a_prev) * x0.values + dir * eps.values;
        if (sigma > 0.0) x.values += sigma * rng->normal_matrix(x.values.rows(), x.values.cols());
        if (!x.all_finite()) throw SamplingError("non-finite latent in DDIM trajectory", static_cast<long>(i));
        if (trace) trace->latent_rms.push_back(std::sqrt(x.values.squaredNorm() / x.values.size()));
    }
    return x;
}

}  // namespace scadapter
