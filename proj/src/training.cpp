#include "scadapter/training.hpp"

#include <cmath>
#include <cstring>

#include "scadapter/errors.hpp"

namespace scadapter {

void TrainConfig::validate() const {
    auto prob = [](double p, const char* name) {
        if (!(p >= 0.0 && p <= 1.0)) throw ConfigError(std::string(name) + " must lie in [0, 1]");
    };
    prob(consistency_prob, "consistency_prob");
    prob(cond_drop_rate, "cond_drop_rate");
    if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
    if (!(lambda_consistency >= 0.0)) throw ConfigError("lambda_consistency must be non-negative");
    if (steps < 0) throw ConfigError("steps must be non-negative");
    if (batch_size < 1 || triplet_batch_size < 1) throw ConfigError("batch sizes must be >= 1");
}

json TrainConfig::to_json() const {
    std::vector<std::string> comps;
    for (auto c : trainable) comps.push_back(to_string(c));
    return {{"lambda_consistency", lambda_consistency},
            {"consistency_prob", consistency_prob},
            {"cond_drop_rate", cond_drop_rate},
            {"learning_rate", learning_rate},
            {"optimizer", to_string(optimizer)},
            {"steps", steps},
            {"batch_size", batch_size},
            {"triplet_batch_size", triplet_batch_size},
            {"seed", seed},
            {"trainable", comps}};
}

TrainConfig TrainConfig::from_json(const json& j) { return from_json(j, TrainConfig{}); }

TrainConfig TrainConfig::from_json(const json& j, TrainConfig c) {
    try {
        if (j.contains("lambda_consistency")) c.lambda_consistency = j.at("lambda_consistency");
        if (j.contains("consistency_prob")) c.consistency_prob = j.at("consistency_prob");
        if (j.contains("cond_drop_rate")) c.cond_drop_rate = j.at("cond_drop_rate");
        if (j.contains("learning_rate")) c.learning_rate = j.at("learning_rate");
        if (j.contains("optimizer")) c.optimizer = optimizer_from_string(j.at("optimizer"));
        if (j.contains("steps")) c.steps = j.at("steps");
        if (j.contains("batch_size")) c.batch_size = j.at("batch_size");
        if (j.contains("triplet_batch_size")) c.triplet_batch_size = j.at("triplet_batch_size");
        if (j.contains("seed")) c.seed = j.at("seed");
        if (j.contains("trainable")) {
            c.trainable.clear();
            for (const auto& name : j.at("trainable")) c.trainable.insert(component_from_string(name));
        }
    } catch (const json::exception& e) {
        throw ConfigError(std::string("malformed training config: ") + e.what());
    } catch (const FormatError& e) {
        throw ConfigError(std::string("training config: ") + e.what());
    }
    c.validate();
    return c;
}

NoisePredictorFn model_predictor(const ScAdapterModel& model, ForwardOptions options) {
    return [&model, options](const PredictRequest& r) {
        return model.predict_noise(r.z_t, r.t, model.tokens(r.cond), options);
    };
}

StepPlan draw_step_plan(Rng& rng, const TrainConfig& config, std::size_t item_count, std::size_t triplet_count,
                        const LatentTensor& shape, int total_timesteps) {
    StepPlan plan;
    plan.consistency = rng.bernoulli(config.consistency_prob);
    auto draw = [&](std::size_t count, bool with_omega) {
        ItemDraw d;
        d.index = rng.below(count);
        d.t = static_cast<int>(rng.below(static_cast<std::uint64_t>(total_timesteps)));
        d.noise = rng.normal_matrix(static_cast<Eigen::Index>(shape.height) * shape.width, shape.channels);
        if (with_omega) d.omega = rng.uniform();
        d.drop_prompt = rng.bernoulli(config.cond_drop_rate);
        d.drop_content = rng.bernoulli(config.cond_drop_rate);
        d.drop_style = rng.bernoulli(config.cond_drop_rate);
        return d;
    };
    if (item_count == 0) throw ConfigError("training needs at least one content image");
    for (int i = 0; i < config.batch_size; ++i) plan.vanilla.push_back(draw(item_count, false));
    if (plan.consistency) {
        if (triplet_count == 0)
            throw ConfigError("consistency step drawn but no triplets are available (set consistency_prob = 0)");
        for (int i = 0; i < config.triplet_batch_size; ++i) plan.triplets.push_back(draw(triplet_count, true));
    }
    return plan;
}

Conditioning vanilla_conditioning(const TrainingItem& item, const ItemDraw& draw) {
    Conditioning c;
    c.prompt_tokens = item.prompt_tokens;
    c.drop_prompt = draw.drop_prompt;
    if (!draw.drop_content) c.content = item.content;
    if (!draw.drop_style) {
        // Both CSAdaIN arguments are S(I_C), so the guidance reproduces it for any omega.
        const StyleFeature s{item.style, item.id};
        c.style = csadain(s, s, 0.0).values;
    }
    return c;
}

Conditioning consistency_conditioning(const TripletItem& item, const ItemDraw& draw) {
    Conditioning c;
    c.prompt_tokens = item.prompt_tokens;
    c.drop_prompt = draw.drop_prompt;
    if (!draw.drop_content) c.content = item.content;
    if (!draw.drop_style)
        c.style = csadain(StyleFeature{item.reference_style, item.record.style_image_id},
                          StyleFeature{item.content_style, item.record.content_image_id}, draw.omega)
                      .values;
    return c;
}

namespace {

template <typename Item, typename CondFn>
ad::Var mean_noise_loss(std::span<const Item> items, std::span<const ItemDraw> draws,
                        const NoisePredictorFn& predictor, const NoiseSchedule& schedule, Objective objective,
                        const LatentTensor Item::*latent, CondFn conditioning) {
    if (draws.empty()) throw InputError("loss over an empty batch");
    ad::Var total;
    for (std::size_t i = 0; i < draws.size(); ++i) {
        const auto& d = draws[i];
        if (d.index >= items.size()) throw DataError("batch draw references item " + std::to_string(d.index));
        const Item& item = items[d.index];
        const LatentTensor& z0 = item.*latent;
        const LatentTensor noise{z0.channels, z0.height, z0.width, d.noise};
        const LatentTensor z_t = add_noise(z0, d.t, noise, schedule);
        const Conditioning cond = conditioning(item, d);
        const ad::Var zt = ad::constant(z_t.values);
        auto pred = predictor(PredictRequest{zt, d.t, cond, i, objective});
        auto term = ad::mse(pred, d.noise);
        total = total ? ad::add(total, term) : term;
    }
    return ad::scale(total, 1.0 / static_cast<double>(draws.size()));
}

void check_finite(double v, const char* what, long step) {
    if (!std::isfinite(v)) throw TrainingError(std::string(what) + " is not finite", step);
}

}  // namespace

ad::Var vanilla_loss(std::span<const TrainingItem> items, std::span<const ItemDraw> draws,
                     const NoisePredictorFn& predictor, const NoiseSchedule& schedule) {
    return mean_noise_loss(items, draws, predictor, schedule, Objective::vanilla, &TrainingItem::latent,
                           vanilla_conditioning);
}

ad::Var consistency_loss(std::span<const TripletItem> items, std::span<const ItemDraw> draws,
                         const NoisePredictorFn& predictor, const NoiseSchedule& schedule) {
    return mean_noise_loss(items, draws, predictor, schedule, Objective::consistency, &TripletItem::stylized_latent,
                           consistency_conditioning);
}

double vanilla_loss(std::span<const TrainingItem> batch, const NoisePredictorFn& predictor,
                    const NoiseSchedule& schedule, Rng& rng) {
    std::vector<ItemDraw> draws;
    for (std::size_t i = 0; i < batch.size(); ++i) {
        ItemDraw d;
        d.index = i;
        d.t = static_cast<int>(rng.below(static_cast<std::uint64_t>(schedule.steps())));
        d.noise = rng.normal_matrix(static_cast<Eigen::Index>(batch[i].latent.height) * batch[i].latent.width,
                                    batch[i].latent.channels);
        draws.push_back(std::move(d));
    }
    const double loss = ad::scalar(vanilla_loss(batch, draws, predictor, schedule));
    check_finite(loss, "vanilla loss", 0);
    return loss;
}

double consistency_loss(std::span<const TripletItem> batch, const NoisePredictorFn& predictor,
                        const NoiseSchedule& schedule, Rng& rng) {
    std::vector<ItemDraw> draws;
    for (std::size_t i = 0; i < batch.size(); ++i) {
        const auto& z = batch[i].stylized_latent;
        ItemDraw d;
        d.index = i;
        d.t = static_cast<int>(rng.below(static_cast<std::uint64_t>(schedule.steps())));
        d.noise = rng.normal_matrix(static_cast<Eigen::Index>(z.height) * z.width, z.channels);
        d.omega = rng.uniform();
        draws.push_back(std::move(d));
    }
    const double loss = ad::scalar(consistency_loss(batch, draws, predictor, schedule));
    check_finite(loss, "consistency loss", 0);
    return loss;
}

JointLoss joint_loss(const StepPlan& plan, std::span<const TrainingItem> items, std::span<const TripletItem> triplets,
                     const TrainConfig& config, const NoisePredictorFn& predictor, const NoiseSchedule& schedule) {
    JointLoss out;
    auto lv = vanilla_loss(items, plan.vanilla, predictor, schedule);
    out.vanilla = ad::scalar(lv);
    out.total = lv;
    if (plan.consistency) {
        auto lc = consistency_loss(triplets, plan.triplets, predictor, schedule);
        out.consistency = ad::scalar(lc);
        out.total = ad::add(lv, ad::scale(lc, config.lambda_consistency));
    }
    return out;
}

json StepRecord::to_json() const {
    json j = {{"step", step},
              {"loss", loss},
              {"vanilla", vanilla},
              {"consistency", consistency ? json(*consistency) : json(nullptr)},
              {"consistency_step", consistency_step},
              {"items", items},
              {"dropped", {{"prompt", dropped_prompt}, {"content", dropped_content}, {"style", dropped_style}}}};
    return j;
}

Trainer::Trainer(ScAdapterModel& model, std::vector<TrainingItem> items, std::vector<TripletItem> triplets,
                 TrainConfig config, NoiseSchedule schedule, NoisePredictorFn predictor)
    : model_(model),
      items_(std::move(items)),
      triplets_(std::move(triplets)),
      config_(std::move(config)),
      schedule_(std::move(schedule)),
      predictor_(predictor ? std::move(predictor) : model_predictor(model)),
      optimizer_(config_.optimizer, config_.learning_rate),
      rng_(config_.seed) {
    config_.validate();
    if (items_.empty()) throw ConfigError("training needs at least one content image");
    if (config_.consistency_prob > 0.0 && triplets_.empty())
        throw ConfigError("consistency_prob > 0 but the dataset has no triplets");
}

StepRecord Trainer::joint_step() {
    const StepPlan plan =
        draw_step_plan(rng_, config_, items_.size(), triplets_.size(), items_.front().latent, schedule_.steps());
    auto& params = model_.parameters();
    params.set_trainable(config_.trainable);
    params.zero_grad();
    const JointLoss loss = joint_loss(plan, items_, triplets_, config_, predictor_, schedule_);

    StepRecord rec;
    rec.step = step_;
    rec.loss = ad::scalar(loss.total);
    rec.vanilla = loss.vanilla;
    rec.consistency = loss.consistency;
    rec.consistency_step = plan.consistency;
    for (const auto* draws : {&plan.vanilla, &plan.triplets})
        for (const auto& d : *draws) {
            ++rec.items;
            rec.dropped_prompt += d.drop_prompt;
            rec.dropped_content += d.drop_content;
            rec.dropped_style += d.drop_style;
        }
    check_finite(rec.loss, "joint loss", step_);

    ad::backward(loss.total);
    optimizer_.step(params);
    params.set_trainable({});
    ++step_;
    return rec;
}

std::vector<StepRecord> Trainer::run(long steps, std::ostream* log) {
    std::vector<StepRecord> out;
    out.reserve(static_cast<std::size_t>(steps));
    for (long i = 0; i < steps; ++i) {
        out.push_back(joint_step());
        if (log) *log << out.back().to_json().dump() << '\n';
    }
    return out;
}

std::vector<StepRecord> pretrain_base(ScAdapterModel& model, std::span<const TrainingItem> items,
                                      const TrainConfig& config, const NoiseSchedule& schedule, std::ostream* log) {
    config.validate();
    if (items.empty()) throw ConfigError("base pretraining needs images");
    ForwardOptions opts;
    opts.prompt_only = true;
    const auto predictor = model_predictor(model, opts);
    Optimizer opt(config.optimizer, config.learning_rate);
    Rng rng(config.seed);
    TrainConfig no_consistency = config;
    no_consistency.consistency_prob = 0.0;
    auto& params = model.parameters();
    std::vector<StepRecord> records;
    for (long step = 0; step < config.steps; ++step) {
        const StepPlan plan = draw_step_plan(rng, no_consistency, items.size(), 0, items.front().latent, schedule.steps());
        params.set_trainable(config.trainable);
        params.zero_grad();
        auto loss = vanilla_loss(items, plan.vanilla, predictor, schedule);
        StepRecord rec;
        rec.step = step;
        rec.loss = rec.vanilla = ad::scalar(loss);
        rec.items = static_cast<int>(plan.vanilla.size());
        for (const auto& d : plan.vanilla) rec.dropped_prompt += d.drop_prompt;
        check_finite(rec.loss, "base pretraining loss", step);
        ad::backward(loss);
        opt.step(params);
        params.set_trainable({});
        if (log) *log << rec.to_json().dump() << '\n';
        records.push_back(rec);
    }
    return records;
}

std::map<std::string, Eigen::MatrixXd> snapshot(const ParameterStore& params) {
    std::map<std::string, Eigen::MatrixXd> out;
    for (const auto& p : params.all()) out.emplace(p.name, p.var->value);
    return out;
}

std::vector<std::string> changed_parameters(const ParameterStore& params,
                                            const std::map<std::string, Eigen::MatrixXd>& before) {
    std::vector<std::string> changed;
    for (const auto& p : params.all()) {
        const auto it = before.find(p.name);
        const auto& now = p.var->value;
        if (it == before.end() || it->second.rows() != now.rows() || it->second.cols() != now.cols() ||
            std::memcmp(it->second.data(), now.data(), sizeof(double) * static_cast<std::size_t>(now.size())) != 0)
            changed.push_back(p.name);
    }
    return changed;
}

double moving_average(std::span<const double> values, std::size_t begin, std::size_t window) {
    if (window == 0 || begin + window > values.size()) throw InputError("moving average window out of range");
    double s = 0.0;
    for (std::size_t i = begin; i < begin + window; ++i) s += values[i];
    return s / static_cast<double>(window);
}

}  // namespace scadapter
