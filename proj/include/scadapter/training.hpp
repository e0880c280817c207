#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "scadapter/csadain.hpp"
#include "scadapter/diffusion.hpp"
#include "scadapter/optim.hpp"

namespace scadapter {

struct TrainConfig {
    double lambda_consistency = 0.1;
    double consistency_prob = 0.3;
    double cond_drop_rate = 0.05;
    double learning_rate = 1e-4;
    OptimizerKind optimizer = OptimizerKind::sgd;
    long steps = 1000;
    int batch_size = 1;          // vanilla items per step
    int triplet_batch_size = 1;  // triplets per consistency step
    std::uint64_t seed = 0;
    std::set<Component> trainable = adapter_components();

    void validate() const;
    json to_json() const;
    static TrainConfig from_json(const json& j);
    static TrainConfig from_json(const json& j, TrainConfig defaults);
};

struct TripletRecord {
    std::string content_image_id;
    std::string style_image_id;
    std::string stylized_image_id;
    std::string style_label;
};

// A content image with its frozen-extractor features and prompt.
struct TrainingItem {
    std::string id;
    LatentTensor latent;
    Eigen::VectorXd content;  // C(I_C)
    Eigen::VectorXd style;    // S(I_C)
    Eigen::MatrixXd prompt_tokens;
};

struct TripletItem {
    TripletRecord record;
    LatentTensor stylized_latent;  // latent of I_T, the reconstruction target
    Eigen::VectorXd content;       // C(I_C)
    Eigen::VectorXd content_style; // S(I_C)
    Eigen::VectorXd reference_style;  // S(I_S)
    Eigen::MatrixXd prompt_tokens;
};

// Random draws for one item of one loss term.
struct ItemDraw {
    std::size_t index = 0;  // into the item or triplet list
    int t = 0;
    Eigen::MatrixXd noise;
    double omega = 0.0;  // consistency items only
    bool drop_prompt = false;
    bool drop_content = false;
    bool drop_style = false;
};

enum class Objective { vanilla, consistency };

struct PredictRequest {
    const ad::Var& z_t;
    int t;
    const Conditioning& cond;
    std::size_t item;  // position within the current loss term's batch
    Objective objective;
};

using NoisePredictorFn = std::function<ad::Var(const PredictRequest&)>;

// Wraps ScAdapterModel::predict_noise with conditioning tokenised by the model.
NoisePredictorFn model_predictor(const ScAdapterModel& model, ForwardOptions options = {});

// All randomness for one joint step. Draw order (the RNG protocol):
//   1. consistency flag: bernoulli(consistency_prob)
//   2. per vanilla item: index, t, noise (row-major), drop prompt/content/style
//   3. if consistency: per triplet: index, t, noise, omega ~ U[0,1], drop prompt/content/style
struct StepPlan {
    bool consistency = false;
    std::vector<ItemDraw> vanilla;
    std::vector<ItemDraw> triplets;
};

StepPlan draw_step_plan(Rng& rng, const TrainConfig& config, std::size_t item_count, std::size_t triplet_count,
                        const LatentTensor& latent_shape, int total_timesteps);

// Conditioning assembled for each objective (style guidance via CSAdaIN).
Conditioning vanilla_conditioning(const TrainingItem& item, const ItemDraw& draw);
Conditioning consistency_conditioning(const TripletItem& item, const ItemDraw& draw);

// Loss terms as differentiable graphs for a fixed set of draws.
ad::Var vanilla_loss(std::span<const TrainingItem> items, std::span<const ItemDraw> draws,
                     const NoisePredictorFn& predictor, const NoiseSchedule& schedule);
ad::Var consistency_loss(std::span<const TripletItem> items, std::span<const ItemDraw> draws,
                         const NoisePredictorFn& predictor, const NoiseSchedule& schedule);

// Convenience forms drawing t and noise from rng (index = batch position, no drops).
// Vanilla items draw t then noise; consistency items draw t, noise, then omega.
double vanilla_loss(std::span<const TrainingItem> batch, const NoisePredictorFn& predictor,
                    const NoiseSchedule& schedule, Rng& rng);
double consistency_loss(std::span<const TripletItem> batch, const NoisePredictorFn& predictor,
                        const NoiseSchedule& schedule, Rng& rng);

struct JointLoss {
    ad::Var total;
    double vanilla = 0.0;
    std::optional<double> consistency;
};

JointLoss joint_loss(const StepPlan& plan, std::span<const TrainingItem> items, std::span<const TripletItem> triplets,
                     const TrainConfig& config, const NoisePredictorFn& predictor, const NoiseSchedule& schedule);

struct StepRecord {
    long step = 0;
    double loss = 0.0;
    double vanilla = 0.0;
    std::optional<double> consistency;
    bool consistency_step = false;
    int items = 0;  // conditioning sets drawn this step
    int dropped_prompt = 0;
    int dropped_content = 0;
    int dropped_style = 0;

    json to_json() const;
};

// Joint-objective training loop over a fixed dataset. Only parameters in
// config.trainable receive updates.
class Trainer {
public:
    Trainer(ScAdapterModel& model, std::vector<TrainingItem> items, std::vector<TripletItem> triplets,
            TrainConfig config, NoiseSchedule schedule, NoisePredictorFn predictor = {});

    StepRecord joint_step();
    std::vector<StepRecord> run(long steps, std::ostream* log = nullptr);

    long steps_taken() const noexcept { return step_; }
    const TrainConfig& config() const noexcept { return config_; }

private:
    ScAdapterModel& model_;
    std::vector<TrainingItem> items_;
    std::vector<TripletItem> triplets_;
    TrainConfig config_;
    NoiseSchedule schedule_;
    NoisePredictorFn predictor_;
    Optimizer optimizer_;
    Rng rng_;
    long step_ = 0;
};

// Base-model pretraining (stand-in for a pretrained text-to-image UNet): vanilla
// denoising with prompt-only attention, prompt dropped at cond_drop_rate.
std::vector<StepRecord> pretrain_base(ScAdapterModel& model, std::span<const TrainingItem> items,
                                      const TrainConfig& config, const NoiseSchedule& schedule,
                                      std::ostream* log = nullptr);

// Exact copies of every parameter value, for frozen-weight audits.
std::map<std::string, Eigen::MatrixXd> snapshot(const ParameterStore& params);
// Names of parameters whose values differ bitwise from the snapshot.
std::vector<std::string> changed_parameters(const ParameterStore& params,
                                            const std::map<std::string, Eigen::MatrixXd>& before);

double moving_average(std::span<const double> values, std::size_t begin, std::size_t window);

}  // namespace scadapter
