#pragma once

#include <stdexcept>

#include "omnisal/data.hpp"
#include "omnisal/model.hpp"

namespace omnisal::train {

struct TrainConfig {
    double lr0 = 1e-4;
    int64_t batch_size = 16;
    int64_t total_steps = 300000;
    std::vector<int64_t> decay_steps{100000, 200000};
    double decay_factor = 0.1;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    uint64_t seed = 0;
    int64_t checkpoint_every = 10000;

    /// Throws ConfigError naming the offending field.
    void validate() const;
    bool operator==(const TrainConfig&) const = default;

    static TrainConfig full();
    /// Laptop-CPU preset paired with ModelConfig::desk().
    static TrainConfig desk();
};

/// Piecewise-constant rate: lr0 / (1/decay_factor)^k after k decay steps.
/// One division by an exact power of ten keeps 1e-4 → 1e-5 → 1e-6 exact.
double lr_schedule(const TrainConfig& config, int64_t step);

/// Mean per-pixel binary cross-entropy, predictions clamped to [1e-7, 1 - 1e-7].
Var bce_loss(const Var& prediction, const Tensor& target);

class Adam {
public:
    Adam(const ParamStore& params, double beta1, double beta2, double eps);

    /// One bias-corrected update of every parameter from its current grad.
    void step(ParamStore& params, double lr);

    int64_t steps_taken() const noexcept { return t_; }
    std::vector<Tensor>& first_moments() noexcept { return m_; }
    std::vector<Tensor>& second_moments() noexcept { return v_; }
    const std::vector<Tensor>& first_moments() const noexcept { return m_; }
    const std::vector<Tensor>& second_moments() const noexcept { return v_; }
    void set_steps_taken(int64_t t) noexcept { t_ = t; }

private:
    double beta1_, beta2_, eps_;
    int64_t t_ = 0;
    std::vector<Tensor> m_, v_;
};

class NonFiniteLoss : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct StepResult {
    int64_t step = 0;  // index of the step just taken
    Modality modality = Modality::rgb;
    double loss = 0.0;
    double lr = 0.0;
};

/// Model, optimizer and step counter. Data randomness (sampler and crops)
/// lives with the caller; see run_training.
class Trainer {
public:
    Trainer(const ModelConfig& model, const TrainConfig& train);

    SaliencyModel& model() noexcept { return model_; }
    const SaliencyModel& model() const noexcept { return model_; }
    Adam& optimizer() noexcept { return adam_; }
    const Adam& optimizer() const noexcept { return adam_; }
    const TrainConfig& config() const noexcept { return config_; }
    int64_t step() const noexcept { return step_; }
    void set_step(int64_t step) noexcept { step_ = step; }

    /// Forward, loss, backward and one Adam update at lr_schedule(step()).
    /// A non-finite loss throws NonFiniteLoss before any weight changes.
    StepResult train_step(const data::PairedBatch& batch);
    /// Loss without an update.
    double evaluate_loss(const data::PairedBatch& batch) const;

private:
    TrainConfig config_;
    SaliencyModel model_;
    Adam adam_;
    int64_t step_ = 0;
};

}  // namespace omnisal::train
