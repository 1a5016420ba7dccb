#include "omnisal/train.hpp"

#include <cmath>
#include <sstream>

#include "omnisal/ops.hpp"

namespace omnisal::train {

void TrainConfig::validate() const {
    if (!(lr0 > 0.0)) throw ConfigError("train.lr0 must be positive");
    if (batch_size < 1) throw ConfigError("train.batch_size must be at least 1");
    if (total_steps < 1) throw ConfigError("train.total_steps must be at least 1");
    for (size_t i = 0; i < decay_steps.size(); ++i) {
        if (decay_steps[i] <= 0 || decay_steps[i] >= total_steps) {
            throw ConfigError("train.decay_steps must lie strictly between 0 and total_steps");
        }
        if (i > 0 && decay_steps[i] <= decay_steps[i - 1]) throw ConfigError("train.decay_steps must be increasing");
    }
    if (!(decay_factor > 0.0 && decay_factor <= 1.0)) throw ConfigError("train.decay_factor must be in (0, 1]");
    if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("adam betas must be in [0, 1)");
    if (!(adam_eps > 0.0)) throw ConfigError("train.adam_eps must be positive");
    if (checkpoint_every < 1) throw ConfigError("train.checkpoint_every must be at least 1");
}

TrainConfig TrainConfig::full() { return TrainConfig{}; }

TrainConfig TrainConfig::desk() {
    TrainConfig c;
    c.lr0 = 1e-3;
    c.batch_size = 4;
    c.total_steps = 2000;
    c.decay_steps = {1500};
    c.checkpoint_every = 500;
    return c;
}

double lr_schedule(const TrainConfig& config, int64_t step) {
    int passed = 0;
    for (auto s : config.decay_steps) passed += step >= s ? 1 : 0;
    return config.lr0 / std::pow(1.0 / config.decay_factor, passed);
}

Var bce_loss(const Var& prediction, const Tensor& target) {
    if (prediction.shape() != target.shape()) {
        throw ShapeError("bce_loss: prediction " + shape_str(prediction.shape()) + " vs target " +
                         shape_str(target.shape()));
    }
    return ops::bce_mean(prediction, target, 1e-7);
}

Adam::Adam(const ParamStore& params, double beta1, double beta2, double eps) : beta1_(beta1), beta2_(beta2), eps_(eps) {
    for (const auto& e : params.entries()) {
        m_.push_back(Tensor::zeros(e.var.shape()));
        v_.push_back(Tensor::zeros(e.var.shape()));
    }
}

void Adam::step(ParamStore& params, double lr) {
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    auto& entries = params.entries();
    for (size_t i = 0; i < entries.size(); ++i) {
        Var var = entries[i].var;
        if (!var.has_grad()) continue;
        const Tensor& g = var.node()->grad;
        Tensor& w = var.mutable_value();
        Tensor& m = m_[i];
        Tensor& v = v_[i];
        for (int64_t j = 0; j < w.numel(); ++j) {
            m[j] = beta1_ * m[j] + (1.0 - beta1_) * g[j];
            v[j] = beta2_ * v[j] + (1.0 - beta2_) * g[j] * g[j];
            w[j] -= lr * (m[j] / c1) / (std::sqrt(v[j] / c2) + eps_);
        }
    }
}

Trainer::Trainer(const ModelConfig& model, const TrainConfig& train)
    : config_((train.validate(), train)),
      model_(model),
      adam_(model_.params(), train.beta1, train.beta2, train.adam_eps) {}

StepResult Trainer::train_step(const data::PairedBatch& batch) {
    StepResult r{step_, batch.modality, 0.0, lr_schedule(config_, step_)};
    model_.params().zero_grad();
    auto out = model_.forward(Var(batch.images), batch.modality);
    auto loss = bce_loss(out.saliency, batch.gts);
    r.loss = loss.value()[0];
    if (!std::isfinite(r.loss)) {
        std::ostringstream msg;
        msg << "non-finite loss " << r.loss << " at step " << step_ << " (" << to_string(batch.modality)
            << " batch:";
        for (const auto& id : batch.sample_ids) msg << ' ' << id;
        msg << ')';
        throw NonFiniteLoss(msg.str());
    }
    backward(loss);
    adam_.step(model_.params(), r.lr);
    ++step_;
    return r;
}

double Trainer::evaluate_loss(const data::PairedBatch& batch) const {
    NoGradGuard guard;
    return bce_loss(model_.forward(Var(batch.images), batch.modality).saliency, batch.gts).value()[0];
}

}  // namespace omnisal::train
