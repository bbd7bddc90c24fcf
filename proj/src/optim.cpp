#include "cil/optim.hpp"

#include <cmath>
#include <limits>

#include "cil/errors.hpp"

namespace cil {

void sgd_step(Model& model, const OptimizerConfig& config) {
    auto params = model.parameters();

    for (const Parameter* p : params)
        if (p->trainable && !p->gradient.finite())
            throw NumericalError("non-finite gradient, optimizer step aborted");

    // decayed gradients and their global norm
    std::vector<std::vector<double>> step_grads(params.size());
    double sq_norm = 0.0;
    for (std::size_t i = 0; i < params.size(); ++i) {
        const Parameter* p = params[i];
        if (!p->trainable) continue;
        std::vector<double>& g = step_grads[i];
        g.resize(p->gradient.size());
        for (std::size_t j = 0; j < g.size(); ++j) {
            g[j] = p->gradient[j] + config.weight_decay * p->value[j];
            sq_norm += g[j] * g[j];
        }
    }
    const double norm = std::sqrt(sq_norm);
    const double scale = norm > config.clip_threshold ? config.clip_threshold / norm : 1.0;

    for (std::size_t i = 0; i < params.size(); ++i) {
        Parameter* p = params[i];
        if (!p->trainable) continue;
        const std::vector<double>& g = step_grads[i];
        for (std::size_t j = 0; j < g.size(); ++j) {
            p->momentum[j] = config.momentum * p->momentum[j] + scale * g[j];
            p->value[j] -= config.learning_rate * p->momentum[j];
        }
    }
}

PatienceScheduler::PatienceScheduler(double initial_lr, const SchedulerConfig& config)
    : config_(config), lr_(initial_lr), best_loss_(std::numeric_limits<double>::infinity()) {
    if (config.patience <= 0) throw ConfigError("scheduler patience must be positive");
    if (config.factor <= 1.0) throw ConfigError("scheduler factor must exceed 1");
    if (config.min_lr <= 0.0) throw ConfigError("scheduler min_lr must be positive");
}

SchedulerDecision PatienceScheduler::observe(double val_loss, Model& model) {
    if (val_loss < best_loss_) {
        best_loss_ = val_loss;
        best_model_ = model;
        epochs_since_improvement_ = 0;
        return SchedulerDecision::Continue;
    }
    ++epochs_since_improvement_;
    if (epochs_since_improvement_ < config_.patience) return SchedulerDecision::Continue;

    epochs_since_improvement_ = 0;
    const double reduced = lr_ / config_.factor;
    if (reduced < config_.min_lr) {
        restore_best(model);
        return SchedulerDecision::Stop;
    }
    lr_ = reduced;
    return SchedulerDecision::ReducedLr;
}

void PatienceScheduler::restore_best(Model& model) const {
    if (best_model_) model = *best_model_;
}

} // namespace cil
