#pragma once

#include <optional>

#include "cil/nn.hpp"

namespace cil {

struct OptimizerConfig {
    double learning_rate = 0.1;
    double momentum = 0.9;
    double weight_decay = 0.0002;
    double clip_threshold = 10000.0; // global gradient norm
};

/// One SGD step with momentum, weight decay and global-norm clipping:
///   g <- clip(grad + wd * value), m <- momentum * m + g, value <- value - lr * m.
/// Frozen parameters are untouched. Throws NumericalError on non-finite
/// gradients without changing any value.
void sgd_step(Model& model, const OptimizerConfig& config);

struct SchedulerConfig {
    int patience = 10;
    double factor = 3.0;
    double min_lr = 1e-4;
};

enum class SchedulerDecision { Continue, ReducedLr, Stop };

/// Reduce-on-plateau scheduling keyed to validation loss. Keeps a copy of
/// the best model so a session always ends on its best validation point.
class PatienceScheduler {
public:
    PatienceScheduler(double initial_lr, const SchedulerConfig& config);

    /// Call once per epoch. Snapshots on improvement; after `patience`
    /// non-improving epochs divides the rate by `factor`; once the rate
    /// would drop below min_lr, restores the best snapshot into `model`
    /// and signals Stop.
    SchedulerDecision observe(double val_loss, Model& model);

    double lr() const { return lr_; }
    double best_val_loss() const { return best_loss_; }
    bool has_best() const { return best_model_.has_value(); }

    /// Copies the best snapshot back into the model, if one was recorded.
    void restore_best(Model& model) const;

private:
    SchedulerConfig config_;
    double lr_;
    double best_loss_;
    int epochs_since_improvement_ = 0;
    std::optional<Model> best_model_;
};

} // namespace cil
