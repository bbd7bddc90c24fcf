#pragma once

#include <cstdint>
#include <map>
#include <vector>

#include "cil/data.hpp"
#include "cil/losses.hpp"
#include "cil/metrics.hpp"
#include "cil/nn.hpp"
#include "cil/optim.hpp"
#include "cil/replay.hpp"

namespace cil {

/// Settings for one training session (one task, one step).
struct TrainConfig {
    LossKind loss = LossKind::CrossEntropy;
    Reduction reduction = Reduction::Mean;
    OptimizerConfig optimizer; // learning_rate is the session's starting rate
    SchedulerConfig scheduler;
    int max_epochs = 200;
    int batch_size = 32;
};

/// Mini-batch SGD over the pool with patience scheduling keyed to the
/// validation loss; the model ends at its best-validation parameters.
/// Mutates the model in place. Throws NumericalError on divergence.
void train_task(Model& model, const std::vector<LabeledExample>& pool,
                const std::vector<LabeledExample>& val, const TrainConfig& config,
                std::uint64_t seed);

/// Mean loss of the configured kind over a dataset (no parameter updates).
double evaluate_loss(Model& model, const std::vector<LabeledExample>& data,
                     const TrainConfig& config);

/// Fraction of examples whose argmax over `classes` (all classes when
/// empty) matches the label.
double evaluate_accuracy(Model& model, const std::vector<LabeledExample>& data,
                         const std::vector<int>& classes = {});

/// Second step of the per-task procedure: extractor frozen, classifier
/// trained with plain cross-entropy on the buffer only, patience schedule
/// restarted at the configured rate. Validation stays the current task's
/// validation split. Leaves all parameters trainable afterwards.
void balanced_finetune(Model& model, const MemoryBuffer& buffer,
                       const std::vector<LabeledExample>& val, const TrainConfig& config,
                       std::uint64_t seed);

enum class LrSearchMode { Off, FirstTask, EveryTask };

struct LrSearchConfig {
    LrSearchMode mode = LrSearchMode::FirstTask;
    std::vector<double> grid_first = {0.5, 0.1, 0.05};
    std::vector<double> grid_later = {0.1, 0.05, 0.01, 0.005, 0.001};
    int probe_epochs = 10; // hard cap 20
};

/// Probes each candidate rate with a short fine-tune on the new task only
/// (model copied, original untouched) and returns the rate with the best
/// within-task validation accuracy; ties go to the larger rate. Throws
/// NumericalError when every candidate diverges.
double lr_search(const Model& model, const TaskSpec& task, const std::vector<double>& grid,
                 const TrainConfig& config, int probe_epochs, std::uint64_t seed);

/// One full incremental run.
struct ExperimentConfig {
    LossKind loss = LossKind::CrossEntropy;
    MemoryConfig memory;
    OptimizerConfig optimizer;
    SchedulerConfig scheduler;
    LrSearchConfig lr_search;
    std::vector<int> hidden = {64};
    int epochs_step1 = 200;
    int epochs_step2 = 100;
    int batch_size = 32;
    std::uint64_t seed = 1;
};

struct RunResult {
    Model model;                 // final parameters (last snapshot)
    PredictionLog log;           // one record block per snapshot
    std::map<int, Model> snapshots;
    std::vector<std::string> buffer_manifests; // buffer state after each task
    std::vector<double> chosen_lrs;            // step-1 starting rate per task
};

/// For each task: grow the head, (optionally) search the rate, train on
/// current data plus memory, refresh the memory, run the balanced
/// fine-tuning step, snapshot, and log test logits for all tasks seen.
RunResult run_sequence(const TaskSequence& sequence, const ExperimentConfig& config);

} // namespace cil
