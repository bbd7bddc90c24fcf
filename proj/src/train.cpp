#include "cil/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "cil/errors.hpp"
#include "cil/rng.hpp"

namespace cil {

namespace {

Tensor input_batch(const std::vector<LabeledExample>& data, const std::vector<std::size_t>& order,
                   std::size_t first, std::size_t last) {
    const std::size_t dim = data[order[first]].input.size();
    Tensor batch = Tensor::matrix(last - first, dim);
    for (std::size_t i = first; i < last; ++i) {
        const LabeledExample& ex = data[order[i]];
        if (ex.input.size() != dim) throw DataError("inconsistent input dimension in batch");
        for (std::size_t d = 0; d < dim; ++d) batch.at(i - first, d) = ex.input[d];
    }
    return batch;
}

std::vector<int> label_batch(const std::vector<LabeledExample>& data,
                             const std::vector<std::size_t>& order, std::size_t first,
                             std::size_t last) {
    std::vector<int> labels(last - first);
    for (std::size_t i = first; i < last; ++i) labels[i - first] = data[order[i]].label;
    return labels;
}

std::vector<std::size_t> full_order(std::size_t n) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    return order;
}

} // namespace

double evaluate_loss(Model& model, const std::vector<LabeledExample>& data,
                     const TrainConfig& config) {
    if (data.empty()) throw DataError("cannot evaluate a loss on an empty set");
    const auto order = full_order(data.size());
    const Tensor inputs = input_batch(data, order, 0, data.size());
    const std::vector<int> labels = label_batch(data, order, 0, data.size());
    const Tensor logits = model.forward(inputs);
    const LossResult loss = compute_loss(config.loss, logits, labels, model.class_to_task(),
                                         model.n_tasks(), Reduction::Mean);
    return loss.value;
}

double evaluate_accuracy(Model& model, const std::vector<LabeledExample>& data,
                         const std::vector<int>& classes) {
    if (data.empty()) throw DataError("cannot evaluate accuracy on an empty set");
    const auto order = full_order(data.size());
    const Tensor logits = model.forward(input_batch(data, order, 0, data.size()));
    long correct = 0;
    for (std::size_t i = 0; i < data.size(); ++i) {
        int best = -1;
        if (classes.empty()) {
            for (std::size_t c = 0; c < logits.cols(); ++c)
                if (best < 0 || logits.at(i, c) > logits.at(i, static_cast<std::size_t>(best)))
                    best = static_cast<int>(c);
        } else {
            for (int c : classes) {
                if (c < 0 || c >= static_cast<int>(logits.cols()))
                    throw UsageError("accuracy restriction names class " + std::to_string(c) +
                                     " outside the head");
                if (best < 0 || logits.at(i, static_cast<std::size_t>(c)) >
                                    logits.at(i, static_cast<std::size_t>(best)))
                    best = c;
            }
        }
        if (best == data[i].label) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(data.size());
}

void train_task(Model& model, const std::vector<LabeledExample>& pool,
                const std::vector<LabeledExample>& val, const TrainConfig& config,
                std::uint64_t seed) {
    if (config.max_epochs < 0) throw ConfigError("epoch count must be nonnegative");
    if (config.max_epochs == 0) return; // explicit no-op
    if (config.batch_size <= 0) throw ConfigError("batch size must be positive");
    if (pool.empty()) throw DataError("training pool is empty");
    if (val.empty()) throw DataError("validation set is empty");

    PatienceScheduler scheduler(config.optimizer.learning_rate, config.scheduler);
    Rng shuffle_rng(derive_seed(seed, 0xE1));
    std::vector<std::size_t> order = full_order(pool.size());
    const std::size_t batch = static_cast<std::size_t>(config.batch_size);

    for (int epoch = 1; epoch <= config.max_epochs; ++epoch) {
        shuffle_rng.shuffle(order);
        for (std::size_t first = 0; first < order.size(); first += batch) {
            const std::size_t last = std::min(first + batch, order.size());
            const Tensor inputs = input_batch(pool, order, first, last);
            const std::vector<int> labels = label_batch(pool, order, first, last);
            const Tensor logits = model.forward(inputs, -1, true);
            const LossResult loss = compute_loss(config.loss, logits, labels,
                                                 model.class_to_task(), model.n_tasks(),
                                                 config.reduction);
            if (!std::isfinite(loss.value))
                throw NumericalError("training loss diverged at epoch " + std::to_string(epoch));
            model.backward(loss.logit_grad);
            OptimizerConfig step = config.optimizer;
            step.learning_rate = scheduler.lr();
            sgd_step(model, step);
        }
        const double val_loss = evaluate_loss(model, val, config);
        if (!std::isfinite(val_loss))
            throw NumericalError("validation loss diverged at epoch " + std::to_string(epoch));
        if (scheduler.observe(val_loss, model) == SchedulerDecision::Stop) break;
    }
    scheduler.restore_best(model);
    model.drop_cache();
}

void balanced_finetune(Model& model, const MemoryBuffer& buffer,
                       const std::vector<LabeledExample>& val, const TrainConfig& config,
                       std::uint64_t seed) {
    if (buffer.empty()) throw UsageError("balanced fine-tuning needs a non-empty memory buffer");
    model.set_trainable(false, true);
    TrainConfig step2 = config;
    step2.loss = LossKind::CrossEntropy; // both baselines calibrate heads with plain CE
    train_task(model, buffer.exemplars(), val, step2, seed);
    model.set_trainable(true, true);
}

double lr_search(const Model& model, const TaskSpec& task, const std::vector<double>& grid,
                 const TrainConfig& config, int probe_epochs, std::uint64_t seed) {
    if (grid.empty()) throw ConfigError("learning-rate grid is empty");
    for (double lr : grid)
        if (!(lr > 0.0)) throw ConfigError("learning-rate candidates must be positive");
    if (grid.size() == 1) return grid.front(); // nothing to compare

    probe_epochs = std::clamp(probe_epochs, 1, 20);
    double best_lr = 0.0;
    double best_acc = -1.0;
    std::vector<double> diverged;
    for (std::size_t gi = 0; gi < grid.size(); ++gi) {
        const double lr = grid[gi];
        Model probe = model;
        TrainConfig probe_config = config;
        probe_config.optimizer.learning_rate = lr;
        probe_config.max_epochs = probe_epochs;
        try {
            train_task(probe, task.train, task.val, probe_config, derive_seed(seed, 0xA1, gi));
        } catch (const NumericalError&) {
            diverged.push_back(lr);
            continue;
        }
        const double acc = evaluate_accuracy(probe, task.val, task.classes);
        if (acc > best_acc || (acc == best_acc && lr > best_lr)) {
            best_acc = acc;
            best_lr = lr;
        }
    }
    if (best_acc < 0.0) {
        std::ostringstream os;
        os << "every learning-rate candidate diverged:";
        for (double lr : diverged) os << " " << lr;
        throw NumericalError(os.str());
    }
    return best_lr;
}

RunResult run_sequence(const TaskSequence& sequence, const ExperimentConfig& config) {
    if (sequence.tasks.empty()) throw DataError("task sequence is empty");
    if (config.epochs_step1 <= 0 || config.epochs_step2 < 0)
        throw ConfigError("per-step epoch budgets must be positive (step 2 may be 0)");

    RunResult result;
    result.model = Model(sequence.input_dim, config.hidden, derive_seed(config.seed, 0xC0));
    MemoryBuffer buffer(config.memory, derive_seed(config.seed, 0xC1));
    result.log.n_tasks = sequence.n_tasks();
    result.log.class_to_task = sequence.class_to_task();

    double current_lr = config.optimizer.learning_rate;
    for (const TaskSpec& task : sequence.tasks) {
        const int t = task.task_index;
        result.model.add_task_classes(static_cast<int>(task.classes.size()),
                                      derive_seed(config.seed, 0xC2, static_cast<std::uint64_t>(t)));

        TrainConfig step1;
        step1.loss = config.loss;
        step1.optimizer = config.optimizer;
        step1.scheduler = config.scheduler;
        step1.max_epochs = config.epochs_step1;
        step1.batch_size = config.batch_size;

        const bool search = config.lr_search.mode == LrSearchMode::EveryTask ||
                            (config.lr_search.mode == LrSearchMode::FirstTask && t == 1);
        if (search) {
            const std::vector<double>& grid =
                (t == 1) ? config.lr_search.grid_first : config.lr_search.grid_later;
            current_lr = lr_search(result.model, task, grid, step1, config.lr_search.probe_epochs,
                                   derive_seed(config.seed, 0xC3, static_cast<std::uint64_t>(t)));
        }
        step1.optimizer.learning_rate = current_lr;
        result.chosen_lrs.push_back(current_lr);

        const std::vector<LabeledExample> pool = training_pool(buffer, task);
        train_task(result.model, pool, task.val, step1,
                   derive_seed(config.seed, 0xC4, static_cast<std::uint64_t>(t)));

        buffer.update(task, result.model);
        result.buffer_manifests.push_back(buffer.manifest());

        if (config.epochs_step2 > 0) {
            TrainConfig step2 = step1;
            step2.max_epochs = config.epochs_step2;
            balanced_finetune(result.model, buffer, task.val, step2,
                              derive_seed(config.seed, 0xC5, static_cast<std::uint64_t>(t)));
        }

        result.snapshots.emplace(t, result.model);

        const std::vector<const LabeledExample*> test = sequence.cumulative_test(t);
        const std::size_t chunk = 512;
        for (std::size_t first = 0; first < test.size(); first += chunk) {
            const std::size_t last = std::min(first + chunk, test.size());
            Tensor inputs = Tensor::matrix(last - first, static_cast<std::size_t>(sequence.input_dim));
            for (std::size_t i = first; i < last; ++i)
                for (std::size_t d = 0; d < test[i]->input.size(); ++d)
                    inputs.at(i - first, d) = test[i]->input[d];
            const Tensor logits = result.model.forward(inputs);
            for (std::size_t i = first; i < last; ++i) {
                PredictionRecord rec;
                rec.snapshot = t;
                rec.example_id = test[i]->id;
                rec.label = test[i]->label;
                rec.label_task = result.log.class_to_task[static_cast<std::size_t>(rec.label)];
                rec.logits.resize(logits.cols());
                for (std::size_t c = 0; c < logits.cols(); ++c) rec.logits[c] = logits.at(i - first, c);
                result.log.records.push_back(std::move(rec));
            }
        }
    }
    return result;
}

} // namespace cil
