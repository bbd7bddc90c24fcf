// Independent reference implementations used to check the library: finite
// differences for gradients, literal nested-loop metric computations, and a
// naive recomputing greedy for exemplar selection. Everything here is
// written from the definitions, not from the library code paths.
#pragma once

#include <cmath>
#include <cstdint>
#include <set>
#include <vector>

#include "cil/metrics.hpp"
#include "cil/nn.hpp"
#include "cil/rng.hpp"
#include "cil/tensor.hpp"

namespace oracles {

// ---- finite differences -------------------------------------------------

// Central differences over every trainable parameter of the model. The
// loss closure maps logits to a scalar. Returns the worst error measured
// as |fd - analytic| / max(|fd|, |analytic|, floor); the floor keeps the
// measure meaningful when both slopes are tiny.
template <typename LossValueFn, typename LossGradFn>
double fd_max_error(cil::Model& model, const cil::Tensor& inputs, LossValueFn loss_value,
                    LossGradFn loss_grad, double eps = 1e-4, double floor = 1e-2) {
    const cil::Tensor logits = model.forward(inputs, -1, true);
    model.backward(loss_grad(logits));

    std::vector<std::vector<double>> analytic;
    for (cil::Parameter* p : model.parameters()) analytic.push_back(p->gradient.values);

    double worst = 0.0;
    const auto params = model.parameters();
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        cil::Parameter* p = params[pi];
        if (!p->trainable) continue;
        for (std::size_t i = 0; i < p->value.size(); ++i) {
            const double orig = p->value[i];
            p->value[i] = orig + eps;
            const double up = loss_value(model.forward(inputs));
            p->value[i] = orig - eps;
            const double down = loss_value(model.forward(inputs));
            p->value[i] = orig;
            const double fd = (up - down) / (2.0 * eps);
            const double g = analytic[pi][i];
            const double err = std::fabs(fd - g) / std::max({std::fabs(fd), std::fabs(g), floor});
            worst = std::max(worst, err);
        }
    }
    return worst;
}

// Finite differences sit on the wrong side of a rectifier kink when some
// pre-activation is close to zero; batches are regenerated until all
// pre-activations clear this margin.
inline bool relu_margin_ok(const cil::Model& model, const cil::Tensor& inputs,
                           double margin = 1e-2) {
    cil::Tensor current = inputs;
    for (const cil::DenseLayer& layer : model.extractor_layers()) {
        cil::Tensor next = cil::Tensor::matrix(current.rows(), layer.out_dim());
        for (std::size_t r = 0; r < current.rows(); ++r) {
            for (std::size_t o = 0; o < layer.out_dim(); ++o) {
                double z = layer.bias.value[o];
                for (std::size_t c = 0; c < current.cols(); ++c)
                    z += layer.weight.value.at(o, c) * current.at(r, c);
                if (layer.relu && std::fabs(z) < margin) return false;
                next.at(r, o) = layer.relu ? std::max(z, 0.0) : z;
            }
        }
        current = next;
    }
    return true;
}

// ---- literal metric computations ---------------------------------------

inline int predict_over(const std::vector<double>& logits, const std::vector<int>& class_to_task,
                        int task_lo, int task_hi) {
    int best = -1;
    for (std::size_t c = 0; c < logits.size(); ++c) {
        if (class_to_task[c] < task_lo || class_to_task[c] > task_hi) continue;
        if (best < 0 || logits[c] > logits[static_cast<std::size_t>(best)])
            best = static_cast<int>(c);
    }
    return best;
}

inline double cumulative_b(const cil::PredictionLog& log, int t, int k) {
    long correct = 0, total = 0;
    for (const cil::PredictionRecord& rec : log.records) {
        if (rec.snapshot != t || rec.label_task > k) continue;
        ++total;
        if (predict_over(rec.logits, log.class_to_task, 1, k) == rec.label) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(total);
}

inline double classic_a(const cil::PredictionLog& log, int t, int k) {
    long correct = 0, total = 0;
    for (const cil::PredictionRecord& rec : log.records) {
        if (rec.snapshot != t || rec.label_task != k) continue;
        ++total;
        if (predict_over(rec.logits, log.class_to_task, 1, t) == rec.label) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(total);
}

inline double classic_A(const cil::PredictionLog& log, int t) {
    double sum = 0.0;
    for (int k = 1; k <= t; ++k) sum += classic_a(log, t, k);
    return sum / static_cast<double>(t);
}

// f_k = max over i in {k..t-1} of a[i][k], minus a[t][k]
inline double classic_f(const cil::PredictionLog& log, int t, int k) {
    double peak = classic_a(log, k, k);
    for (int i = k; i < t; ++i) peak = std::max(peak, classic_a(log, i, k));
    return peak - classic_a(log, t, k);
}

inline double classic_F(const cil::PredictionLog& log, int t) {
    double sum = 0.0;
    for (int k = 1; k < t; ++k) sum += classic_f(log, t, k);
    return sum / static_cast<double>(t - 1);
}

// cumulative f_k = max over defined i (i >= k) of b[i][k], minus b[t][k]
inline double cumulative_f(const cil::PredictionLog& log, int t, int k) {
    double peak = cumulative_b(log, k, k);
    for (int i = k; i <= t; ++i) peak = std::max(peak, cumulative_b(log, i, k));
    return peak - cumulative_b(log, t, k);
}

inline double cumulative_F(const cil::PredictionLog& log, int t) {
    double sum = 0.0;
    for (int k = 1; k < t; ++k) sum += cumulative_f(log, t, k);
    return sum / static_cast<double>(t - 1);
}

inline double taw(const cil::PredictionLog& log, int t) {
    double sum = 0.0;
    for (int g = 1; g <= t; ++g) {
        long correct = 0, total = 0;
        for (const cil::PredictionRecord& rec : log.records) {
            if (rec.snapshot != t || rec.label_task != g) continue;
            ++total;
            if (predict_over(rec.logits, log.class_to_task, g, g) == rec.label) ++correct;
        }
        sum += static_cast<double>(correct) / static_cast<double>(total);
    }
    return sum / static_cast<double>(t);
}

inline double tinf(const cil::PredictionLog& log, int t) {
    long correct = 0, total = 0;
    for (const cil::PredictionRecord& rec : log.records) {
        if (rec.snapshot != t) continue;
        ++total;
        const int predicted = predict_over(rec.logits, log.class_to_task, 1, t);
        if (log.class_to_task[static_cast<std::size_t>(predicted)] == rec.label_task) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(total);
}

// Random but structurally valid log: every example appears at its own task's
// snapshot and every later one.
inline cil::PredictionLog random_log(std::uint64_t seed, int max_tasks = 5,
                                     int max_examples = 40) {
    cil::Rng rng(seed);
    cil::PredictionLog log;
    log.n_tasks = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(max_tasks)));
    std::vector<int> first_class(static_cast<std::size_t>(log.n_tasks) + 1, 0);
    for (int task = 1; task <= log.n_tasks; ++task) {
        first_class[static_cast<std::size_t>(task)] = static_cast<int>(log.class_to_task.size());
        const int width = 1 + static_cast<int>(rng.below(3));
        for (int c = 0; c < width; ++c) log.class_to_task.push_back(task);
    }

    struct Example {
        std::int64_t id;
        int label;
        int task;
    };
    std::vector<Example> examples;
    const int n = log.n_tasks +
                  static_cast<int>(rng.below(static_cast<std::uint64_t>(
                      std::max(1, max_examples - log.n_tasks))));
    for (int i = 0; i < n; ++i) {
        const int label = static_cast<int>(rng.below(log.class_to_task.size()));
        examples.push_back({i, label, log.class_to_task[static_cast<std::size_t>(label)]});
    }
    // be sure every task owns at least one example
    for (int task = 1; task <= log.n_tasks; ++task) {
        bool found = false;
        for (const Example& ex : examples) found = found || ex.task == task;
        if (!found)
            examples.push_back({static_cast<std::int64_t>(examples.size()),
                                first_class[static_cast<std::size_t>(task)], task});
    }

    for (int t = 1; t <= log.n_tasks; ++t) {
        int width = 0;
        for (int task : log.class_to_task)
            if (task <= t) ++width;
        for (const Example& ex : examples) {
            if (ex.task > t) continue;
            cil::PredictionRecord rec;
            rec.snapshot = t;
            rec.example_id = ex.id;
            rec.label = ex.label;
            rec.label_task = ex.task;
            for (int c = 0; c < width; ++c) rec.logits.push_back(rng.uniform(-1.0, 1.0));
            log.records.push_back(std::move(rec));
        }
    }
    return log;
}

// ---- naive greedy selection ---------------------------------------------

// Same objective as the library's selection but recomputed from scratch at
// every step: distance of (candidate + chosen prefix)/k to the mean, ties
// to the lowest index. Summation follows selection order so agreement is
// exact, not approximate.
inline std::vector<std::size_t> greedy_select(const std::vector<std::vector<double>>& features,
                                              std::size_t budget) {
    const std::size_t dim = features.front().size();
    std::vector<double> mean(dim, 0.0);
    for (const std::vector<double>& f : features)
        for (std::size_t d = 0; d < dim; ++d) mean[d] += f[d];
    for (double& v : mean) v /= static_cast<double>(features.size());

    std::vector<std::size_t> chosen;
    for (std::size_t k = 1; k <= budget; ++k) {
        // prefix sum rebuilt from scratch, accumulated in selection order
        std::vector<double> prefix(dim, 0.0);
        for (std::size_t j : chosen)
            for (std::size_t d = 0; d < dim; ++d) prefix[d] += features[j][d];
        std::size_t best = features.size();
        double best_dist = 0.0;
        for (std::size_t i = 0; i < features.size(); ++i) {
            bool taken = false;
            for (std::size_t j : chosen) taken = taken || j == i;
            if (taken) continue;
            double dist = 0.0;
            for (std::size_t d = 0; d < dim; ++d) {
                const double diff = mean[d] - (features[i][d] + prefix[d]) / static_cast<double>(k);
                dist += diff * diff;
            }
            if (best == features.size() || dist < best_dist) {
                best = i;
                best_dist = dist;
            }
        }
        chosen.push_back(best);
    }
    return chosen;
}

} // namespace oracles
