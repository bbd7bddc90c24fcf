#include "cil/losses.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "cil/errors.hpp"

namespace cil {

namespace {

// Max-shifted log-sum-exp plus softmax over logits[first, last); writes the
// softmax into grad_row[first, last) and returns -log p(label).
double slice_ce(const double* logits, int first, int last, int label, double* grad_row) {
    double mx = logits[first];
    for (int c = first + 1; c < last; ++c) mx = std::max(mx, logits[c]);
    double sum = 0.0;
    for (int c = first; c < last; ++c) sum += std::exp(logits[c] - mx);
    const double lse = mx + std::log(sum);
    for (int c = first; c < last; ++c) grad_row[c] = std::exp(logits[c] - mx) / sum;
    grad_row[label] -= 1.0;
    return lse - logits[label];
}

} // namespace

std::vector<std::pair<int, int>> task_slices(const std::vector<int>& class_to_task, int n_tasks) {
    std::vector<std::pair<int, int>> slices(static_cast<std::size_t>(n_tasks), {-1, -1});
    for (int c = 0; c < static_cast<int>(class_to_task.size()); ++c) {
        const int t = class_to_task[c];
        if (t < 1) throw ConfigError("class " + std::to_string(c) + " has invalid task index");
        if (t > n_tasks) continue;
        auto& [first, last] = slices[static_cast<std::size_t>(t - 1)];
        if (first < 0) {
            first = c;
            last = c + 1;
        } else if (c == last) {
            last = c + 1;
        } else {
            throw ConfigError("classes of task " + std::to_string(t) + " are not contiguous");
        }
    }
    for (int t = 0; t < n_tasks; ++t)
        if (slices[static_cast<std::size_t>(t)].first < 0)
            throw ConfigError("task " + std::to_string(t + 1) + " has no classes");
    return slices;
}

LossResult cross_entropy(const Tensor& logits, const std::vector<int>& labels,
                         Reduction reduction) {
    const std::size_t batch = logits.rows();
    const int width = static_cast<int>(logits.cols());
    if (labels.size() != batch)
        throw ConfigError("label count does not match batch size");
    LossResult result;
    result.logit_grad = Tensor::matrix(batch, static_cast<std::size_t>(width));
    if (batch == 0) return result;

    double total = 0.0;
    for (std::size_t n = 0; n < batch; ++n) {
        const int y = labels[n];
        if (y < 0 || y >= width)
            throw ConfigError("label " + std::to_string(y) + " outside the " +
                              std::to_string(width) + " seen classes");
        total += slice_ce(logits.values.data() + n * static_cast<std::size_t>(width), 0, width, y,
                          result.logit_grad.values.data() + n * static_cast<std::size_t>(width));
    }
    if (reduction == Reduction::Mean) {
        const double b = static_cast<double>(batch);
        total /= b;
        for (double& g : result.logit_grad.values) g /= b;
    }
    result.value = total;
    return result;
}

LossResult cross_entropy_intra_task(const Tensor& logits, const std::vector<int>& labels,
                                    const std::vector<int>& class_to_task, int n_tasks,
                                    Reduction reduction) {
    const std::size_t batch = logits.rows();
    const int width = static_cast<int>(logits.cols());
    if (labels.size() != batch)
        throw ConfigError("label count does not match batch size");
    if (n_tasks < 1) throw ConfigError("intra-task loss needs at least one task");
    if (static_cast<int>(class_to_task.size()) < width)
        throw ConfigError("class->task map narrower than the logit width");

    LossResult result;
    result.logit_grad = Tensor::matrix(batch, static_cast<std::size_t>(width));
    if (batch == 0) return result;

    const auto slices = task_slices(class_to_task, n_tasks);

    std::vector<double> task_sum(static_cast<std::size_t>(n_tasks), 0.0);
    std::vector<int> task_count(static_cast<std::size_t>(n_tasks), 0);
    std::vector<int> sample_task(batch);

    for (std::size_t n = 0; n < batch; ++n) {
        const int y = labels[n];
        if (y < 0 || y >= width)
            throw ConfigError("label " + std::to_string(y) + " outside the logit width");
        const int t = class_to_task[static_cast<std::size_t>(y)];
        if (t > n_tasks)
            throw ConfigError("label " + std::to_string(y) + " belongs to task " +
                              std::to_string(t) + " beyond the current " +
                              std::to_string(n_tasks));
        const auto [first, last] = slices[static_cast<std::size_t>(t - 1)];
        task_sum[static_cast<std::size_t>(t - 1)] +=
            slice_ce(logits.values.data() + n * static_cast<std::size_t>(width), first, last, y,
                     result.logit_grad.values.data() + n * static_cast<std::size_t>(width));
        ++task_count[static_cast<std::size_t>(t - 1)];
        sample_task[n] = t;
    }

    if (reduction == Reduction::Sum) {
        double total = 0.0;
        for (int t = 0; t < n_tasks; ++t) total += task_sum[static_cast<std::size_t>(t)];
        const double T = static_cast<double>(n_tasks);
        result.value = total / T;
        for (double& g : result.logit_grad.values) g /= T;
    } else {
        int present = 0;
        double total = 0.0;
        for (int t = 0; t < n_tasks; ++t) {
            if (task_count[static_cast<std::size_t>(t)] == 0) continue;
            ++present;
            total += task_sum[static_cast<std::size_t>(t)] /
                     static_cast<double>(task_count[static_cast<std::size_t>(t)]);
        }
        const double P = static_cast<double>(present);
        result.value = total / P;
        for (std::size_t n = 0; n < batch; ++n) {
            const double cnt =
                static_cast<double>(task_count[static_cast<std::size_t>(sample_task[n] - 1)]);
            double* row = result.logit_grad.values.data() + n * static_cast<std::size_t>(width);
            for (int c = 0; c < width; ++c) {
                row[c] /= cnt;
                row[c] /= P;
            }
        }
    }
    return result;
}

LossResult compute_loss(LossKind kind, const Tensor& logits, const std::vector<int>& labels,
                        const std::vector<int>& class_to_task, int n_tasks,
                        Reduction reduction) {
    if (kind == LossKind::CrossEntropy) return cross_entropy(logits, labels, reduction);
    return cross_entropy_intra_task(logits, labels, class_to_task, n_tasks, reduction);
}

} // namespace cil
