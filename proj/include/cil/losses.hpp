#pragma once

#include <utility>
#include <vector>

#include "cil/tensor.hpp"

namespace cil {

enum class LossKind {
    CrossEntropy,         // softmax over every class seen so far
    CrossEntropyIntraTask // softmax restricted to each sample's own task
};

/// Sum is the literal form of the loss definitions; Mean averages per
/// sample (within each task term for the intra-task loss) so learning
/// rates transfer across batch sizes.
enum class Reduction { Sum, Mean };

struct LossResult {
    double value = 0.0;
    Tensor logit_grad; // batch x logit width
};

/// Softmax cross-entropy over the whole head. Gradient at the logits is
/// softmax(logits) - one_hot(label), scaled by the reduction.
LossResult cross_entropy(const Tensor& logits, const std::vector<int>& labels,
                         Reduction reduction);

/// The intra-task variant: each sample's softmax is restricted to its own
/// task's logit slice, per-task terms are combined with a 1/n_tasks factor
/// (Sum) or averaged within each task and then over the tasks present in
/// the batch (Mean). Gradient entries outside a sample's task slice are
/// exactly zero, so no cross-task discriminative pressure exists.
///
/// Mean gradients equal Sum gradients scaled by n_tasks / (present_tasks *
/// task_batch_count) per task term; for a batch with equally many samples
/// from every task this is the single factor batch_size / n_tasks.
LossResult cross_entropy_intra_task(const Tensor& logits, const std::vector<int>& labels,
                                    const std::vector<int>& class_to_task, int n_tasks,
                                    Reduction reduction);

LossResult compute_loss(LossKind kind, const Tensor& logits, const std::vector<int>& labels,
                        const std::vector<int>& class_to_task, int n_tasks,
                        Reduction reduction);

/// Contiguous [first, last) logit ranges per 1-based task index, derived
/// from the class -> task map. Throws if a task's classes are not a
/// contiguous block.
std::vector<std::pair<int, int>> task_slices(const std::vector<int>& class_to_task,
                                             int n_tasks);

} // namespace cil
