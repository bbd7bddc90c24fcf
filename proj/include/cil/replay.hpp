#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "cil/data.hpp"
#include "cil/nn.hpp"

namespace cil {

enum class MemoryMode { Growing, Fixed, Max };
enum class SelectionStrategy { Herding, Random };

struct MemoryConfig {
    MemoryMode mode = MemoryMode::Growing;
    int per_class = 20; // growing mode: exemplars per class
    int total = 2000;   // fixed mode: total budget across all classes
    SelectionStrategy strategy = SelectionStrategy::Herding;
};

/// Greedy nearest-to-mean selection: with mu the mean of all candidate
/// features, step k picks the unchosen index minimizing
/// || mu - (f(x) + sum of already chosen) / k ||_2, ties going to the lowest
/// index. Returns the selection order. The first q entries equal the result
/// of a budget-q run (prefix property), which makes later truncation cheap.
std::vector<std::size_t> herding_select(const std::vector<std::vector<double>>& features,
                                        std::size_t budget);

/// Rehearsal memory: per-class exemplar lists kept in selection order.
///  - growing: every class holds min(per_class, available) exemplars.
///  - fixed: uniform quota floor(total / classes seen); adding classes
///    truncates old lists to the new quota (selection-order prefixes).
///  - max: keeps every training example of every seen class (upper bound).
class MemoryBuffer {
  public:
    MemoryBuffer() = default;
    MemoryBuffer(MemoryConfig config, std::uint64_t seed);

    /// Inserts the task's classes, selecting exemplars from its train split
    /// with features from the model's current extractor.
    void update(const TaskSpec& task, const Model& model);

    /// All stored exemplars, classes in ascending order, each class in
    /// selection order.
    std::vector<LabeledExample> exemplars() const;

    const std::map<int, std::vector<LabeledExample>>& per_class() const { return per_class_; }
    const MemoryConfig& config() const { return config_; }
    int total_stored() const;
    bool empty() const { return per_class_.empty(); }

    /// Text dump: one "class <c> : <id> <id> ..." line per class.
    std::string manifest() const;

  private:
    MemoryConfig config_;
    std::uint64_t seed_ = 0;
    std::map<int, std::vector<LabeledExample>> per_class_;
};

/// Free-function form of MemoryBuffer::update.
MemoryBuffer update_memory(MemoryBuffer buffer, const TaskSpec& task, const Model& model);

/// Current-task train data followed by every buffered exemplar. Epoch-level
/// shuffling is the training loop's job.
std::vector<LabeledExample> training_pool(const MemoryBuffer& buffer, const TaskSpec& current);

} // namespace cil
