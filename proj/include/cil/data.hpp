#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "cil/tensor.hpp"

namespace cil {

struct LabeledExample {
    std::int64_t id = 0;
    int label = 0;
    std::vector<double> input;
};

/// One task: its class block plus train/validation/test splits. Labels are
/// already remapped to the global contiguous layout.
struct TaskSpec {
    int task_index = 0; // 1-based
    std::vector<int> classes;
    std::vector<LabeledExample> train;
    std::vector<LabeledExample> val;
    std::vector<LabeledExample> test;
};

/// The ordered task sequence with its class ordering. Classes are disjoint
/// across tasks and the label layout is block-contiguous: task t owns the
/// label range [sum of earlier block sizes, +block size).
struct TaskSequence {
    std::vector<TaskSpec> tasks;
    std::vector<int> class_order; // class_order[j] = original class placed at label j
    std::uint64_t seed = 0;
    int input_dim = 0;
    int n_classes = 0;

    int n_tasks() const { return static_cast<int>(tasks.size()); }

    /// class index -> 1-based task index, total over all classes.
    std::vector<int> class_to_task() const;

    /// Number of classes in tasks 1..k.
    int cumulative_classes(int k) const;

    /// Concatenated test sets of tasks 1..k, in task order.
    std::vector<const LabeledExample*> cumulative_test(int k) const;
};

/// Stratified validation split: per class, ceil(fraction * n) examples move
/// to the validation side. Both outputs keep the input's relative order and
/// their union is exactly the input. Deterministic per seed.
std::pair<std::vector<LabeledExample>, std::vector<LabeledExample>>
split_validation(const std::vector<LabeledExample>& train, double fraction, std::uint64_t seed);

/// Splits a labeled dataset into n_tasks blocks following class_order and
/// remaps labels so task t occupies a contiguous label block. Examples get
/// fresh sequential ids (train, then val, then test, task by task).
TaskSequence build_task_sequence(const std::vector<LabeledExample>& train,
                                 const std::vector<LabeledExample>& test, int n_tasks,
                                 const std::vector<int>& class_order, double val_fraction,
                                 std::uint64_t seed);

/// Identity ordering 0..n_classes-1.
std::vector<int> identity_order(int n_classes);

/// Seed-shuffled class permutation.
std::vector<int> shuffled_order(int n_classes, std::uint64_t seed);

/// IDX-format reader (big-endian dimensions, unsigned-byte pixels). Pixels
/// are scaled to [0,1]; record order is preserved; ids are file positions.
std::vector<LabeledExample> load_idx(const std::filesystem::path& images_path,
                                     const std::filesystem::path& labels_path);

/// Two tasks of two classes on (2 + distractor_dims)-dimensional inputs.
/// Dimension 0 carries a +-1 "color" code that separates the classes inside
/// each task; dimension 1 carries a +-1 "shape" code that only separates
/// classes across tasks. Gaussian noise of the given sigma is added to all
/// dimensions and the remaining dimensions are pure noise. Test data uses a
/// seed stream disjoint from train.
TaskSequence gen_crosstask(int n_per_class, double noise_sigma, int distractor_dims,
                           std::uint64_t seed);

struct BlobImageConfig {
    int n_classes = 10;
    int n_tasks = 5;
    int n_per_class = 100;      // train, before the validation split
    int test_per_class = 100;
    int height = 8;
    int width = 8;
    double noise_sigma = 0.25;
    int anchor_count = 6;       // shared bump-position vocabulary
    double bump_sigma = 1.6;    // bump radius in pixels
};

/// Small grayscale images built from per-class mixtures of Gaussian bumps
/// whose positions come from a shared anchor vocabulary, so classes from
/// different tasks overlap and cross-task discrimination stays non-trivial.
TaskSequence gen_blob_images(const BlobImageConfig& config, std::uint64_t seed);

/// Writes manifest.json plus one binary file per task split into dir.
void save_sequence(const TaskSequence& sequence, const std::filesystem::path& dir);

/// Reloads a saved sequence bit-identically.
TaskSequence load_sequence(const std::filesystem::path& dir);

/// FNV-1a over labels and raw input bytes, for manifest fingerprints.
std::uint64_t dataset_fingerprint(const TaskSequence& sequence);

} // namespace cil
