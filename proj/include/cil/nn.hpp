#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include "cil/tensor.hpp"

namespace cil {

/// A learnable tensor together with its gradient and momentum buffers.
/// Frozen parameters keep their value bit-identical across optimizer steps.
struct Parameter {
    Tensor value;
    Tensor gradient;
    Tensor momentum;
    bool trainable = true;

    Parameter() = default;
    explicit Parameter(Tensor v)
        : value(std::move(v)), gradient(value.shape), momentum(value.shape) {}
};

struct DenseLayer {
    Parameter weight; // out x in
    Parameter bias;   // out
    bool relu = false;

    std::size_t out_dim() const { return weight.value.rows(); }
    std::size_t in_dim() const { return weight.value.cols(); }
};

/// Feature extractor (dense ReLU stack) plus a linear classification head
/// that grows by one output per class as tasks arrive. The head keeps a
/// class -> task map so task slices can be recovered from logits alone.
class Model {
public:
    Model() = default;
    Model(int input_dim, const std::vector<int>& hidden_widths, std::uint64_t seed);

    int input_dim() const { return input_dim_; }
    int feature_dim() const;
    int n_classes() const { return static_cast<int>(class_to_task_.size()); }
    int n_tasks() const { return n_tasks_; }
    const std::vector<int>& class_to_task() const { return class_to_task_; }

    /// Appends n_new classifier outputs for the next task. New rows get
    /// small uniform noise (scale 0.01) and zero bias; existing rows are
    /// left untouched.
    void add_task_classes(int n_new, std::uint64_t seed);

    /// Logits for a batch, truncated to the first n_classes_active outputs
    /// (-1 means the full head). With retain=true the activations are kept
    /// for a subsequent backward pass.
    Tensor forward(const Tensor& batch, int n_classes_active = -1, bool retain = false);

    /// Extractor output only, no caching.
    Tensor features(const Tensor& batch) const;

    /// Fills every parameter's gradient from the loss gradient at the
    /// logits of the last retained forward pass. Frozen parameters get
    /// zero gradient.
    void backward(const Tensor& logit_grad);

    void set_trainable(bool extractor, bool classifier);

    std::vector<Parameter*> parameters();
    std::vector<const Parameter*> parameters() const;

    std::vector<DenseLayer>& extractor_layers() { return extractor_; }
    const std::vector<DenseLayer>& extractor_layers() const { return extractor_; }
    DenseLayer& classifier() { return classifier_; }
    const DenseLayer& classifier() const { return classifier_; }

    bool has_retained_forward() const { return cache_.has_value(); }
    void drop_cache() { cache_.reset(); }

private:
    int input_dim_ = 0;
    int n_tasks_ = 0;
    std::vector<DenseLayer> extractor_;
    DenseLayer classifier_;
    std::vector<int> class_to_task_; // class index -> 1-based task index

    struct Cache {
        Tensor input;
        std::vector<Tensor> preacts; // one per extractor layer
        std::vector<Tensor> acts;    // post-activation, one per extractor layer
        int n_active = 0;
    };
    std::optional<Cache> cache_;

    Tensor run_extractor(const Tensor& batch, Cache* cache) const;
};

/// Flat binary snapshot of all parameter values ("CILM" format): magic,
/// version u32, parameter count u32, then rank/dims/values per parameter,
/// 64-bit little-endian.
void save_parameters(const Model& model, const std::filesystem::path& path);

/// Loads a snapshot into a model with identical parameter shapes.
void load_parameters(Model& model, const std::filesystem::path& path);

} // namespace cil
