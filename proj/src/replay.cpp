#include "cil/replay.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "cil/errors.hpp"
#include "cil/rng.hpp"

namespace cil {

std::vector<std::size_t> herding_select(const std::vector<std::vector<double>>& features,
                                        std::size_t budget) {
    if (features.empty()) throw DataError("herding needs at least one candidate");
    if (budget == 0 || budget > features.size())
        throw UsageError("herding budget must lie in [1, candidate count]");
    const std::size_t dim = features.front().size();
    for (const std::vector<double>& f : features)
        if (f.size() != dim) throw DataError("herding candidates must share a dimension");

    std::vector<double> mean(dim, 0.0);
    for (const std::vector<double>& f : features)
        for (std::size_t d = 0; d < dim; ++d) mean[d] += f[d];
    for (double& v : mean) v /= static_cast<double>(features.size());

    std::vector<std::size_t> chosen;
    std::vector<bool> used(features.size(), false);
    std::vector<double> running(dim, 0.0); // sum of chosen features
    for (std::size_t k = 1; k <= budget; ++k) {
        std::size_t best = features.size();
        double best_dist = 0.0;
        for (std::size_t i = 0; i < features.size(); ++i) {
            if (used[i]) continue;
            double dist = 0.0;
            for (std::size_t d = 0; d < dim; ++d) {
                const double diff = mean[d] - (features[i][d] + running[d]) / static_cast<double>(k);
                dist += diff * diff;
            }
            if (best == features.size() || dist < best_dist) {
                best = i;
                best_dist = dist;
            }
        }
        used[best] = true;
        chosen.push_back(best);
        for (std::size_t d = 0; d < dim; ++d) running[d] += features[best][d];
    }
    return chosen;
}

MemoryBuffer::MemoryBuffer(MemoryConfig config, std::uint64_t seed)
    : config_(config), seed_(seed) {
    if (config_.mode == MemoryMode::Growing && config_.per_class <= 0)
        throw ConfigError("growing memory needs a positive per-class budget");
    if (config_.mode == MemoryMode::Fixed && config_.total <= 0)
        throw ConfigError("fixed memory needs a positive total budget");
}

namespace {

// selection order over the candidate examples of one class
std::vector<std::size_t> selection_order(const std::vector<const LabeledExample*>& candidates,
                                         const Model& model, SelectionStrategy strategy,
                                         std::uint64_t seed, int class_index) {
    std::vector<std::size_t> order;
    if (strategy == SelectionStrategy::Random) {
        order.resize(candidates.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        Rng rng(derive_seed(seed, 0x81, static_cast<std::uint64_t>(class_index)));
        rng.shuffle(order);
        return order;
    }
    Tensor batch = Tensor::matrix(candidates.size(), candidates.front()->input.size());
    for (std::size_t i = 0; i < candidates.size(); ++i)
        for (std::size_t d = 0; d < candidates[i]->input.size(); ++d)
            batch.at(i, d) = candidates[i]->input[d];
    const Tensor feats = model.features(batch);
    std::vector<std::vector<double>> rows(candidates.size());
    for (std::size_t i = 0; i < candidates.size(); ++i) {
        rows[i].resize(feats.cols());
        for (std::size_t d = 0; d < feats.cols(); ++d) rows[i][d] = feats.at(i, d);
    }
    return herding_select(rows, rows.size());
}

} // namespace

void MemoryBuffer::update(const TaskSpec& task, const Model& model) {
    int n_classes_total = static_cast<int>(per_class_.size());
    for (int c : task.classes)
        if (!per_class_.count(c)) ++n_classes_total;

    std::size_t quota = 0;
    switch (config_.mode) {
        case MemoryMode::Growing:
            quota = static_cast<std::size_t>(config_.per_class);
            break;
        case MemoryMode::Fixed:
            quota = static_cast<std::size_t>(config_.total / n_classes_total);
            if (quota == 0)
                throw ConfigError("fixed memory budget " + std::to_string(config_.total) +
                                  " is below one exemplar per class for " +
                                  std::to_string(n_classes_total) + " classes");
            break;
        case MemoryMode::Max:
            break;
    }

    if (config_.mode == MemoryMode::Fixed) {
        for (auto& [c, list] : per_class_)
            if (list.size() > quota) list.resize(quota); // selection-order prefix
    }

    for (int c : task.classes) {
        if (per_class_.count(c)) continue;
        std::vector<const LabeledExample*> candidates;
        for (const LabeledExample& ex : task.train)
            if (ex.label == c) candidates.push_back(&ex);
        if (candidates.empty())
            throw DataError("task " + std::to_string(task.task_index) + " has no train data for class " +
                            std::to_string(c));

        std::vector<LabeledExample> stored;
        if (config_.mode == MemoryMode::Max) {
            for (const LabeledExample* ex : candidates) stored.push_back(*ex);
        } else {
            const std::vector<std::size_t> order =
                selection_order(candidates, model, config_.strategy, seed_, c);
            const std::size_t take = std::min(quota, candidates.size());
            for (std::size_t i = 0; i < take; ++i) stored.push_back(*candidates[order[i]]);
        }
        per_class_.emplace(c, std::move(stored));
    }
}

std::vector<LabeledExample> MemoryBuffer::exemplars() const {
    std::vector<LabeledExample> out;
    for (const auto& [c, list] : per_class_)
        for (const LabeledExample& ex : list) out.push_back(ex);
    return out;
}

int MemoryBuffer::total_stored() const {
    int n = 0;
    for (const auto& [c, list] : per_class_) n += static_cast<int>(list.size());
    return n;
}

std::string MemoryBuffer::manifest() const {
    std::ostringstream os;
    os << "memory mode=";
    switch (config_.mode) {
        case MemoryMode::Growing: os << "growing per_class=" << config_.per_class; break;
        case MemoryMode::Fixed: os << "fixed total=" << config_.total; break;
        case MemoryMode::Max: os << "max"; break;
    }
    os << " strategy="
       << (config_.strategy == SelectionStrategy::Herding ? "herding" : "random") << "\n";
    for (const auto& [c, list] : per_class_) {
        os << "class " << c << " :";
        for (const LabeledExample& ex : list) os << " " << ex.id;
        os << "\n";
    }
    return os.str();
}

MemoryBuffer update_memory(MemoryBuffer buffer, const TaskSpec& task, const Model& model) {
    buffer.update(task, model);
    return buffer;
}

std::vector<LabeledExample> training_pool(const MemoryBuffer& buffer, const TaskSpec& current) {
    std::vector<LabeledExample> pool = current.train;
    std::vector<LabeledExample> stored = buffer.exemplars();
    pool.insert(pool.end(), stored.begin(), stored.end());
    return pool;
}

} // namespace cil
