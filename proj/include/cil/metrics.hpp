#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace cil {

/// Logits of one test example under one model snapshot. The logit width is
/// the number of classes seen up to that snapshot.
struct PredictionRecord {
    int snapshot = 0; // 1-based task index of the evaluated snapshot
    std::int64_t example_id = 0;
    int label = 0;
    int label_task = 0; // 1-based, redundant with class_to_task but stored
    std::vector<double> logits;
};

/// Everything the metric suite needs: the class -> task map and one record
/// per (snapshot, test example). Snapshot t must cover every test example
/// of tasks 1..t exactly once.
struct PredictionLog {
    int n_tasks = 0;
    std::vector<int> class_to_task; // class index -> 1-based task
    std::vector<PredictionRecord> records;

    /// Number of classes belonging to tasks 1..k.
    int cumulative_classes(int k) const;

    /// Checks structural invariants: label/task consistency, logit widths,
    /// no duplicate (snapshot, id) pairs, and snapshot coverage (an example
    /// seen at one snapshot appears at every later one).
    void validate() const;
};

/// Text serialization, one record per line:
///   cil_predlog 1
///   tasks <n>
///   classes <n>
///   class_to_task <t per class>
///   <snapshot> <id> <label> <label_task> <logit...>
void save_log(const PredictionLog& log, const std::filesystem::path& path);

/// Parses and validates; parse errors name the offending line.
PredictionLog load_log(const std::filesystem::path& path);

/// Argmax over the classes of tasks 1..k only, ties to the lowest index.
int restricted_predict(const std::vector<double>& logits, int k,
                       const std::vector<int>& class_to_task);

/// Fraction of test examples of tasks 1..k whose restricted prediction at
/// level k is correct under snapshot t.
double cumulative_accuracy(const PredictionLog& log, int t, int k);

/// Lower-triangular matrix of per-task accuracies a[t][k] under full-head
/// argmax, the convention behind classic forgetting.
struct AccuracyMatrix {
    std::vector<std::vector<double>> a; // a[t-1][k-1], defined for k <= t

    double at(int t, int k) const;
    int n_rows() const { return static_cast<int>(a.size()); }
};

/// Lower-triangular matrix of cumulative accuracies b[t][k].
struct CumulativeLedger {
    std::vector<std::vector<double>> b; // b[t-1][k-1], defined for k <= t

    double at(int t, int k) const;
    int n_rows() const { return static_cast<int>(b.size()); }
};

AccuracyMatrix accuracy_matrix(const PredictionLog& log);
CumulativeLedger cumulative_ledger(const PredictionLog& log);

struct ForgettingReport {
    std::vector<double> f; // f[k-1] for k = 1..t-1
    double average = 0.0;  // F
};

/// f_k = max over i in {k..t-1} of a[i][k] minus a[t][k]; average over k < t.
/// Undefined at t = 1 (throws).
ForgettingReport classic_forgetting(const AccuracyMatrix& matrix, int t);

/// f_k = max over defined i of b[i][k] minus b[t][k]; average over k < t.
/// Undefined at t = 1 (throws).
ForgettingReport cumulative_forgetting(const CumulativeLedger& ledger, int t);

/// Per-task accuracies under full-head argmax at snapshot t plus their mean.
struct ClassicAccuracyReport {
    std::vector<double> a; // a[k-1] for k = 1..t
    double average = 0.0;  // A_t
};

ClassicAccuracyReport classic_accuracy(const PredictionLog& log, int t);

/// Task-aware accuracy: argmax restricted to the true task's classes,
/// averaged per task and then across tasks 1..t.
double task_aware_accuracy(const PredictionLog& log, int t);

/// Task-inference accuracy: fraction of snapshot-t examples whose full-head
/// argmax lands in a class of the true task.
double task_inference_accuracy(const PredictionLog& log, int t);

struct EvalReport {
    double a_taw = 0.0;
    double a_tinf = 0.0;
    std::vector<double> per_task_taw;  // within-task accuracy, task 1..t
    std::vector<double> per_task_tinf; // task-hit rate, task 1..t
};

EvalReport eval_report(const PredictionLog& log, int t);

/// The full metric suite as CSV. Header:
///   kind,t,k,a,b,f_classic,f_cumulative,A_t,F_t,F_sigma_t,A_taw,A_tinf
/// "cell" rows carry (t, k, a, b) plus forgetting entries where defined
/// (k < t, t >= 2); "summary" rows carry the per-snapshot aggregates.
/// Undefined fields stay empty. Numbers print with 17 significant digits
/// so reruns are byte-identical.
std::string metrics_csv(const PredictionLog& log);

} // namespace cil
