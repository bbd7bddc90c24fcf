#include "cil/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "cil/errors.hpp"

namespace cil {

int PredictionLog::cumulative_classes(int k) const {
    int count = 0;
    for (int task : class_to_task)
        if (task <= k) ++count;
    return count;
}

namespace {

// roster: per task, the ids of its test examples as seen anywhere in the log
std::map<int, std::set<std::int64_t>> task_rosters(const PredictionLog& log) {
    std::map<int, std::set<std::int64_t>> roster;
    for (const PredictionRecord& rec : log.records) roster[rec.label_task].insert(rec.example_id);
    return roster;
}

std::set<int> snapshots_present(const PredictionLog& log) {
    std::set<int> out;
    for (const PredictionRecord& rec : log.records) out.insert(rec.snapshot);
    return out;
}

std::string id_list(const std::set<std::int64_t>& ids, std::size_t cap = 20) {
    std::ostringstream os;
    std::size_t n = 0;
    for (std::int64_t id : ids) {
        if (n++ == cap) {
            os << " ...";
            break;
        }
        os << (n == 1 ? "" : " ") << id;
    }
    return os.str();
}

} // namespace

void PredictionLog::validate() const {
    if (n_tasks < 0) throw DataError("negative task count");
    for (std::size_t c = 0; c < class_to_task.size(); ++c) {
        const int task = class_to_task[c];
        if (task < 1 || task > n_tasks)
            throw DataError("class " + std::to_string(c) + " maps to task " + std::to_string(task) +
                            " outside 1.." + std::to_string(n_tasks));
    }
    std::set<std::pair<int, std::int64_t>> seen;
    for (const PredictionRecord& rec : records) {
        if (rec.snapshot < 1 || rec.snapshot > n_tasks)
            throw DataError("record snapshot " + std::to_string(rec.snapshot) + " outside 1.." +
                            std::to_string(n_tasks));
        if (rec.label < 0 || rec.label >= static_cast<int>(class_to_task.size()))
            throw DataError("record label " + std::to_string(rec.label) + " has no class entry");
        if (rec.label_task != class_to_task[static_cast<std::size_t>(rec.label)])
            throw DataError("record for example " + std::to_string(rec.example_id) +
                            " declares task " + std::to_string(rec.label_task) +
                            " but its label belongs to task " +
                            std::to_string(class_to_task[static_cast<std::size_t>(rec.label)]));
        if (rec.label_task > rec.snapshot)
            throw DataError("example " + std::to_string(rec.example_id) + " of task " +
                            std::to_string(rec.label_task) + " logged under earlier snapshot " +
                            std::to_string(rec.snapshot));
        const int want = cumulative_classes(rec.snapshot);
        if (static_cast<int>(rec.logits.size()) != want)
            throw DataError("record for example " + std::to_string(rec.example_id) +
                            " at snapshot " + std::to_string(rec.snapshot) + " has " +
                            std::to_string(rec.logits.size()) + " logits, expected " +
                            std::to_string(want));
        if (!seen.insert({rec.snapshot, rec.example_id}).second)
            throw DataError("duplicate record for example " + std::to_string(rec.example_id) +
                            " at snapshot " + std::to_string(rec.snapshot));
    }
    // coverage: every example of task g appears at every present snapshot >= g
    const auto roster = task_rosters(*this);
    for (int t : snapshots_present(*this)) {
        for (const auto& [g, ids] : roster) {
            if (g > t) continue;
            std::set<std::int64_t> missing = ids;
            for (const PredictionRecord& rec : records)
                if (rec.snapshot == t && rec.label_task == g) missing.erase(rec.example_id);
            if (!missing.empty())
                throw DataError("snapshot " + std::to_string(t) + " is missing task-" +
                                std::to_string(g) + " examples: " + id_list(missing));
        }
    }
}

void save_log(const PredictionLog& log, const std::filesystem::path& path) {
    std::ofstream os(path);
    if (!os) throw DataError("cannot open " + path.string() + " for writing");
    os << "cil_predlog 1\n";
    os << "tasks " << log.n_tasks << "\n";
    os << "classes " << log.class_to_task.size() << "\n";
    os << "class_to_task";
    for (int task : log.class_to_task) os << " " << task;
    os << "\n";
    char buf[40];
    for (const PredictionRecord& rec : log.records) {
        os << rec.snapshot << " " << rec.example_id << " " << rec.label << " " << rec.label_task;
        for (double v : rec.logits) {
            std::snprintf(buf, sizeof buf, " %.17g", v);
            os << buf;
        }
        os << "\n";
    }
    if (!os) throw DataError("write failure on " + path.string());
}

namespace {

[[noreturn]] void parse_fail(const std::filesystem::path& path, int lineno, const std::string& msg) {
    throw ParseError(path.string() + ":" + std::to_string(lineno) + ": " + msg);
}

} // namespace

PredictionLog load_log(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw DataError("cannot open " + path.string());
    PredictionLog log;
    std::string line;
    int lineno = 0;

    auto read_line = [&](const char* what) {
        ++lineno;
        if (!std::getline(is, line)) parse_fail(path, lineno, std::string("missing ") + what);
    };

    read_line("header");
    {
        std::istringstream ss(line);
        std::string magic;
        int version = 0;
        if (!(ss >> magic >> version) || magic != "cil_predlog")
            parse_fail(path, lineno, "expected 'cil_predlog <version>'");
        if (version != 1) parse_fail(path, lineno, "unsupported log version");
    }
    read_line("task count");
    {
        std::istringstream ss(line);
        std::string key;
        if (!(ss >> key >> log.n_tasks) || key != "tasks" || log.n_tasks < 1)
            parse_fail(path, lineno, "expected 'tasks <positive count>'");
    }
    int n_classes = 0;
    read_line("class count");
    {
        std::istringstream ss(line);
        std::string key;
        if (!(ss >> key >> n_classes) || key != "classes" || n_classes < 1)
            parse_fail(path, lineno, "expected 'classes <positive count>'");
    }
    read_line("class_to_task map");
    {
        std::istringstream ss(line);
        std::string key;
        if (!(ss >> key) || key != "class_to_task")
            parse_fail(path, lineno, "expected 'class_to_task <task per class>'");
        int task;
        while (ss >> task) log.class_to_task.push_back(task);
        if (static_cast<int>(log.class_to_task.size()) != n_classes)
            parse_fail(path, lineno, "class_to_task lists " +
                                         std::to_string(log.class_to_task.size()) +
                                         " entries, expected " + std::to_string(n_classes));
    }

    while (++lineno, std::getline(is, line)) {
        if (line.empty()) continue;
        std::istringstream ss(line);
        PredictionRecord rec;
        if (!(ss >> rec.snapshot >> rec.example_id >> rec.label >> rec.label_task))
            parse_fail(path, lineno, "expected '<snapshot> <id> <label> <task> <logits...>'");
        if (rec.snapshot < 1 || rec.snapshot > log.n_tasks)
            parse_fail(path, lineno, "snapshot " + std::to_string(rec.snapshot) + " outside 1.." +
                                         std::to_string(log.n_tasks));
        double v;
        while (ss >> v) {
            if (!std::isfinite(v)) parse_fail(path, lineno, "non-finite logit");
            rec.logits.push_back(v);
        }
        if (!ss.eof()) parse_fail(path, lineno, "unparsable logit value");
        // width must match the snapshot's class horizon
        int want = 0;
        for (int task : log.class_to_task)
            if (task <= rec.snapshot) ++want;
        if (static_cast<int>(rec.logits.size()) != want)
            parse_fail(path, lineno, "record has " + std::to_string(rec.logits.size()) +
                                         " logits, snapshot " + std::to_string(rec.snapshot) +
                                         " needs " + std::to_string(want));
        log.records.push_back(std::move(rec));
    }
    try {
        log.validate();
    } catch (const DataError& e) {
        throw ParseError(path.string() + ": " + e.what());
    }
    return log;
}

int restricted_predict(const std::vector<double>& logits, int k,
                       const std::vector<int>& class_to_task) {
    if (k < 1) throw UsageError("restriction level must be at least 1");
    int width = 0;
    for (int task : class_to_task)
        if (task <= k) ++width;
    if (width == 0) throw UsageError("no classes belong to tasks 1.." + std::to_string(k));
    if (width > static_cast<int>(logits.size()))
        throw UsageError("restriction level " + std::to_string(k) +
                         " needs " + std::to_string(width) + " logits, record has " +
                         std::to_string(logits.size()));
    int best = -1;
    for (std::size_t c = 0; c < logits.size() && c < class_to_task.size(); ++c) {
        if (class_to_task[c] > k) continue;
        if (best < 0 || logits[c] > logits[static_cast<std::size_t>(best)])
            best = static_cast<int>(c);
    }
    return best;
}

namespace {

std::vector<const PredictionRecord*> snapshot_records(const PredictionLog& log, int t) {
    std::vector<const PredictionRecord*> out;
    for (const PredictionRecord& rec : log.records)
        if (rec.snapshot == t) out.push_back(&rec);
    if (out.empty()) throw DataError("no records for snapshot " + std::to_string(t));
    return out;
}

} // namespace

double cumulative_accuracy(const PredictionLog& log, int t, int k) {
    if (k < 1 || k > t) throw UsageError("cumulative accuracy needs 1 <= k <= t");
    const auto records = snapshot_records(log, t);

    // every task-g example (g <= k) known to the log must be present at t
    const auto roster = task_rosters(log);
    for (const auto& [g, ids] : roster) {
        if (g > k) continue;
        std::set<std::int64_t> missing = ids;
        for (const PredictionRecord* rec : records)
            if (rec->label_task == g) missing.erase(rec->example_id);
        if (!missing.empty())
            throw DataError("snapshot " + std::to_string(t) + " is missing task-" +
                            std::to_string(g) + " examples: " + id_list(missing));
    }

    long correct = 0, total = 0;
    for (const PredictionRecord* rec : records) {
        if (rec->label_task > k) continue;
        ++total;
        if (restricted_predict(rec->logits, k, log.class_to_task) == rec->label) ++correct;
    }
    if (total == 0)
        throw DataError("snapshot " + std::to_string(t) + " has no examples from tasks 1.." +
                        std::to_string(k));
    return static_cast<double>(correct) / static_cast<double>(total);
}

double AccuracyMatrix::at(int t, int k) const {
    if (t < 1 || t > n_rows() || k < 1 || k > t)
        throw UsageError("accuracy matrix entry needs 1 <= k <= t <= rows");
    return a[static_cast<std::size_t>(t - 1)][static_cast<std::size_t>(k - 1)];
}

double CumulativeLedger::at(int t, int k) const {
    if (t < 1 || t > n_rows() || k < 1 || k > t)
        throw UsageError("cumulative ledger entry needs 1 <= k <= t <= rows");
    return b[static_cast<std::size_t>(t - 1)][static_cast<std::size_t>(k - 1)];
}

AccuracyMatrix accuracy_matrix(const PredictionLog& log) {
    const auto present = snapshots_present(log);
    if (present.empty()) throw DataError("log holds no records");
    const int t_max = *present.rbegin();
    AccuracyMatrix matrix;
    for (int t = 1; t <= t_max; ++t) {
        const ClassicAccuracyReport report = classic_accuracy(log, t);
        matrix.a.push_back(report.a);
    }
    return matrix;
}

CumulativeLedger cumulative_ledger(const PredictionLog& log) {
    const auto present = snapshots_present(log);
    if (present.empty()) throw DataError("log holds no records");
    const int t_max = *present.rbegin();
    CumulativeLedger ledger;
    for (int t = 1; t <= t_max; ++t) {
        std::vector<double> row;
        for (int k = 1; k <= t; ++k) row.push_back(cumulative_accuracy(log, t, k));
        ledger.b.push_back(std::move(row));
    }
    return ledger;
}

ForgettingReport classic_forgetting(const AccuracyMatrix& matrix, int t) {
    if (t == 1) throw UsageError("classic forgetting is undefined at t = 1");
    if (t < 1 || t > matrix.n_rows()) throw UsageError("snapshot outside the accuracy matrix");
    ForgettingReport report;
    for (int k = 1; k < t; ++k) {
        double peak = matrix.at(k, k);
        for (int i = k; i < t; ++i) peak = std::max(peak, matrix.at(i, k));
        report.f.push_back(peak - matrix.at(t, k));
    }
    double sum = 0.0;
    for (double f : report.f) sum += f;
    report.average = sum / static_cast<double>(t - 1);
    return report;
}

ForgettingReport cumulative_forgetting(const CumulativeLedger& ledger, int t) {
    if (t == 1) throw UsageError("cumulative forgetting is undefined at t = 1");
    if (t < 1 || t > ledger.n_rows()) throw UsageError("snapshot outside the cumulative ledger");
    ForgettingReport report;
    for (int k = 1; k < t; ++k) {
        double peak = ledger.at(k, k); // entries below i = k are undefined
        for (int i = k; i <= t; ++i) peak = std::max(peak, ledger.at(i, k));
        report.f.push_back(peak - ledger.at(t, k));
    }
    double sum = 0.0;
    for (double f : report.f) sum += f;
    report.average = sum / static_cast<double>(t - 1);
    return report;
}

ClassicAccuracyReport classic_accuracy(const PredictionLog& log, int t) {
    const auto records = snapshot_records(log, t);
    ClassicAccuracyReport report;
    double sum = 0.0;
    for (int k = 1; k <= t; ++k) {
        long correct = 0, total = 0;
        for (const PredictionRecord* rec : records) {
            if (rec->label_task != k) continue;
            ++total;
            if (restricted_predict(rec->logits, t, log.class_to_task) == rec->label) ++correct;
        }
        if (total == 0)
            throw DataError("snapshot " + std::to_string(t) + " has no examples of task " +
                            std::to_string(k));
        const double a = static_cast<double>(correct) / static_cast<double>(total);
        report.a.push_back(a);
        sum += a;
    }
    report.average = sum / static_cast<double>(t);
    return report;
}

double task_aware_accuracy(const PredictionLog& log, int t) {
    return eval_report(log, t).a_taw;
}

double task_inference_accuracy(const PredictionLog& log, int t) {
    return eval_report(log, t).a_tinf;
}

EvalReport eval_report(const PredictionLog& log, int t) {
    const auto records = snapshot_records(log, t);
    EvalReport report;
    long tinf_correct = 0, tinf_total = 0;
    for (int g = 1; g <= t; ++g) {
        long taw_correct = 0, hit_task = 0, total = 0;
        for (const PredictionRecord* rec : records) {
            if (rec->label_task != g) continue;
            ++total;
            // task-aware: argmax over the true task's classes only
            int best = -1;
            for (std::size_t c = 0; c < rec->logits.size(); ++c) {
                if (log.class_to_task[c] != g) continue;
                if (best < 0 || rec->logits[c] > rec->logits[static_cast<std::size_t>(best)])
                    best = static_cast<int>(c);
            }
            if (best == rec->label) ++taw_correct;
            const int full = restricted_predict(rec->logits, t, log.class_to_task);
            if (log.class_to_task[static_cast<std::size_t>(full)] == g) ++hit_task;
        }
        if (total == 0)
            throw DataError("snapshot " + std::to_string(t) + " has no examples of task " +
                            std::to_string(g));
        report.per_task_taw.push_back(static_cast<double>(taw_correct) /
                                      static_cast<double>(total));
        report.per_task_tinf.push_back(static_cast<double>(hit_task) / static_cast<double>(total));
        tinf_correct += hit_task;
        tinf_total += total;
    }
    double taw_sum = 0.0;
    for (double a : report.per_task_taw) taw_sum += a;
    report.a_taw = taw_sum / static_cast<double>(t);
    report.a_tinf = static_cast<double>(tinf_correct) / static_cast<double>(tinf_total);
    return report;
}

namespace {

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

} // namespace

std::string metrics_csv(const PredictionLog& log) {
    const AccuracyMatrix matrix = accuracy_matrix(log);
    const CumulativeLedger ledger = cumulative_ledger(log);
    std::ostringstream os;
    os << "kind,t,k,a,b,f_classic,f_cumulative,A_t,F_t,F_sigma_t,A_taw,A_tinf\n";
    for (int t = 1; t <= matrix.n_rows(); ++t) {
        const ClassicAccuracyReport classic = classic_accuracy(log, t);
        ForgettingReport f_classic, f_cumulative;
        if (t >= 2) {
            f_classic = classic_forgetting(matrix, t);
            f_cumulative = cumulative_forgetting(ledger, t);
        }
        for (int k = 1; k <= t; ++k) {
            os << "cell," << t << "," << k << "," << fmt(matrix.at(t, k)) << ","
               << fmt(ledger.at(t, k)) << ",";
            if (t >= 2 && k < t)
                os << fmt(f_classic.f[static_cast<std::size_t>(k - 1)]) << ","
                   << fmt(f_cumulative.f[static_cast<std::size_t>(k - 1)]);
            else
                os << ",";
            os << ",,,,,\n";
        }
        const EvalReport eval = eval_report(log, t);
        os << "summary," << t << ",,,,,," << fmt(classic.average) << ",";
        if (t >= 2)
            os << fmt(f_classic.average) << "," << fmt(f_cumulative.average);
        else
            os << ",";
        os << "," << fmt(eval.a_taw) << "," << fmt(eval.a_tinf) << "\n";
    }
    return os.str();
}

} // namespace cil
