#include "cil/runner.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>
#include <thread>

#include "cil/errors.hpp"
#include "cil/metrics.hpp"
#include "cil/rng.hpp"
#include "json.hpp"

namespace cil {

std::string fnv1a_hex(const std::string& bytes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char b : bytes) {
        h ^= b;
        h *= 0x100000001b3ULL;
    }
    char buf[20];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

std::filesystem::path default_output_root() {
    const char* root = std::getenv("CIL_OUTPUT_ROOT");
    return root && *root ? std::filesystem::path(root) : std::filesystem::path("out");
}

namespace {

using nlohmann::json;

void check_keys(const json& obj, const std::string& where,
                std::initializer_list<const char*> allowed) {
    for (auto it = obj.begin(); it != obj.end(); ++it) {
        bool known = false;
        for (const char* key : allowed)
            if (it.key() == key) {
                known = true;
                break;
            }
        if (!known) throw ConfigError("unknown key '" + it.key() + "' in " + where);
    }
}

const json& section(const json& obj, const std::string& where, const char* key, const json& empty) {
    if (!obj.contains(key)) return empty;
    const json& sub = obj.at(key);
    if (!sub.is_object()) throw ConfigError("'" + std::string(key) + "' in " + where + " must be an object");
    return sub;
}

template <typename T>
T get_field(const json& obj, const std::string& where, const char* key, T fallback) {
    if (!obj.contains(key)) return fallback;
    try {
        return obj.at(key).get<T>();
    } catch (const json::exception&) {
        throw ConfigError("bad value for '" + std::string(key) + "' in " + where);
    }
}

LossKind parse_loss(const std::string& name) {
    if (name == "ce") return LossKind::CrossEntropy;
    if (name == "ce_it") return LossKind::CrossEntropyIntraTask;
    throw ConfigError("loss must be 'ce' or 'ce_it', got '" + name + "'");
}

} // namespace

RunnerConfig parse_config_text(const std::string& text, const std::string& origin) {
    json root;
    try {
        root = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ParseError(origin + ": " + e.what());
    }
    if (!root.is_object()) throw ConfigError(origin + ": config must be a JSON object");
    const json empty = json::object();

    RunnerConfig config;
    config.config_hash = fnv1a_hex(root.dump());

    check_keys(root, origin,
               {"name", "dataset", "model", "loss", "memory", "optimizer", "scheduler", "train",
                "lr_search", "seeds", "workers"});
    config.name = get_field<std::string>(root, origin, "name", config.name);

    {
        const json& ds = section(root, origin, "dataset", empty);
        const std::string where = origin + ".dataset";
        config.dataset.kind = get_field<std::string>(ds, where, "kind", config.dataset.kind);
        if (config.dataset.kind == "crosstask") {
            check_keys(ds, where, {"kind", "n_per_class", "noise_sigma", "distractor_dims"});
            config.dataset.n_per_class = get_field<int>(ds, where, "n_per_class", 200);
            config.dataset.noise_sigma = get_field<double>(ds, where, "noise_sigma", 0.3);
            config.dataset.distractor_dims = get_field<int>(ds, where, "distractor_dims", 2);
        } else if (config.dataset.kind == "blobs") {
            check_keys(ds, where,
                       {"kind", "n_classes", "n_tasks", "n_per_class", "test_per_class", "height",
                        "width", "noise_sigma", "anchor_count", "bump_sigma"});
            BlobImageConfig& b = config.dataset.blobs;
            b.n_classes = get_field<int>(ds, where, "n_classes", b.n_classes);
            b.n_tasks = get_field<int>(ds, where, "n_tasks", b.n_tasks);
            b.n_per_class = get_field<int>(ds, where, "n_per_class", b.n_per_class);
            b.test_per_class = get_field<int>(ds, where, "test_per_class", b.test_per_class);
            b.height = get_field<int>(ds, where, "height", b.height);
            b.width = get_field<int>(ds, where, "width", b.width);
            b.noise_sigma = get_field<double>(ds, where, "noise_sigma", b.noise_sigma);
            b.anchor_count = get_field<int>(ds, where, "anchor_count", b.anchor_count);
            b.bump_sigma = get_field<double>(ds, where, "bump_sigma", b.bump_sigma);
        } else if (config.dataset.kind == "idx") {
            check_keys(ds, where,
                       {"kind", "train_images", "train_labels", "test_images", "test_labels",
                        "n_tasks", "class_order", "val_fraction"});
            config.dataset.train_images = get_field<std::string>(ds, where, "train_images", "");
            config.dataset.train_labels = get_field<std::string>(ds, where, "train_labels", "");
            config.dataset.test_images = get_field<std::string>(ds, where, "test_images", "");
            config.dataset.test_labels = get_field<std::string>(ds, where, "test_labels", "");
            config.dataset.n_tasks = get_field<int>(ds, where, "n_tasks", 2);
            config.dataset.class_order =
                get_field<std::string>(ds, where, "class_order", "identity");
            config.dataset.val_fraction = get_field<double>(ds, where, "val_fraction", 0.1);
            if (config.dataset.class_order != "identity" &&
                config.dataset.class_order != "shuffled")
                throw ConfigError("class_order in " + where + " must be 'identity' or 'shuffled'");
        } else if (config.dataset.kind == "dir") {
            check_keys(ds, where, {"kind", "path"});
            config.dataset.dir = get_field<std::string>(ds, where, "path", "");
            if (config.dataset.dir.empty())
                throw ConfigError("'path' is required in " + where);
        } else {
            throw ConfigError("dataset kind must be crosstask, blobs, idx or dir, got '" +
                              config.dataset.kind + "'");
        }
    }

    ExperimentConfig& exp = config.experiment;
    {
        const json& model = section(root, origin, "model", empty);
        const std::string where = origin + ".model";
        check_keys(model, where, {"hidden"});
        exp.hidden = get_field<std::vector<int>>(model, where, "hidden", exp.hidden);
        for (int w : exp.hidden)
            if (w <= 0) throw ConfigError("hidden widths in " + where + " must be positive");
    }
    exp.loss = parse_loss(get_field<std::string>(root, origin, "loss", "ce"));
    {
        const json& mem = section(root, origin, "memory", empty);
        const std::string where = origin + ".memory";
        check_keys(mem, where, {"mode", "per_class", "total", "strategy"});
        const std::string mode = get_field<std::string>(mem, where, "mode", "growing");
        if (mode == "growing")
            exp.memory.mode = MemoryMode::Growing;
        else if (mode == "fixed")
            exp.memory.mode = MemoryMode::Fixed;
        else if (mode == "max")
            exp.memory.mode = MemoryMode::Max;
        else
            throw ConfigError("memory mode must be growing, fixed or max, got '" + mode + "'");
        exp.memory.per_class = get_field<int>(mem, where, "per_class", exp.memory.per_class);
        exp.memory.total = get_field<int>(mem, where, "total", exp.memory.total);
        const std::string strategy = get_field<std::string>(mem, where, "strategy", "herding");
        if (strategy == "herding")
            exp.memory.strategy = SelectionStrategy::Herding;
        else if (strategy == "random")
            exp.memory.strategy = SelectionStrategy::Random;
        else
            throw ConfigError("memory strategy must be herding or random, got '" + strategy + "'");
    }
    {
        const json& opt = section(root, origin, "optimizer", empty);
        const std::string where = origin + ".optimizer";
        check_keys(opt, where, {"learning_rate", "momentum", "weight_decay", "clip_threshold"});
        exp.optimizer.learning_rate =
            get_field<double>(opt, where, "learning_rate", exp.optimizer.learning_rate);
        exp.optimizer.momentum = get_field<double>(opt, where, "momentum", exp.optimizer.momentum);
        exp.optimizer.weight_decay =
            get_field<double>(opt, where, "weight_decay", exp.optimizer.weight_decay);
        exp.optimizer.clip_threshold =
            get_field<double>(opt, where, "clip_threshold", exp.optimizer.clip_threshold);
    }
    {
        const json& sched = section(root, origin, "scheduler", empty);
        const std::string where = origin + ".scheduler";
        check_keys(sched, where, {"patience", "factor", "min_lr"});
        exp.scheduler.patience = get_field<int>(sched, where, "patience", exp.scheduler.patience);
        exp.scheduler.factor = get_field<double>(sched, where, "factor", exp.scheduler.factor);
        exp.scheduler.min_lr = get_field<double>(sched, where, "min_lr", exp.scheduler.min_lr);
    }
    {
        const json& train = section(root, origin, "train", empty);
        const std::string where = origin + ".train";
        check_keys(train, where, {"epochs_step1", "epochs_step2", "batch_size"});
        exp.epochs_step1 = get_field<int>(train, where, "epochs_step1", exp.epochs_step1);
        exp.epochs_step2 = get_field<int>(train, where, "epochs_step2", exp.epochs_step2);
        exp.batch_size = get_field<int>(train, where, "batch_size", exp.batch_size);
    }
    {
        const json& search = section(root, origin, "lr_search", empty);
        const std::string where = origin + ".lr_search";
        check_keys(search, where, {"mode", "grid_first", "grid_later", "probe_epochs"});
        const std::string mode = get_field<std::string>(search, where, "mode", "first");
        if (mode == "off")
            exp.lr_search.mode = LrSearchMode::Off;
        else if (mode == "first")
            exp.lr_search.mode = LrSearchMode::FirstTask;
        else if (mode == "every")
            exp.lr_search.mode = LrSearchMode::EveryTask;
        else
            throw ConfigError("lr_search mode must be off, first or every, got '" + mode + "'");
        exp.lr_search.grid_first =
            get_field<std::vector<double>>(search, where, "grid_first", exp.lr_search.grid_first);
        exp.lr_search.grid_later =
            get_field<std::vector<double>>(search, where, "grid_later", exp.lr_search.grid_later);
        exp.lr_search.probe_epochs =
            get_field<int>(search, where, "probe_epochs", exp.lr_search.probe_epochs);
        if (exp.lr_search.probe_epochs < 1 || exp.lr_search.probe_epochs > 20)
            throw ConfigError("probe_epochs in " + where + " must lie in 1..20");
    }
    config.seeds = get_field<std::vector<std::uint64_t>>(root, origin, "seeds", config.seeds);
    if (config.seeds.empty()) throw ConfigError("'seeds' in " + origin + " must be non-empty");
    {
        std::set<std::uint64_t> unique(config.seeds.begin(), config.seeds.end());
        if (unique.size() != config.seeds.size())
            throw ConfigError("'seeds' in " + origin + " contains duplicates");
    }
    config.workers = get_field<int>(root, origin, "workers", config.workers);
    if (config.workers < 1) throw ConfigError("'workers' in " + origin + " must be at least 1");
    return config;
}

RunnerConfig parse_config(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot open config file " + path.string());
    std::ostringstream buf;
    buf << is.rdbuf();
    return parse_config_text(buf.str(), path.string());
}

TaskSequence build_dataset(const DatasetConfig& config, std::uint64_t seed) {
    if (config.kind == "crosstask")
        return gen_crosstask(config.n_per_class, config.noise_sigma, config.distractor_dims, seed);
    if (config.kind == "blobs") return gen_blob_images(config.blobs, seed);
    if (config.kind == "idx") {
        const auto train = load_idx(config.train_images, config.train_labels);
        const auto test = load_idx(config.test_images, config.test_labels);
        int n_classes = 0;
        for (const LabeledExample& ex : train) n_classes = std::max(n_classes, ex.label + 1);
        for (const LabeledExample& ex : test) n_classes = std::max(n_classes, ex.label + 1);
        const std::vector<int> order = config.class_order == "shuffled"
                                           ? shuffled_order(n_classes, seed)
                                           : identity_order(n_classes);
        return build_task_sequence(train, test, config.n_tasks, order, config.val_fraction, seed);
    }
    if (config.kind == "dir") return load_sequence(config.dir);
    throw ConfigError("unknown dataset kind '" + config.kind + "'");
}

namespace {

void parallel_for(int workers, std::size_t n, const std::function<void(std::size_t)>& body) {
    workers = std::max(1, std::min(workers, static_cast<int>(n)));
    if (workers == 1) {
        for (std::size_t i = 0; i < n; ++i) body(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> threads;
    threads.reserve(static_cast<std::size_t>(workers));
    for (int w = 0; w < workers; ++w)
        threads.emplace_back([&] {
            for (std::size_t i; (i = next.fetch_add(1)) < n;) body(i);
        });
    for (std::thread& th : threads) th.join();
}

struct SnapshotSummary {
    int t = 0;
    double a_t = 0.0;
    double f_t = 0.0;       // defined when t >= 2
    double f_sigma = 0.0;   // defined when t >= 2
    double a_taw = 0.0;
    double a_tinf = 0.0;
};

std::vector<SnapshotSummary> summarize(const PredictionLog& log) {
    const AccuracyMatrix matrix = accuracy_matrix(log);
    const CumulativeLedger ledger = cumulative_ledger(log);
    std::vector<SnapshotSummary> out;
    for (int t = 1; t <= matrix.n_rows(); ++t) {
        SnapshotSummary s;
        s.t = t;
        s.a_t = classic_accuracy(log, t).average;
        if (t >= 2) {
            s.f_t = classic_forgetting(matrix, t).average;
            s.f_sigma = cumulative_forgetting(ledger, t).average;
        }
        const EvalReport eval = eval_report(log, t);
        s.a_taw = eval.a_taw;
        s.a_tinf = eval.a_tinf;
        out.push_back(s);
    }
    return out;
}

struct SeedOutcome {
    std::uint64_t seed = 0;
    bool ok = false;
    std::string error;
    std::string fingerprint;
    std::vector<double> chosen_lrs;
    std::vector<SnapshotSummary> summary;
    double secs_dataset = 0.0, secs_train = 0.0, secs_artifacts = 0.0;
};

double seconds_since(std::chrono::steady_clock::time_point start) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

std::string fmt17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

void mean_std(const std::vector<double>& values, double& mean, double& stddev) {
    const double n = static_cast<double>(values.size());
    double sum = 0.0;
    for (double v : values) sum += v;
    mean = sum / n;
    double var = 0.0;
    for (double v : values) var += (v - mean) * (v - mean);
    stddev = std::sqrt(var / n);
}

} // namespace

int run_experiment(const RunnerConfig& config, const std::filesystem::path& out_dir) {
    std::filesystem::create_directories(out_dir);
    std::vector<SeedOutcome> outcomes(config.seeds.size());

    parallel_for(config.workers, config.seeds.size(), [&](std::size_t i) {
        SeedOutcome& outcome = outcomes[i];
        outcome.seed = config.seeds[i];
        const std::filesystem::path seed_dir =
            out_dir / ("seed" + std::to_string(outcome.seed));
        try {
            std::filesystem::create_directories(seed_dir);
            auto t0 = std::chrono::steady_clock::now();
            const TaskSequence sequence = build_dataset(config.dataset, outcome.seed);
            char fp[20];
            std::snprintf(fp, sizeof fp, "%016llx",
                          static_cast<unsigned long long>(dataset_fingerprint(sequence)));
            outcome.fingerprint = fp;
            outcome.secs_dataset = seconds_since(t0);

            t0 = std::chrono::steady_clock::now();
            ExperimentConfig exp = config.experiment;
            exp.seed = outcome.seed;
            const RunResult run = run_sequence(sequence, exp);
            outcome.secs_train = seconds_since(t0);
            outcome.chosen_lrs = run.chosen_lrs;

            t0 = std::chrono::steady_clock::now();
            save_log(run.log, seed_dir / "predictions.log");
            {
                std::ofstream os(seed_dir / "metrics.csv");
                os << metrics_csv(run.log);
            }
            {
                std::ofstream os(seed_dir / "buffer_manifest.txt");
                for (std::size_t t = 0; t < run.buffer_manifests.size(); ++t)
                    os << "after task " << (t + 1) << "\n" << run.buffer_manifests[t] << "\n";
            }
            save_parameters(run.model, seed_dir / "model_final.cilm");
            outcome.summary = summarize(run.log);
            outcome.secs_artifacts = seconds_since(t0);
            outcome.ok = true;
        } catch (const std::exception& e) {
            outcome.error = e.what();
        }
    });

    std::vector<const SeedOutcome*> succeeded;
    for (const SeedOutcome& outcome : outcomes)
        if (outcome.ok) succeeded.push_back(&outcome);

    if (!succeeded.empty()) {
        std::ofstream os(out_dir / "aggregate.csv");
        os << "t,metric,mean,std,n_seeds\n";
        const std::size_t n_snapshots = succeeded.front()->summary.size();
        for (std::size_t ti = 0; ti < n_snapshots; ++ti) {
            const int t = succeeded.front()->summary[ti].t;
            auto emit = [&](const char* metric, auto pick) {
                std::vector<double> values;
                for (const SeedOutcome* outcome : succeeded)
                    values.push_back(pick(outcome->summary[ti]));
                double mean, stddev;
                mean_std(values, mean, stddev);
                os << t << "," << metric << "," << fmt17(mean) << "," << fmt17(stddev) << ","
                   << values.size() << "\n";
            };
            emit("A_t", [](const SnapshotSummary& s) { return s.a_t; });
            if (t >= 2) {
                emit("F_t", [](const SnapshotSummary& s) { return s.f_t; });
                emit("F_sigma_t", [](const SnapshotSummary& s) { return s.f_sigma; });
            }
            emit("A_taw", [](const SnapshotSummary& s) { return s.a_taw; });
            emit("A_tinf", [](const SnapshotSummary& s) { return s.a_tinf; });
        }
    }

    nlohmann::json manifest;
    manifest["name"] = config.name;
    manifest["config_hash"] = config.config_hash;
    manifest["workers"] = config.workers;
    manifest["seeds"] = config.seeds;
    manifest["aggregate"] = succeeded.empty() ? "" : "aggregate.csv";
    manifest["runs"] = nlohmann::json::array();
    for (const SeedOutcome& outcome : outcomes) {
        nlohmann::json run;
        run["seed"] = outcome.seed;
        run["status"] = outcome.ok ? "ok" : "error";
        if (outcome.ok) {
            run["dataset_fingerprint"] = outcome.fingerprint;
            run["chosen_lrs"] = outcome.chosen_lrs;
            const std::string dir = "seed" + std::to_string(outcome.seed);
            run["artifacts"] = {{"predictions", dir + "/predictions.log"},
                                {"metrics", dir + "/metrics.csv"},
                                {"buffer", dir + "/buffer_manifest.txt"},
                                {"model", dir + "/model_final.cilm"}};
            run["wall_clock_seconds"] = {{"dataset", outcome.secs_dataset},
                                         {"train", outcome.secs_train},
                                         {"artifacts", outcome.secs_artifacts}};
        } else {
            run["error"] = outcome.error;
        }
        manifest["runs"].push_back(std::move(run));
    }
    {
        std::ofstream os(out_dir / "manifest.json");
        os << manifest.dump(2) << "\n";
    }
    return static_cast<int>(outcomes.size() - succeeded.size());
}

void write_metrics_from_log(const std::filesystem::path& log_path,
                            const std::filesystem::path& csv_path) {
    const PredictionLog log = load_log(log_path);
    const std::string csv = metrics_csv(log);
    std::ofstream os(csv_path);
    if (!os) throw DataError("cannot open " + csv_path.string() + " for writing");
    os << csv;
}

int sweep_memory(const RunnerConfig& config, const std::vector<std::string>& budgets,
                 const std::filesystem::path& out_dir) {
    if (budgets.empty()) throw ConfigError("sweep needs at least one budget");

    struct Cell {
        LossKind loss;
        std::string budget_name;
        MemoryConfig memory;
        std::uint64_t seed;
        bool ok = false;
        std::string error;
        SnapshotSummary final_summary;
    };

    std::vector<MemoryConfig> memories;
    for (const std::string& token : budgets) {
        MemoryConfig memory = config.experiment.memory;
        if (token == "max") {
            memory.mode = MemoryMode::Max;
        } else {
            int per_class = 0;
            try {
                per_class = std::stoi(token);
            } catch (const std::exception&) {
                throw ConfigError("budget '" + token + "' is neither a count nor 'max'");
            }
            if (per_class <= 0) throw ConfigError("budget '" + token + "' must be positive");
            memory.mode = MemoryMode::Growing;
            memory.per_class = per_class;
        }
        memories.push_back(memory);
    }

    std::vector<Cell> cells;
    for (LossKind loss : {LossKind::CrossEntropy, LossKind::CrossEntropyIntraTask})
        for (std::size_t b = 0; b < budgets.size(); ++b)
            for (std::uint64_t seed : config.seeds)
                cells.push_back({loss, budgets[b], memories[b], seed, false, "", {}});

    parallel_for(config.workers, cells.size(), [&](std::size_t i) {
        Cell& cell = cells[i];
        try {
            const TaskSequence sequence = build_dataset(config.dataset, cell.seed);
            ExperimentConfig exp = config.experiment;
            exp.loss = cell.loss;
            exp.memory = cell.memory;
            exp.seed = cell.seed;
            const RunResult run = run_sequence(sequence, exp);
            const auto summary = summarize(run.log);
            cell.final_summary = summary.back();
            cell.ok = true;
        } catch (const std::exception& e) {
            cell.error = e.what();
        }
    });

    std::filesystem::create_directories(out_dir);
    std::ofstream os(out_dir / "sweep.csv");
    os << "loss,budget,A_t_mean,A_t_std,A_taw_mean,A_taw_std,A_tinf_mean,A_tinf_std,n_seeds\n";
    int failures = 0;
    for (LossKind loss : {LossKind::CrossEntropy, LossKind::CrossEntropyIntraTask}) {
        for (const std::string& token : budgets) {
            std::vector<double> a_t, a_taw, a_tinf;
            bool cell_failed = false;
            for (const Cell& cell : cells) {
                if (cell.loss != loss || cell.budget_name != token) continue;
                if (!cell.ok) {
                    cell_failed = true;
                    ++failures;
                    std::fprintf(stderr, "sweep cell loss=%s budget=%s seed=%llu failed: %s\n",
                                 loss == LossKind::CrossEntropy ? "ce" : "ce_it", token.c_str(),
                                 static_cast<unsigned long long>(cell.seed), cell.error.c_str());
                    continue;
                }
                a_t.push_back(cell.final_summary.a_t);
                a_taw.push_back(cell.final_summary.a_taw);
                a_tinf.push_back(cell.final_summary.a_tinf);
            }
            if (cell_failed || a_t.empty()) continue;
            double m0, s0, m1, s1, m2, s2;
            mean_std(a_t, m0, s0);
            mean_std(a_taw, m1, s1);
            mean_std(a_tinf, m2, s2);
            os << (loss == LossKind::CrossEntropy ? "ce" : "ce_it") << "," << token << ","
               << fmt17(m0) << "," << fmt17(s0) << "," << fmt17(m1) << "," << fmt17(s1) << ","
               << fmt17(m2) << "," << fmt17(s2) << "," << a_t.size() << "\n";
        }
    }
    return failures;
}

} // namespace cil
