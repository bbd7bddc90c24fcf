#include "doctest.h"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "cil/errors.hpp"
#include "cil/metrics.hpp"
#include "cil/runner.hpp"
#include "json.hpp"

using namespace cil;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
    fs::path dir = fs::temp_directory_path() / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

std::string read_file(const fs::path& path) {
    std::ifstream is(path, std::ios::binary);
    REQUIRE(is.good());
    std::ostringstream os;
    os << is.rdbuf();
    return os.str();
}

// a config small enough that full runs finish in well under a second
std::string tiny_config(const std::string& extra = "") {
    return std::string(R"({
        "name": "tiny",
        "dataset": {"kind": "crosstask", "n_per_class": 20, "noise_sigma": 0.2,
                    "distractor_dims": 1},
        "model": {"hidden": [4]},
        "loss": "ce",
        "memory": {"mode": "max"},
        "train": {"epochs_step1": 6, "epochs_step2": 3, "batch_size": 16},
        "lr_search": {"mode": "off"},
        "seeds": [1, 2],
        "workers": 2)") +
           extra + "\n}";
}

} // namespace

TEST_CASE("a full config parses into the expected settings") {
    const auto config = parse_config_text(tiny_config(), "test");
    CHECK(config.name == "tiny");
    CHECK(config.dataset.kind == "crosstask");
    CHECK(config.dataset.n_per_class == 20);
    CHECK(config.experiment.hidden == std::vector<int>{4});
    CHECK(config.experiment.loss == LossKind::CrossEntropy);
    CHECK(config.experiment.memory.mode == MemoryMode::Max);
    CHECK(config.experiment.epochs_step1 == 6);
    CHECK(config.experiment.lr_search.mode == LrSearchMode::Off);
    CHECK(config.seeds == std::vector<std::uint64_t>{1, 2});
    CHECK(config.workers == 2);
    CHECK(config.config_hash.size() == 16);
}

TEST_CASE("missing sections fall back to defaults") {
    const auto config = parse_config_text("{}", "test");
    CHECK(config.name == "experiment");
    CHECK(config.dataset.kind == "crosstask");
    CHECK(config.experiment.optimizer.learning_rate == 0.1);
    CHECK(config.experiment.scheduler.patience == 10);
    CHECK(config.experiment.epochs_step1 == 200);
    CHECK(config.experiment.lr_search.mode == LrSearchMode::FirstTask);
    CHECK(config.seeds == std::vector<std::uint64_t>{1});
}

TEST_CASE("unknown keys are named in the error") {
    try {
        parse_config_text(R"({"optimizer": {"learning_rat": 0.1}})", "test");
        CHECK(false);
    } catch (const ConfigError& e) {
        const std::string what = e.what();
        CHECK(what.find("learning_rat") != std::string::npos);
        CHECK(what.find("optimizer") != std::string::npos);
    }
    CHECK_THROWS_AS(parse_config_text(R"({"colour": 1})", "test"), ConfigError);
}

TEST_CASE("malformed configs are rejected with the right category") {
    CHECK_THROWS_AS(parse_config_text("{ not json", "test"), ParseError);
    CHECK_THROWS_AS(parse_config_text("[1, 2]", "test"), ConfigError);
    CHECK_THROWS_AS(parse_config_text(R"({"loss": "mse"})", "test"), ConfigError);
    CHECK_THROWS_AS(parse_config_text(R"({"seeds": []})", "test"), ConfigError);
    CHECK_THROWS_AS(parse_config_text(R"({"seeds": [3, 3]})", "test"), ConfigError);
    CHECK_THROWS_AS(parse_config_text(R"({"workers": 0})", "test"), ConfigError);
    CHECK_THROWS_AS(parse_config_text(R"({"train": {"epochs_step1": "many"}})", "test"),
                    ConfigError);
    CHECK_THROWS_AS(parse_config_text(R"({"lr_search": {"probe_epochs": 25}})", "test"),
                    ConfigError);
    CHECK_THROWS_AS(parse_config_text(R"({"dataset": {"kind": "tfrecord"}})", "test"),
                    ConfigError);
    CHECK_THROWS_AS(parse_config_text(R"({"dataset": {"kind": "dir"}})", "test"), ConfigError);
    CHECK_THROWS_AS(parse_config_text(R"({"memory": {"mode": "ring"}})", "test"), ConfigError);
    CHECK_THROWS_AS(parse_config_text(R"({"model": {"hidden": [0]}})", "test"), ConfigError);
}

TEST_CASE("the config hash tracks content") {
    const auto a = parse_config_text(R"({"name": "a"})", "test");
    const auto b = parse_config_text(R"({"name": "b"})", "test");
    const auto a2 = parse_config_text(R"({"name":    "a"})", "test"); // same canonical form
    CHECK(a.config_hash != b.config_hash);
    CHECK(a.config_hash == a2.config_hash);
}

TEST_CASE("fnv1a matches published vectors") {
    CHECK(fnv1a_hex("") == "cbf29ce484222325");
    CHECK(fnv1a_hex("a") == "af63dc4c8601ec8c");
}

TEST_CASE("datasets are built per kind") {
    DatasetConfig crosstask;
    crosstask.n_per_class = 10;
    const auto xt = build_dataset(crosstask, 5);
    CHECK(xt.n_tasks() == 2);
    CHECK(xt.input_dim == 4); // 2 codes + 2 distractors

    DatasetConfig blobs;
    blobs.kind = "blobs";
    blobs.blobs.n_classes = 4;
    blobs.blobs.n_tasks = 2;
    blobs.blobs.n_per_class = 6;
    blobs.blobs.test_per_class = 3;
    blobs.blobs.height = 4;
    blobs.blobs.width = 4;
    const auto bl = build_dataset(blobs, 5);
    CHECK(bl.n_tasks() == 2);
    CHECK(bl.input_dim == 16);

    const auto dir = fresh_dir("cil_runner_dirkind");
    save_sequence(xt, dir);
    DatasetConfig from_dir;
    from_dir.kind = "dir";
    from_dir.dir = dir;
    const auto reloaded = build_dataset(from_dir, 999); // seed ignored for dir
    CHECK(dataset_fingerprint(reloaded) == dataset_fingerprint(xt));
}

TEST_CASE("an experiment writes the full artifact set") {
    const auto out = fresh_dir("cil_runner_exp");
    const auto config = parse_config_text(tiny_config(), "test");
    CHECK(run_experiment(config, out) == 0);

    for (const char* seed_dir : {"seed1", "seed2"}) {
        CHECK(fs::exists(out / seed_dir / "predictions.log"));
        CHECK(fs::exists(out / seed_dir / "metrics.csv"));
        CHECK(fs::exists(out / seed_dir / "buffer_manifest.txt"));
        CHECK(fs::exists(out / seed_dir / "model_final.cilm"));
    }
    CHECK(fs::exists(out / "aggregate.csv"));
    CHECK(fs::exists(out / "manifest.json"));

    const auto manifest = nlohmann::json::parse(read_file(out / "manifest.json"));
    CHECK(manifest.at("name") == "tiny");
    CHECK(manifest.at("runs").size() == 2);
    for (const auto& run : manifest.at("runs")) CHECK(run.at("status") == "ok");

    // the saved log has to reproduce the saved metrics byte for byte
    const auto csv_path = out / "metrics_recomputed.csv";
    write_metrics_from_log(out / "seed1" / "predictions.log", csv_path);
    CHECK(read_file(csv_path) == read_file(out / "seed1" / "metrics.csv"));
}

TEST_CASE("experiments rerun byte-identically") {
    const auto out_a = fresh_dir("cil_runner_rerun_a");
    const auto out_b = fresh_dir("cil_runner_rerun_b");
    auto config = parse_config_text(tiny_config(), "test");
    CHECK(run_experiment(config, out_a) == 0);
    config.workers = 1; // worker count must not matter
    CHECK(run_experiment(config, out_b) == 0);

    for (const char* name :
         {"seed1/predictions.log", "seed1/metrics.csv", "seed2/metrics.csv", "aggregate.csv"})
        CHECK(read_file(out_a / name) == read_file(out_b / name));
}

TEST_CASE("the aggregate means come from the per-seed metrics") {
    const auto out = fresh_dir("cil_runner_agg");
    const auto config = parse_config_text(tiny_config(), "test");
    REQUIRE(run_experiment(config, out) == 0);

    const auto log1 = load_log(out / "seed1" / "predictions.log");
    const auto log2 = load_log(out / "seed2" / "predictions.log");
    const double a1 = classic_accuracy(log1, 2).average;
    const double a2 = classic_accuracy(log2, 2).average;
    const double expected_mean = (a1 + a2) / 2.0;

    bool found = false;
    std::istringstream lines(read_file(out / "aggregate.csv"));
    std::string line;
    while (std::getline(lines, line)) {
        if (line.rfind("2,A_t,", 0) != 0) continue;
        std::istringstream fields(line.substr(6));
        std::string mean_text;
        std::getline(fields, mean_text, ',');
        CHECK(std::stod(mean_text) == doctest::Approx(expected_mean).epsilon(1e-15));
        std::string std_text, n_text;
        std::getline(fields, std_text, ',');
        std::getline(fields, n_text, ',');
        CHECK(n_text == "2");
        found = true;
    }
    CHECK(found);
}

TEST_CASE("failing seeds are recorded rather than fatal") {
    const auto out = fresh_dir("cil_runner_fail");
    auto config = parse_config_text(tiny_config(), "test");
    config.dataset.kind = "dir";
    config.dataset.dir = out / "no_such_sequence";
    CHECK(run_experiment(config, out) == 2); // both seeds fail
    const auto manifest = nlohmann::json::parse(read_file(out / "manifest.json"));
    for (const auto& run : manifest.at("runs")) {
        CHECK(run.at("status") == "error");
        CHECK_FALSE(run.at("error").get<std::string>().empty());
    }
    CHECK_FALSE(fs::exists(out / "aggregate.csv"));
}

TEST_CASE("the sweep covers both losses across every budget") {
    const auto out = fresh_dir("cil_runner_sweep");
    auto config = parse_config_text(tiny_config(), "test");
    config.seeds = {1};
    CHECK(sweep_memory(config, {"2", "max"}, out) == 0);

    const std::string csv = read_file(out / "sweep.csv");
    std::istringstream lines(csv);
    std::string line;
    std::getline(lines, line);
    CHECK(line == "loss,budget,A_t_mean,A_t_std,A_taw_mean,A_taw_std,A_tinf_mean,A_tinf_std,n_seeds");
    std::vector<std::string> rows;
    while (std::getline(lines, line))
        if (!line.empty()) rows.push_back(line);
    REQUIRE(rows.size() == 4);
    CHECK(rows[0].rfind("ce,2,", 0) == 0);
    CHECK(rows[1].rfind("ce,max,", 0) == 0);
    CHECK(rows[2].rfind("ce_it,2,", 0) == 0);
    CHECK(rows[3].rfind("ce_it,max,", 0) == 0);

    // the plain-loss max-memory cell equals a dedicated run of the same seed
    const auto ref_dir = fresh_dir("cil_runner_sweep_ref");
    REQUIRE(run_experiment(config, ref_dir) == 0);
    const auto log = load_log(ref_dir / "seed1" / "predictions.log");
    const double expected = classic_accuracy(log, 2).average;
    std::istringstream fields(rows[1].substr(std::string("ce,max,").size()));
    std::string mean_text;
    std::getline(fields, mean_text, ',');
    CHECK(std::stod(mean_text) == expected); // %.17g round-trips exactly

    CHECK_THROWS_AS(sweep_memory(config, {}, out), ConfigError);
    CHECK_THROWS_AS(sweep_memory(config, {"zero"}, out), ConfigError);
    CHECK_THROWS_AS(sweep_memory(config, {"-3"}, out), ConfigError);
}

TEST_CASE("the output root honors the environment override") {
    unsetenv("CIL_OUTPUT_ROOT");
    CHECK(default_output_root() == fs::path("out"));
    setenv("CIL_OUTPUT_ROOT", "/tmp/cil_somewhere", 1);
    CHECK(default_output_root() == fs::path("/tmp/cil_somewhere"));
    unsetenv("CIL_OUTPUT_ROOT");
}
