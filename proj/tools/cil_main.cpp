// Command-line front end: run experiment grids, recompute metrics from
// saved prediction logs, and sweep memory budgets.
#include <cstdio>
#include <exception>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "cil/errors.hpp"
#include "cil/runner.hpp"

namespace {

std::vector<std::string> split_csv(const std::string& text) {
    std::vector<std::string> out;
    std::istringstream ss(text);
    std::string token;
    while (std::getline(ss, token, ','))
        if (!token.empty()) out.push_back(token);
    return out;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"class-incremental replay laboratory"};
    app.require_subcommand(1);

    std::string config_path;
    std::string out_dir;
    std::string log_path;
    std::string csv_path = "metrics.csv";
    std::string budgets_text = "5,10,20,50,max";
    int workers = 0;       // 0 = take from config
    long long seed = -1;   // -1 = take from config

    CLI::App* run = app.add_subcommand("run", "run an experiment over all configured seeds");
    run->add_option("-c,--config", config_path, "experiment config (JSON)")->required();
    run->add_option("-o,--out", out_dir, "output directory (default: <output root>/<name>)");
    run->add_option("-j,--workers", workers, "parallel seed workers")->check(CLI::PositiveNumber);
    run->add_option("--seed", seed, "run only this seed")->check(CLI::NonNegativeNumber);

    CLI::App* metrics = app.add_subcommand("metrics", "recompute metrics from a prediction log");
    metrics->add_option("-l,--log", log_path, "prediction log path")->required();
    metrics->add_option("-o,--out", csv_path, "metrics CSV output path");

    CLI::App* sweep = app.add_subcommand("sweep", "run both losses across memory budgets");
    sweep->add_option("-c,--config", config_path, "experiment config (JSON)")->required();
    sweep->add_option("-b,--budgets", budgets_text, "comma list of per-class budgets, 'max' allowed");
    sweep->add_option("-o,--out", out_dir, "output directory (default: <output root>/<name>-sweep)");
    sweep->add_option("-j,--workers", workers, "parallel cell workers")->check(CLI::PositiveNumber);

    CLI11_PARSE(app, argc, argv);

    try {
        if (run->parsed()) {
            cil::RunnerConfig config = cil::parse_config(config_path);
            if (workers > 0) config.workers = workers;
            if (seed >= 0) config.seeds = {static_cast<std::uint64_t>(seed)};
            const std::filesystem::path out =
                out_dir.empty() ? cil::default_output_root() / config.name
                                : std::filesystem::path(out_dir);
            const int failed = cil::run_experiment(config, out);
            if (failed > 0) {
                std::fprintf(stderr, "%d of %zu seeds failed; see %s\n", failed,
                             config.seeds.size(), (out / "manifest.json").c_str());
                return 1;
            }
            std::printf("wrote %s\n", (out / "manifest.json").c_str());
            return 0;
        }
        if (metrics->parsed()) {
            cil::write_metrics_from_log(log_path, csv_path);
            std::printf("wrote %s\n", csv_path.c_str());
            return 0;
        }
        if (sweep->parsed()) {
            cil::RunnerConfig config = cil::parse_config(config_path);
            if (workers > 0) config.workers = workers;
            const std::filesystem::path out =
                out_dir.empty() ? cil::default_output_root() / (config.name + "-sweep")
                                : std::filesystem::path(out_dir);
            const int failed = cil::sweep_memory(config, split_csv(budgets_text), out);
            if (failed > 0) {
                std::fprintf(stderr, "%d sweep cells failed\n", failed);
                return 1;
            }
            std::printf("wrote %s\n", (out / "sweep.csv").c_str());
            return 0;
        }
    } catch (const cil::ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const cil::ParseError& e) {
        std::fprintf(stderr, "parse error: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
