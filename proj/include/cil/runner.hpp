#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "cil/data.hpp"
#include "cil/train.hpp"

namespace cil {

/// Which task sequence to build, parsed from the "dataset" config section.
struct DatasetConfig {
    std::string kind = "crosstask"; // crosstask | blobs | idx | dir

    // crosstask
    int n_per_class = 200;
    double noise_sigma = 0.3;
    int distractor_dims = 2;

    // blobs
    BlobImageConfig blobs;

    // idx
    std::filesystem::path train_images, train_labels, test_images, test_labels;
    int n_tasks = 2;
    std::string class_order = "identity"; // identity | shuffled
    double val_fraction = 0.1;

    // dir: a sequence saved by save_sequence
    std::filesystem::path dir;
};

struct RunnerConfig {
    std::string name = "experiment";
    DatasetConfig dataset;
    ExperimentConfig experiment; // seed field is overwritten per run
    std::vector<std::uint64_t> seeds = {1};
    int workers = 1;
    std::string config_hash; // canonical-form FNV-1a, filled by parse_config
};

/// Strict parse: unknown keys anywhere are configuration errors naming the
/// key and its section; type errors name the field.
RunnerConfig parse_config(const std::filesystem::path& path);
RunnerConfig parse_config_text(const std::string& text, const std::string& origin);

/// Materializes the configured dataset for one run seed.
TaskSequence build_dataset(const DatasetConfig& config, std::uint64_t seed);

/// Executes every seed (workers in parallel), writing under out_dir:
///   seed<k>/predictions.log, metrics.csv, buffer_manifest.txt,
///   model_final.cilm; plus aggregate.csv and manifest.json at the top.
/// Returns the number of failed seeds (their errors are recorded in the
/// manifest; surviving artifacts are kept).
int run_experiment(const RunnerConfig& config, const std::filesystem::path& out_dir);

/// Recomputes the metric suite from a saved prediction log; byte-identical
/// to the in-run metrics.csv for the same log.
void write_metrics_from_log(const std::filesystem::path& log_path,
                            const std::filesystem::path& csv_path);

/// Runs both losses across the given growing-mode budgets ("max" for the
/// all-data upper bound) and writes sweep.csv with seed means and
/// standard deviations of the final A_t, A_taw and A_tinf.
int sweep_memory(const RunnerConfig& config, const std::vector<std::string>& budgets,
                 const std::filesystem::path& out_dir);

/// FNV-1a of a byte string, hex-formatted.
std::string fnv1a_hex(const std::string& bytes);

/// $CIL_OUTPUT_ROOT if set, else "out".
std::filesystem::path default_output_root();

} // namespace cil
