#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "run_config.hpp"
#include "stgan/data.hpp"
#include "stgan/eval.hpp"
#include "stgan/models.hpp"
#include "stgan/training.hpp"

namespace stgan::cli {

enum ExitCode : int { kExitOk = 0, kExitIo = 1, kExitConfig = 2, kExitNumeric = 3 };

// Parses argv-style arguments (without the program name), runs one verb and
// maps failures onto the exit-code contract.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

// Layout of a training run directory.
std::filesystem::path train_log_path(const std::filesystem::path& run_dir);
std::filesystem::path final_checkpoint_path(const std::filesystem::path& run_dir);
std::filesystem::path interval_checkpoint_path(const std::filesystem::path& run_dir,
                                               std::int64_t iteration);

DatasetSplit generate_dataset(const RunConfig& cfg, std::int64_t count,
                              const std::filesystem::path& root);

// Trains on the train split under cfg.data.root and writes the log, interval
// checkpoints and the final checkpoint into cfg.train.checkpoint_dir. A
// resumed run keeps the log rows up to the checkpoint's iteration.
TrainLog run_training(const RunConfig& cfg, const std::optional<std::filesystem::path>& resume,
                      std::ostream& progress);

// The generator stored in a checkpoint, rebuilt from its embedded config.
Generator load_generator(const std::filesystem::path& checkpoint);

// Probability maps for each sample, in order; no graph is recorded.
std::vector<Tensor> predict_probabilities(const Generator& g, const std::vector<Sample>& samples,
                                          std::int64_t batch_size = 8);

// Same predictions scored without and with post-processing.
struct EvalReports {
  MetricsReport raw;
  MetricsReport postprocessed;
};

EvalReports evaluate(const Generator& g, const std::vector<Sample>& samples,
                     const EvalSection& eval,
                     const std::optional<std::filesystem::path>& overlay_dir = std::nullopt);

inline constexpr const char* kRawReportName = "metrics_raw.csv";
inline constexpr const char* kPostprocessedReportName = "metrics_postprocessed.csv";

struct ExperimentRow {
  std::string method;
  LoopKind loop = LoopKind::kNone;
  MetricsReport::Mean postprocessed;
  MetricsReport::Mean raw;
  std::int64_t iterations = 0;
  double seconds = 0.0;
};

std::string method_name(LoopKind loop);

// Method / Dice / Precision / Recall, four decimals.
std::string format_experiment_table(const std::vector<ExperimentRow>& rows);
std::string format_experiment_csv(const std::vector<ExperimentRow>& rows);

// Generates the phantom set under out_dir/data, then trains and evaluates the
// none, gan and cyclegan loops in out_dir/<loop>.
std::vector<ExperimentRow> run_experiment(const RunConfig& cfg,
                                          const std::filesystem::path& out_dir,
                                          std::ostream& progress);

}  // namespace stgan::cli
