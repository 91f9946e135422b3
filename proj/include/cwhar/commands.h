#pragma once

#include <cstdint>
#include <exception>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "cwhar/dataset.h"
#include "cwhar/experiment.h"
#include "cwhar/metrics.h"
#include "cwhar/train.h"

namespace cwhar::cli {

namespace fs = std::filesystem;

/// Process exit codes.
enum ExitCode : int {
  kExitOk = 0,
  kExitFailure = 1,   // numeric failure or internal error
  kExitArgument = 2,  // bad flags or configuration
  kExitIo = 3,        // unreadable, truncated or malformed files
  kExitData = 4,      // well-formed data with unusable content
};

int exit_code_for(const std::exception& e);

// File names inside a run directory.
inline constexpr const char* kRunRecordFile = "run.json";
inline constexpr const char* kMetricsFile = "metrics.json";
inline constexpr const char* kResolvedConfigFile = "config.resolved.json";
inline constexpr const char* kCheckpointDir = "checkpoint";

struct GenerateOptions {
  fs::path out;
  std::size_t per_class = 50;
  std::uint64_t seed = 0;
  double rho = 0.9;
  double sigma = 0.1;
  double onset_jitter = 0.1;
  double projection_floor = 0.2;
  std::string profile = "desk";
};

void run_generate(const GenerateOptions& opt);

struct RunResult {
  fs::path dir;
  std::string method;  // pretrain, contrastive, baseline-csi1, baseline-joint
  std::uint64_t seed = 0;
  std::optional<std::size_t> shots;
  train::RunRecord record;
  std::optional<eval::MetricsReport> metrics;
};

/// Contrastive pretraining on the training split; writes checkpoint/,
/// run.json, loss.csv and config.resolved.json into `out`.
RunResult pretrain_run(const ExperimentConfig& cfg, const Dataset& data, std::uint64_t seed, const fs::path& out);

/// Loads a pretraining checkpoint, freezes its encoders and trains the
/// classifier on a k-shot subset of the same training split. When `cfg` is
/// empty the configuration stored in the checkpoint is reused.
RunResult finetune_run(const fs::path& checkpoint, const std::optional<ExperimentConfig>& cfg, const Dataset& data,
                       std::optional<std::size_t> shots, std::uint64_t seed, const fs::path& out);

/// End-to-end supervised model without pretraining.
RunResult baseline_run(const ExperimentConfig& cfg, const Dataset& data, train::BaselineViews views,
                       std::optional<std::size_t> shots, std::uint64_t seed, const fs::path& out);

struct ReportResult {
  std::vector<fs::path> files;
  std::optional<eval::Comparison> comparison;
};

/// Collects run directories below each root (sorted), writes comparison
/// tables, curve CSVs and SVG charts into `out`. No runs: ArgumentError.
ReportResult report_run(const std::vector<fs::path>& roots, const fs::path& out);

struct ExperimentResult {
  std::vector<RunResult> runs;
  ReportResult report;
};

/// For every seed: pretrain, fine-tune at every shot count, train every
/// configured baseline at every shot count; then report into out/report.
ExperimentResult experiment_run(const ExperimentConfig& cfg, const Dataset& data, const fs::path& out);

Dataset load_data(const std::optional<fs::path>& flag, const ExperimentConfig& cfg);
fs::path resolve_out(const std::optional<fs::path>& flag, const ExperimentConfig& cfg);

}  // namespace cwhar::cli
