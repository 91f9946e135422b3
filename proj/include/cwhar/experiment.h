#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "cwhar/contrastive.h"
#include "cwhar/train.h"

namespace cwhar::cli {

/// Optimizer settings of one training stage.
struct StageConfig {
  std::size_t epochs = 200;
  std::size_t batch_size = 32;
  double learning_rate = 1e-3;
  train::OptimizerKind optimizer = train::OptimizerKind::adam_like;
};

/// Everything a run needs besides the dataset itself. Every key may be
/// omitted; unknown keys are rejected with ConfigError. See
/// configs/desk.json for the full layout.
struct ExperimentConfig {
  std::optional<std::string> data;
  std::optional<std::string> out;
  std::uint64_t seed = 0;
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};

  double train_fraction = 0.8;
  bool stratified = true;
  std::optional<std::uint64_t> split_seed;  // defaults to the run seed

  contrastive::ViewPair view_pair{Modality::csi1, Modality::csi2};
  nn::Architecture architecture = nn::Architecture::shallow;
  std::optional<std::size_t> upsample;  // default: 2 for CSI views, 3 for PWR
  std::vector<std::size_t> widths;  // empty: architecture default

  std::size_t projection_dim = 128;
  std::size_t hidden_units = 128;
  nn::Fusion fusion = nn::Fusion::concat;
  double temperature = 0.5;

  StageConfig pretrain;
  StageConfig finetune;
  StageConfig baseline;

  std::vector<std::optional<std::size_t>> shots{1, 5, 10};
  std::vector<train::BaselineViews> baselines{train::BaselineViews::single, train::BaselineViews::joint};
  bool log_validation = true;

  static ExperimentConfig from_json(const nlohmann::json& j);
  static ExperimentConfig load(const std::filesystem::path& path);
  nlohmann::json to_json() const;  // fully resolved

  std::uint64_t resolved_split_seed(std::uint64_t run_seed) const { return split_seed.value_or(run_seed); }
  train::TrainConfig train_config(const StageConfig& stage, std::uint64_t run_seed,
                                  std::optional<std::size_t> shots = std::nullopt) const;
  std::size_t resolved_upsample(Modality m) const { return upsample.value_or(is_csi(m) ? 2 : 3); }
  nn::EncoderConfig encoder_config(Modality m, std::size_t height, std::size_t width) const;
};

std::optional<std::size_t> parse_shots(const std::string& text);
contrastive::ViewPair parse_view_pair(const std::string& text);

}  // namespace cwhar::cli
