#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "cwhar/contrastive.h"
#include "cwhar/metrics.h"
#include "cwhar/model.h"

namespace cwhar::train {

enum class OptimizerKind { sgd, adam_like };

std::string_view optimizer_name(OptimizerKind k);
OptimizerKind parse_optimizer(std::string_view name);

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::adam_like;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// First and second moments for one parameter tensor (unused by sgd).
struct MomentState {
  std::vector<double> m;
  std::vector<double> v;
};

/// One update of `params` in place. `step` counts from 1 and drives the
/// bias correction. Size mismatches throw ShapeError.
void optimizer_step(std::span<double> params, std::span<const double> grads, MomentState& state, std::uint64_t step,
                    const OptimizerConfig& cfg);

/// Applies optimizer_step to a fixed list of tensors. A tensor without an
/// accumulated gradient is updated as if its gradient were zero.
class Optimizer {
 public:
  Optimizer(std::vector<NamedTensor> params, OptimizerConfig cfg);

  void zero_grad();
  void step();
  std::uint64_t steps() const { return step_; }
  const std::vector<NamedTensor>& params() const { return params_; }

 private:
  std::vector<NamedTensor> params_;
  std::vector<MomentState> state_;
  OptimizerConfig cfg_;
  std::uint64_t step_ = 0;
};

struct TrainConfig {
  std::size_t epochs = 200;
  std::size_t batch_size = 32;
  double learning_rate = 1e-3;
  OptimizerKind optimizer = OptimizerKind::adam_like;
  double temperature = 0.5;
  std::uint64_t seed = 0;
  std::optional<std::size_t> shots;  // nullopt: every labelled sample

  OptimizerConfig optimizer_config() const { return {optimizer, learning_rate}; }
  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
};

struct RunRecord {
  std::string kind;  // pretrain, finetune or baseline
  std::vector<double> loss;
  std::vector<std::optional<double>> val_macro_f1;
  double wall_clock_seconds = 0.0;
  nlohmann::json config;
  std::uint64_t seed = 0;
  // Run-specific extras: subset ids, checksums, alignment history.
  nlohmann::json details = nlohmann::json::object();

  nlohmann::json to_json() const;
  static RunRecord from_json(const nlohmann::json& j);
  // Columns: epoch, loss, val_macro_f1 (blank when not measured).
  std::string loss_csv() const;
};

/// Contrastive pretraining of the encoders and projection heads named by
/// `views`. Batches are reshuffled every epoch from the seed; a trailing
/// batch with fewer than two samples is dropped. When `validation` is
/// non-empty the held-out alignment gap is logged per epoch.
RunRecord pretrain(std::span<const SyncedSample> train_set, nn::ModelBundle& bundle, contrastive::ViewPair views,
                   const TrainConfig& cfg, std::span<const SyncedSample> validation = {});

/// Trains the classifier on top of frozen encoders. Embeddings are computed
/// once in eval mode; projection heads are never evaluated.
RunRecord finetune(std::span<const SyncedSample> labelled, nn::ModelBundle& bundle, const TrainConfig& cfg,
                   std::span<const SyncedSample> validation = {});

/// Trains a classifier on precomputed features. Used by finetune; exposed so
/// the classifier loop can be exercised on constructed embeddings.
RunRecord train_classifier(const Tensor& features, std::span<const std::size_t> labels, nn::ModelBundle& bundle,
                           const TrainConfig& cfg, const Tensor* val_features = nullptr,
                           std::span<const std::size_t> val_labels = {});

enum class BaselineViews {
  single,  // CSI-1 only
  joint,   // CSI-1 and CSI-2 samples through one shared encoder
};

std::string_view baseline_views_name(BaselineViews v);
BaselineViews parse_baseline_views(std::string_view name);

struct BaselineResult {
  nn::ModelBundle model;
  RunRecord record;
};

/// Encoder and classifier trained end-to-end from random initialization.
BaselineResult train_supervised_baseline(std::span<const SyncedSample> labelled, const nn::EncoderConfig& encoder,
                                         BaselineViews views, const TrainConfig& cfg,
                                         std::span<const SyncedSample> validation = {}, std::size_t hidden_units = 128);

/// Exactly k samples per class drawn without replacement, kept in input
/// order. Throws ArgumentError when a class has fewer than k samples.
std::vector<SyncedSample> few_shot_sample(std::span<const SyncedSample> train_set, std::size_t k, std::uint64_t seed);

/// Throws ArgumentError unless every one of the seven classes is present.
void require_all_classes(std::span<const std::size_t> labels, std::string_view what);

}  // namespace cwhar::train
