#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cwhar/encoder.h"
#include "cwhar/types.h"

namespace cwhar::nn {

/// How the classifier combines per-view embeddings.
enum class Fusion {
  concat,  // [h1, h2]
  single,  // first view only
  mean,    // (h1 + h2) / 2, equal widths required
};

std::string_view fusion_name(Fusion f);
Fusion parse_fusion(std::string_view name);

struct ViewSpec {
  Modality modality = Modality::csi1;
  EncoderConfig encoder;
};

struct BundleConfig {
  std::vector<ViewSpec> views;  // one or two
  Fusion fusion = Fusion::concat;
  std::size_t projection_dim = 128;
  std::size_t hidden_units = 128;
  std::size_t num_classes = kNumClasses;
  // Non-empty for a single-encoder model trained on several receivers: each
  // listed modality is an independent example for view 0.
  std::vector<Modality> joint_inputs;

  std::size_t classifier_input_dim() const;
  nlohmann::json to_json() const;
  static BundleConfig from_json(const nlohmann::json& j);
};

/// Linear(D→hidden) → relu → Linear(hidden→classes), raw logits.
struct Classifier {
  Linear hidden;
  Linear output;
};

Tensor project(const Tensor& h, const Linear& head);
Tensor classify(const Tensor& features, const Classifier& classifier);

/// Per-view encoders and projection heads plus the classifier.
///
/// Frozen components have requires_grad cleared on their parameters, are
/// excluded from trainable_parameters(), and always run BN in eval mode.
class ModelBundle {
 public:
  ModelBundle() = default;
  static ModelBundle create(BundleConfig config, std::uint64_t seed);
  // Fresh classifier weights drawn from `seed`.
  void reset_classifier(std::uint64_t seed);
  // Copies share tensor storage; clone() does not.
  ModelBundle clone() const;

  const BundleConfig& config() const { return config_; }
  std::size_t num_views() const { return encoders_.size(); }
  std::size_t view_index(Modality m) const;  // DataError if absent
  bool is_joint() const { return !config_.joint_inputs.empty(); }

  Encoder& encoder(std::size_t view) { return encoders_.at(view); }
  const Encoder& encoder(std::size_t view) const { return encoders_.at(view); }
  const Linear& head(std::size_t view) const { return heads_.at(view); }
  const Classifier& classifier() const { return classifier_; }

  // x: B×H×W for the given view; `mode` is overridden to eval when frozen.
  Tensor embed(std::size_t view, const Tensor& x, BatchNormMode mode);
  Tensor project(std::size_t view, const Tensor& h) const;
  // Fuses per-view embeddings (one per view, or one for single fusion).
  Tensor fuse(std::span<const Tensor> embeddings) const;
  Tensor classify(const Tensor& features) const;
  // Classification path: embed each used view, fuse, classify. Never
  // evaluates a projection head.
  Tensor logits(std::span<const Tensor> view_inputs, BatchNormMode mode);
  std::size_t classifier_views() const;

  /// Selectors: encoders, encoder1, encoder2, heads, head1, head2,
  /// classifier, all. Unknown selectors throw ArgumentError.
  void freeze(std::string_view selector);
  void unfreeze(std::string_view selector);
  bool encoder_frozen(std::size_t view) const { return encoder_frozen_.at(view); }
  bool head_frozen(std::size_t view) const { return head_frozen_.at(view); }
  bool classifier_frozen() const { return classifier_frozen_; }

  std::vector<NamedTensor> parameters() const;
  std::vector<NamedTensor> parameters(std::string_view selector) const;
  std::vector<NamedTensor> trainable_parameters() const;
  std::vector<NamedTensor> buffers() const;
  std::vector<NamedTensor> buffers(std::string_view selector) const;

 private:
  void set_frozen(std::string_view selector, bool frozen);
  void sync_requires_grad();

  BundleConfig config_;
  std::vector<Encoder> encoders_;
  std::vector<Linear> heads_;
  Classifier classifier_;
  std::vector<bool> encoder_frozen_;
  std::vector<bool> head_frozen_;
  bool classifier_frozen_ = false;
};

/// FNV-1a over the raw bytes of every tensor, in order.
std::uint64_t tensor_checksum(std::span<const NamedTensor> tensors);
bool bitwise_equal(std::span<const NamedTensor> a, std::span<const NamedTensor> b);
std::vector<NamedTensor> deep_copy(std::span<const NamedTensor> tensors);

/// Writes parameters and BN buffers (f64 blobs) plus the bundle config,
/// frozen flags and `extra` metadata to a container directory.
void save_checkpoint(const ModelBundle& bundle, const std::filesystem::path& dir,
                     const nlohmann::json& extra = nlohmann::json::object());
ModelBundle load_checkpoint(const std::filesystem::path& dir, nlohmann::json* extra = nullptr);

}  // namespace cwhar::nn
