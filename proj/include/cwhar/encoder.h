#pragma once

#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "cwhar/layers.h"

namespace cwhar::nn {

enum class Architecture { shallow, alexnet_like };

std::string_view architecture_name(Architecture a);
Architecture parse_architecture(std::string_view name);

enum class Activation { relu, tanh };

struct EncoderConfig {
  Architecture architecture = Architecture::shallow;
  std::size_t input_height = 65;
  std::size_t input_width = 501;
  std::size_t upsample = 2;
  // Filter count per conv stage. Empty selects the architecture default
  // (shallow: 32/64/96, alexnet_like: 64/192/384/256/256).
  std::vector<std::size_t> widths;

  std::vector<std::size_t> resolved_widths() const;
  // Flattened size of the final feature map. Throws ConfigError when the
  // input cannot pass through every stage.
  std::size_t embedding_dim() const;
  Shape feature_shape() const;

  nlohmann::json to_json() const;
  static EncoderConfig from_json(const nlohmann::json& j);
  bool operator==(const EncoderConfig&) const = default;
};

/// One conv → BN → activation (→ max-pool) stage, described without weights.
struct StageSpec {
  std::size_t out_channels;
  std::size_t kernel;
  std::size_t stride;
  std::size_t padding;
  Activation activation;
  std::size_t pool_window;  // 0 when the stage has no pooling
  std::size_t pool_stride;
};

std::vector<StageSpec> stage_specs(const EncoderConfig& config);

/// Per-view convolutional encoder: nearest upsample, a stack of conv stages,
/// then flatten to B×embedding_dim.
class Encoder {
 public:
  Encoder() = default;
  Encoder(EncoderConfig config, Rng& rng);

  // x: B×H×W or B×1×H×W at the configured input size.
  Tensor forward(const Tensor& x, BatchNormMode mode);

  const EncoderConfig& config() const { return config_; }
  std::size_t embedding_dim() const { return embedding_dim_; }
  // Conv weights and biases plus BN affine parameters.
  std::size_t parameter_count() const;

  void append_params(std::vector<NamedTensor>& out, const std::string& prefix) const;
  void append_buffers(std::vector<NamedTensor>& out, const std::string& prefix) const;

 private:
  struct Stage {
    StageSpec spec;
    Conv2d conv;
    BatchNorm2d bn;
  };

  EncoderConfig config_;
  std::vector<Stage> stages_;
  std::size_t embedding_dim_ = 0;
};

}  // namespace cwhar::nn
