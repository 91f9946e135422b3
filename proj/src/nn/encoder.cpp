#include "cwhar/encoder.h"

#include "cwhar/errors.h"

namespace cwhar::nn {

std::string_view architecture_name(Architecture a) {
  return a == Architecture::shallow ? "shallow" : "alexnet_like";
}

Architecture parse_architecture(std::string_view name) {
  if (name == "shallow") return Architecture::shallow;
  if (name == "alexnet_like" || name == "alexnet") return Architecture::alexnet_like;
  throw ArgumentError("unknown encoder architecture '" + std::string(name) + "' (expected shallow or alexnet_like)");
}

std::vector<std::size_t> EncoderConfig::resolved_widths() const {
  if (!widths.empty()) return widths;
  if (architecture == Architecture::shallow) return {32, 64, 96};
  return {64, 192, 384, 256, 256};
}

std::vector<StageSpec> stage_specs(const EncoderConfig& config) {
  const auto w = config.resolved_widths();
  if (config.architecture == Architecture::shallow) {
    if (w.size() != 3) throw ConfigError("shallow encoder needs exactly 3 widths");
    return {{w[0], 3, 1, 1, Activation::relu, 2, 2},
            {w[1], 3, 1, 1, Activation::relu, 2, 2},
            {w[2], 3, 1, 1, Activation::tanh, 2, 2}};
  }
  if (w.size() != 5) throw ConfigError("alexnet_like encoder needs exactly 5 widths");
  return {{w[0], 11, 4, 2, Activation::relu, 3, 2},
          {w[1], 5, 1, 2, Activation::relu, 3, 2},
          {w[2], 3, 1, 1, Activation::relu, 0, 0},
          {w[3], 3, 1, 1, Activation::relu, 0, 0},
          {w[4], 3, 1, 1, Activation::relu, 3, 2}};
}

Shape EncoderConfig::feature_shape() const {
  if (input_height == 0 || input_width == 0) throw ConfigError("encoder input shape must be positive");
  if (upsample < 1 || upsample > 3) {
    throw ConfigError("upsample factor must be 1, 2 or 3, got " + std::to_string(upsample));
  }
  for (std::size_t w : resolved_widths()) {
    if (w == 0) throw ConfigError("encoder widths must be positive");
  }
  std::size_t h = input_height * upsample;
  std::size_t w = input_width * upsample;
  std::size_t c = 1;
  std::size_t index = 0;
  for (const StageSpec& s : stage_specs(*this)) {
    ++index;
    if (s.kernel > h + 2 * s.padding || s.kernel > w + 2 * s.padding) {
      throw ConfigError("input " + std::to_string(input_height) + "x" + std::to_string(input_width) +
                        " too small for conv stage " + std::to_string(index));
    }
    h = (h + 2 * s.padding - s.kernel) / s.stride + 1;
    w = (w + 2 * s.padding - s.kernel) / s.stride + 1;
    c = s.out_channels;
    if (s.pool_window) {
      if (s.pool_window > h || s.pool_window > w) {
        throw ConfigError("input " + std::to_string(input_height) + "x" + std::to_string(input_width) +
                          " too small for pooling after stage " + std::to_string(index));
      }
      h = (h - s.pool_window) / s.pool_stride + 1;
      w = (w - s.pool_window) / s.pool_stride + 1;
    }
  }
  return {c, h, w};
}

std::size_t EncoderConfig::embedding_dim() const { return shape_numel(feature_shape()); }

nlohmann::json EncoderConfig::to_json() const {
  return {{"architecture", architecture_name(architecture)},
          {"input_shape", {input_height, input_width}},
          {"upsample_factor", upsample},
          {"widths", resolved_widths()},
          {"embedding_dim", embedding_dim()}};
}

EncoderConfig EncoderConfig::from_json(const nlohmann::json& j) {
  try {
    EncoderConfig c;
    c.architecture = parse_architecture(j.at("architecture").get<std::string>());
    const auto shape = j.at("input_shape").get<std::vector<std::size_t>>();
    if (shape.size() != 2) throw FormatError("encoder input_shape must have two extents");
    c.input_height = shape[0];
    c.input_width = shape[1];
    c.upsample = j.at("upsample_factor").get<std::size_t>();
    if (j.contains("widths")) c.widths = j.at("widths").get<std::vector<std::size_t>>();
    if (j.contains("embedding_dim") && j.at("embedding_dim").get<std::size_t>() != c.embedding_dim()) {
      throw FormatError("encoder embedding_dim does not match its configuration");
    }
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed encoder config: ") + e.what());
  }
}

Encoder::Encoder(EncoderConfig config, Rng& rng) : config_(std::move(config)) {
  embedding_dim_ = config_.embedding_dim();  // validates
  std::size_t in_channels = 1;
  for (const StageSpec& spec : stage_specs(config_)) {
    Stage stage{spec, Conv2d(in_channels, spec.out_channels, spec.kernel, {spec.stride, spec.padding}, rng),
                BatchNorm2d(spec.out_channels)};
    stages_.push_back(std::move(stage));
    in_channels = spec.out_channels;
  }
}

Tensor Encoder::forward(const Tensor& x, BatchNormMode mode) {
  Tensor h = x;
  if (h.rank() == 3) h = reshape(h, {h.dim(0), 1, h.dim(1), h.dim(2)});
  if (h.rank() != 4 || h.dim(1) != 1 || h.dim(2) != config_.input_height || h.dim(3) != config_.input_width) {
    throw ShapeError("encoder expects B×1×" + std::to_string(config_.input_height) + "x" +
                     std::to_string(config_.input_width) + " input, got " + shape_str(x.shape()));
  }
  if (config_.upsample > 1) h = nearest_upsample(h, config_.upsample);
  for (Stage& stage : stages_) {
    h = stage.conv.forward(h);
    h = stage.bn.forward(h, mode);
    h = stage.spec.activation == Activation::relu ? relu(h) : cwhar::tanh(h);
    if (stage.spec.pool_window) h = maxpool2d(h, stage.spec.pool_window, stage.spec.pool_stride);
  }
  return flatten(h);
}

std::size_t Encoder::parameter_count() const {
  std::vector<NamedTensor> params;
  append_params(params, "");
  std::size_t n = 0;
  for (const auto& p : params) n += p.tensor.numel();
  return n;
}

void Encoder::append_params(std::vector<NamedTensor>& out, const std::string& prefix) const {
  for (std::size_t i = 0; i < stages_.size(); ++i) {
    const std::string idx = std::to_string(i + 1);
    nn::append_params(out, prefix + ".conv" + idx, stages_[i].conv);
    nn::append_params(out, prefix + ".bn" + idx, stages_[i].bn);
  }
}

void Encoder::append_buffers(std::vector<NamedTensor>& out, const std::string& prefix) const {
  for (std::size_t i = 0; i < stages_.size(); ++i) {
    nn::append_buffers(out, prefix + ".bn" + std::to_string(i + 1), stages_[i].bn);
  }
}

}  // namespace cwhar::nn
