#pragma once

#include <string>
#include <vector>

#include "cwhar/grad_check.h"
#include "cwhar/ops.h"
#include "cwhar/rng.h"

namespace cwhar::nn {

/// Kaiming-style uniform fan-in init: U(-sqrt(6/fan_in), sqrt(6/fan_in)).
void kaiming_uniform(Tensor& weights, std::size_t fan_in, Rng& rng);

struct Conv2d {
  Tensor weight;  // out × in × k × k
  Tensor bias;    // out
  Conv2dOptions options;

  Conv2d() = default;
  Conv2d(std::size_t in_channels, std::size_t out_channels, std::size_t kernel, Conv2dOptions opts, Rng& rng);
  Tensor forward(const Tensor& x) const { return conv2d(x, weight, bias, options); }
  std::size_t out_channels() const { return weight.dim(0); }
};

struct BatchNorm2d {
  Tensor gamma;
  Tensor beta;
  Tensor running_mean;
  Tensor running_var;
  double eps = 1e-5;
  double momentum = 0.1;

  BatchNorm2d() = default;
  explicit BatchNorm2d(std::size_t channels, double eps = 1e-5, double momentum = 0.1);
  Tensor forward(const Tensor& x, BatchNormMode mode);
};

/// y = x·W + b with W stored in×out.
struct Linear {
  Tensor weight;
  Tensor bias;

  Linear() = default;
  Linear(std::size_t in, std::size_t out, Rng& rng);
  Tensor forward(const Tensor& x) const;
  std::size_t in_features() const { return weight.dim(0); }
  std::size_t out_features() const { return weight.dim(1); }
};

void append_params(std::vector<NamedTensor>& out, const std::string& prefix, const Conv2d& layer);
void append_params(std::vector<NamedTensor>& out, const std::string& prefix, const BatchNorm2d& layer);
void append_params(std::vector<NamedTensor>& out, const std::string& prefix, const Linear& layer);
void append_buffers(std::vector<NamedTensor>& out, const std::string& prefix, const BatchNorm2d& layer);

}  // namespace cwhar::nn
