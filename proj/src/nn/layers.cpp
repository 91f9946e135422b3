#include "cwhar/layers.h"

#include <cmath>

#include "cwhar/errors.h"

namespace cwhar::nn {

void kaiming_uniform(Tensor& weights, std::size_t fan_in, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  for (double& w : weights.mutable_data()) w = rng.uniform(-bound, bound);
}

Conv2d::Conv2d(std::size_t in_channels, std::size_t out_channels, std::size_t kernel, Conv2dOptions opts, Rng& rng)
    : weight(Tensor::zeros({out_channels, in_channels, kernel, kernel}, true)),
      bias(Tensor::zeros({out_channels}, true)),
      options(opts) {
  kaiming_uniform(weight, in_channels * kernel * kernel, rng);
}

BatchNorm2d::BatchNorm2d(std::size_t channels, double eps_, double momentum_)
    : gamma(Tensor::full({channels}, 1.0, true)),
      beta(Tensor::zeros({channels}, true)),
      running_mean(Tensor::zeros({channels})),
      running_var(Tensor::full({channels}, 1.0)),
      eps(eps_),
      momentum(momentum_) {}

Tensor BatchNorm2d::forward(const Tensor& x, BatchNormMode mode) {
  return batchnorm2d(x, gamma, beta, running_mean, running_var, {mode, eps, momentum});
}

Linear::Linear(std::size_t in, std::size_t out, Rng& rng)
    : weight(Tensor::zeros({in, out}, true)), bias(Tensor::zeros({out}, true)) {
  kaiming_uniform(weight, in, rng);
}

Tensor Linear::forward(const Tensor& x) const {
  if (x.rank() != 2 || x.dim(1) != in_features()) {
    throw ShapeError("linear layer expects B×" + std::to_string(in_features()) + ", got " + shape_str(x.shape()));
  }
  return add_bias(matmul(x, weight), bias);
}

void append_params(std::vector<NamedTensor>& out, const std::string& prefix, const Conv2d& layer) {
  out.push_back({prefix + ".weight", layer.weight});
  out.push_back({prefix + ".bias", layer.bias});
}

void append_params(std::vector<NamedTensor>& out, const std::string& prefix, const BatchNorm2d& layer) {
  out.push_back({prefix + ".gamma", layer.gamma});
  out.push_back({prefix + ".beta", layer.beta});
}

void append_params(std::vector<NamedTensor>& out, const std::string& prefix, const Linear& layer) {
  out.push_back({prefix + ".weight", layer.weight});
  out.push_back({prefix + ".bias", layer.bias});
}

void append_buffers(std::vector<NamedTensor>& out, const std::string& prefix, const BatchNorm2d& layer) {
  out.push_back({prefix + ".running_mean", layer.running_mean});
  out.push_back({prefix + ".running_var", layer.running_var});
}

}  // namespace cwhar::nn
