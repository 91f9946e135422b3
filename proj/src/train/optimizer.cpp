#include <cmath>

#include "cwhar/errors.h"
#include "cwhar/train.h"

namespace cwhar::train {

std::string_view optimizer_name(OptimizerKind k) { return k == OptimizerKind::sgd ? "sgd" : "adam_like"; }

OptimizerKind parse_optimizer(std::string_view name) {
  if (name == "sgd") return OptimizerKind::sgd;
  if (name == "adam_like" || name == "adam") return OptimizerKind::adam_like;
  throw ArgumentError("unknown optimizer '" + std::string(name) + "' (expected sgd or adam_like)");
}

void optimizer_step(std::span<double> params, std::span<const double> grads, MomentState& state, std::uint64_t step,
                    const OptimizerConfig& cfg) {
  if (grads.size() != params.size()) {
    throw ShapeError("optimizer: " + std::to_string(grads.size()) + " gradients for " + std::to_string(params.size()) +
                     " parameters");
  }
  if (cfg.kind == OptimizerKind::sgd) {
    for (std::size_t i = 0; i < params.size(); ++i) params[i] -= cfg.learning_rate * grads[i];
    return;
  }
  if (step == 0) throw ArgumentError("optimizer step count starts at 1");
  if (state.m.empty() && state.v.empty()) {
    state.m.assign(params.size(), 0.0);
    state.v.assign(params.size(), 0.0);
  }
  if (state.m.size() != params.size() || state.v.size() != params.size()) {
    throw ShapeError("optimizer: moment state of size " + std::to_string(state.m.size()) + " for " +
                     std::to_string(params.size()) + " parameters");
  }
  const double t = static_cast<double>(step);
  const double c1 = 1.0 - std::pow(cfg.beta1, t);
  const double c2 = 1.0 - std::pow(cfg.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i];
    state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
    state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
    const double m_hat = state.m[i] / c1;
    const double v_hat = state.v[i] / c2;
    params[i] -= cfg.learning_rate * m_hat / (std::sqrt(v_hat) + cfg.epsilon);
  }
}

Optimizer::Optimizer(std::vector<NamedTensor> params, OptimizerConfig cfg)
    : params_(std::move(params)), state_(params_.size()), cfg_(cfg) {
  if (!(cfg_.learning_rate >= 0.0) || !std::isfinite(cfg_.learning_rate)) {
    throw ArgumentError("learning rate must be finite and non-negative");
  }
}

void Optimizer::zero_grad() {
  for (auto& p : params_) p.tensor.zero_grad();
}

void Optimizer::step() {
  ++step_;
  std::vector<double> zeros;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Tensor& t = params_[i].tensor;
    std::span<const double> g = t.grad();
    if (g.empty()) {
      zeros.assign(t.numel(), 0.0);
      g = zeros;
    }
    optimizer_step(t.mutable_data(), g, state_[i], step_, cfg_);
  }
}

}  // namespace cwhar::train
