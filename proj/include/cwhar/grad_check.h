#pragma once

#include <functional>
#include <string>
#include <vector>

#include "cwhar/tensor.h"

namespace cwhar {

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

struct GradCheckEntry {
  std::string name;
  std::size_t index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_error = 0.0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double max_rel_error = 0.0;
  double tolerance = 0.0;

  bool passed() const { return max_rel_error <= tolerance; }
  const GradCheckEntry* worst() const;
};

/// |a − n| / max(|a|, |n|, 1e-12).
double gradient_rel_error(double analytic, double numeric);

/// Compares reverse-mode gradients of `loss_fn` against central differences
/// for every element of every tensor in `params`.
///
/// `loss_fn` must rebuild the graph from the current parameter values on
/// each call. Parameter values are restored exactly after each probe.
GradCheckReport grad_check(const std::function<Tensor()>& loss_fn, std::vector<NamedTensor> params, double eps,
                           double tolerance);

}  // namespace cwhar
