#include "cwhar/grad_check.h"

#include <algorithm>
#include <cmath>

#include "cwhar/errors.h"

namespace cwhar {

const GradCheckEntry* GradCheckReport::worst() const {
  if (entries.empty()) return nullptr;
  return &*std::max_element(entries.begin(), entries.end(),
                            [](const auto& a, const auto& b) { return a.rel_error < b.rel_error; });
}

double gradient_rel_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-12});
  return std::abs(analytic - numeric) / denom;
}

GradCheckReport grad_check(const std::function<Tensor()>& loss_fn, std::vector<NamedTensor> params, double eps,
                           double tolerance) {
  if (!(eps > 0.0)) throw ArgumentError("grad_check: eps must be positive");
  for (auto& p : params) {
    p.tensor.set_requires_grad(true);
    p.tensor.zero_grad();
  }
  const Tensor loss = loss_fn();
  backward(loss);

  auto evaluate = [&]() {
    NoGradGuard guard;
    const double v = loss_fn().item();
    if (!std::isfinite(v)) throw NumericError("grad_check: non-finite loss under perturbation");
    return v;
  };

  GradCheckReport report;
  report.tolerance = tolerance;
  for (auto& p : params) {
    const std::vector<double> analytic = p.tensor.has_grad()
                                             ? std::vector<double>(p.tensor.grad().begin(), p.tensor.grad().end())
                                             : std::vector<double>(p.tensor.numel(), 0.0);
    auto values = p.tensor.mutable_data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double original = values[i];
      values[i] = original + eps;
      const double up = evaluate();
      values[i] = original - eps;
      const double down = evaluate();
      values[i] = original;
      const double numeric = (up - down) / (2.0 * eps);
      GradCheckEntry entry{p.name, i, analytic[i], numeric, gradient_rel_error(analytic[i], numeric)};
      report.max_rel_error = std::max(report.max_rel_error, entry.rel_error);
      report.entries.push_back(std::move(entry));
    }
  }
  return report;
}

}  // namespace cwhar
