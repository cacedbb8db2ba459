#pragma once

#include <algorithm>
#include <cmath>
#include <functional>

#include "noisylab/network.hpp"
#include "noisylab/tensor.hpp"

namespace noisylab {

/// Scalar loss of a network output and its gradient w.r.t. that output.
struct LossEval {
  double value = 0.0;
  Tensor grad;
};

using LossFn = std::function<LossEval(const Tensor& output)>;

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t worst_tensor = 0;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t checked = 0;
  double tolerance = 0.0;

  bool passed() const { return max_rel_error < tolerance; }
};

/// Compares backprop gradients with central differences over every parameter:
/// max |analytic - numeric| / max(|analytic|, |numeric|, 1e-12).
inline GradCheckReport gradient_check(Network& net, const LossFn& loss, const Tensor& batch, double tolerance,
                                      double step = 1e-5) {
  net.zero_grad();
  const Tensor out = net.forward(batch);
  const LossEval at = loss(out);
  net.backward(at.grad);

  GradCheckReport report;
  report.tolerance = tolerance;
  auto params = net.parameters();
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& p = *params[k];
    p.ensure_grad();
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double orig = p[i];
      p[i] = orig + step;
      const double up = loss(net.predict(batch)).value;
      p[i] = orig - step;
      const double down = loss(net.predict(batch)).value;
      p[i] = orig;
      const double numeric = (up - down) / (2.0 * step);
      const double analytic = p.grad()[i];
      const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-12});
      const double rel = std::abs(analytic - numeric) / denom;
      ++report.checked;
      if (rel > report.max_rel_error) {
        report.max_rel_error = rel;
        report.worst_tensor = k;
        report.worst_index = i;
        report.worst_analytic = analytic;
        report.worst_numeric = numeric;
      }
    }
  }
  net.zero_grad();
  return report;
}

}  // namespace noisylab
