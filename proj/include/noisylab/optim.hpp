#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "noisylab/error.hpp"
#include "noisylab/tensor.hpp"

namespace noisylab {

struct AdamState {
  std::uint64_t step_count = 0;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 0.0;
  std::vector<std::vector<double>> first_moment;
  std::vector<std::vector<double>> second_moment;

  AdamState() = default;

  AdamState(std::span<const Tensor* const> params, double lr, double wd)
      : learning_rate(lr), weight_decay(wd) {
    for (const auto* p : params) {
      first_moment.emplace_back(p->size(), 0.0);
      second_moment.emplace_back(p->size(), 0.0);
    }
  }

  AdamState(const std::vector<const Tensor*>& params, double lr, double wd)
      : AdamState(std::span<const Tensor* const>(params), lr, wd) {}

  friend bool operator==(const AdamState&, const AdamState&) = default;
};

/// One Adam update with bias correction. L2 weight decay is folded into the
/// raw gradient (g + wd * theta) before the moment updates. Gradients are
/// zeroed afterwards.
inline void adam_step(AdamState& state, std::span<Tensor* const> params) {
  if (params.size() != state.first_moment.size()) {
    throw StateError("optimizer state tracks " + std::to_string(state.first_moment.size()) + " tensors, got " +
                     std::to_string(params.size()));
  }
  for (std::size_t k = 0; k < params.size(); ++k) {
    if (!params[k]->has_grad()) throw StateError("parameter tensor " + std::to_string(k) + " has no gradient");
    if (params[k]->size() != state.first_moment[k].size()) {
      throw StateError("optimizer moment shape mismatch at tensor " + std::to_string(k));
    }
  }
  ++state.step_count;
  const double t = static_cast<double>(state.step_count);
  const double bc1 = 1.0 - std::pow(state.beta1, t);
  const double bc2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto theta = params[k]->data();
    auto grad = params[k]->grad();
    auto& m = state.first_moment[k];
    auto& v = state.second_moment[k];
    for (std::size_t i = 0; i < theta.size(); ++i) {
      const double g = grad[i] + state.weight_decay * theta[i];
      m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g;
      v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g * g;
      const double m_hat = m[i] / bc1;
      const double v_hat = v[i] / bc2;
      theta[i] -= state.learning_rate * m_hat / (std::sqrt(v_hat) + state.epsilon);
    }
    params[k]->zero_grad();
  }
}

inline void adam_step(AdamState& state, const std::vector<Tensor*>& params) {
  adam_step(state, std::span<Tensor* const>(params));
}

/// Piecewise-constant learning rate: the initial rate multiplied by every
/// milestone factor whose epoch has been reached (0-based epochs).
struct LRSchedule {
  double initial_lr = 1e-3;
  std::vector<std::pair<int, double>> milestones;

  /// Adam 1e-3, divided by 10 after 80, 120, 160 epochs and by 2 after 180.
  static LRSchedule standard() { return {1e-3, {{80, 0.1}, {120, 0.1}, {160, 0.1}, {180, 0.5}}}; }
  static LRSchedule constant(double lr) { return {lr, {}}; }

  double at(int epoch) const {
    double lr = initial_lr;
    for (const auto& [e, factor] : milestones) {
      if (epoch >= e) lr *= factor;
    }
    return lr;
  }

  void validate() const {
    if (!(initial_lr > 0.0)) throw ParameterError("learning rate must be positive");
    for (std::size_t i = 0; i < milestones.size(); ++i) {
      if (milestones[i].second <= 0.0) throw ParameterError("learning-rate factors must be positive");
      if (i && milestones[i].first < milestones[i - 1].first) throw ParameterError("milestones must be ordered");
    }
  }
};

}  // namespace noisylab
