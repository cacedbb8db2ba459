#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "noisylab/error.hpp"
#include "noisylab/noise.hpp"
#include "noisylab/tensor.hpp"

namespace noisylab {

/// Probabilities are clamped to [kProbClamp, 1] before every logarithm.
inline constexpr double kProbClamp = 1e-7;

/// Batch-mean loss and the per-sample values it averages.
struct LossValue {
  double scalar = 0.0;
  std::vector<double> per_sample;
};

/// Unreduced per-sample loss. Row t of row_grad is d values[t] / d pred[t].
struct PerSampleLoss {
  std::vector<double> values;
  Tensor row_grad;
};

/// Reduced loss plus its gradient with respect to the prediction batch.
struct LossTerm {
  LossValue value;
  Tensor grad;
};

/// Loss of two prediction batches with gradients for both.
struct PairLossTerm {
  LossValue value;
  Tensor grad_p;
  Tensor grad_q;
};

struct SampleWeights {
  std::vector<double> weights;

  static SampleWeights ones(std::size_t n) { return {std::vector<double>(n, 1.0)}; }
  static SampleWeights selection(std::size_t n, std::span<const std::size_t> chosen) {
    SampleWeights w{std::vector<double>(n, 0.0)};
    for (auto i : chosen) w.weights.at(i) = 1.0;
    return w;
  }
};

/// How F-correction maps the clean prediction f to the noisy-label prediction.
/// Transpose: q_j = sum_i T_ij f_i, a distribution over observed labels for
/// row-stochastic T. Literal: q_i = sum_j T_ij f_j.
enum class CorrectionOrientation { Transpose, Literal };

namespace detail {

inline double clamp_prob(double p) { return std::clamp(p, kProbClamp, 1.0); }
inline bool in_clamp_range(double p) { return p >= kProbClamp && p <= 1.0; }

inline void require_batch(const Tensor& pred, std::span<const int> labels, const char* what) {
  if (pred.rank() != 2) throw DimensionError(std::string(what) + ": predictions must be [B x c], got " + shape_string(pred.shape()));
  if (pred.rows() != labels.size()) {
    throw DimensionError(std::string(what) + ": " + std::to_string(pred.rows()) + " prediction rows but " +
                         std::to_string(labels.size()) + " labels");
  }
  const auto c = static_cast<int>(pred.dim(1));
  for (std::size_t t = 0; t < labels.size(); ++t) {
    if (labels[t] < 0 || labels[t] >= c) {
      throw DataError(std::string(what) + ": label " + std::to_string(labels[t]) + " at row " + std::to_string(t) +
                      " outside [0, " + std::to_string(c) + ")");
    }
  }
}

inline void require_distributions(const Tensor& pred, const char* what) {
  for (std::size_t r = 0; r < pred.rows(); ++r) {
    double s = 0.0;
    for (double v : pred.row(r)) {
      if (!(v >= 0.0)) throw NumericError(std::string(what) + ": negative or NaN probability in row " + std::to_string(r));
      s += v;
    }
    if (std::abs(s - 1.0) > 1e-6) {
      throw NumericError(std::string(what) + ": row " + std::to_string(r) + " sums to " + std::to_string(s));
    }
  }
}

// CCE on rows that are trusted to be distributions (or deliberately not, for
// the literal correction orientation).
inline PerSampleLoss cce_unchecked(const Tensor& pred, std::span<const int> labels) {
  PerSampleLoss out{std::vector<double>(pred.rows()), Tensor(pred.shape())};
  for (std::size_t t = 0; t < pred.rows(); ++t) {
    const auto y = static_cast<std::size_t>(labels[t]);
    const double p = pred.at(t, y);
    out.values[t] = -std::log(clamp_prob(p));
    out.row_grad.at(t, y) = in_clamp_range(p) ? -1.0 / p : 0.0;
  }
  return out;
}

}  // namespace detail

inline PerSampleLoss cce_per_sample(const Tensor& pred, std::span<const int> labels) {
  detail::require_batch(pred, labels, "cce");
  detail::require_distributions(pred, "cce");
  return detail::cce_unchecked(pred, labels);
}

/// Plain batch mean of a per-sample loss.
inline LossTerm mean_loss(const PerSampleLoss& loss) {
  const std::size_t n = loss.values.size();
  LossTerm out{{0.0, loss.values}, loss.row_grad};
  if (n == 0) return out;
  const double scale = 1.0 / static_cast<double>(n);
  double s = 0.0;
  for (double v : loss.values) s += v;
  out.value.scalar = s / static_cast<double>(n);
  for (double& g : out.grad.values()) g *= scale;
  return out;
}

/// Categorical cross entropy, averaged over the batch.
inline LossTerm cce(const Tensor& pred, std::span<const int> labels) { return mean_loss(cce_per_sample(pred, labels)); }

/// Applies the noise model to the prediction batch.
inline Tensor apply_transition(const Tensor& pred, const TransitionMatrix& t,
                               CorrectionOrientation orientation = CorrectionOrientation::Transpose) {
  const std::size_t c = t.classes();
  if (pred.rank() != 2 || pred.dim(1) != c) {
    throw DimensionError("transition matrix has " + std::to_string(c) + " classes but predictions are " +
                         shape_string(pred.shape()));
  }
  Tensor q(pred.shape());
  for (std::size_t r = 0; r < pred.rows(); ++r) {
    auto f = pred.row(r);
    auto out = q.row(r);
    for (std::size_t j = 0; j < c; ++j) {
      double acc = 0.0;
      for (std::size_t i = 0; i < c; ++i) {
        acc += orientation == CorrectionOrientation::Transpose ? t(i, j) * f[i] : t(j, i) * f[i];
      }
      out[j] = acc;
    }
  }
  return q;
}

/// Per-sample CCE of the corrected prediction; gradients are chained back to pred.
inline PerSampleLoss forward_corrected_per_sample(const Tensor& pred, const TransitionMatrix& t,
                                                  std::span<const int> labels,
                                                  CorrectionOrientation orientation = CorrectionOrientation::Transpose) {
  detail::require_batch(pred, labels, "forward_corrected_cce");
  detail::require_distributions(pred, "forward_corrected_cce");
  const Tensor q = apply_transition(pred, t, orientation);
  PerSampleLoss on_q = detail::cce_unchecked(q, labels);
  const std::size_t c = t.classes();
  Tensor grad(pred.shape());
  for (std::size_t r = 0; r < pred.rows(); ++r) {
    auto gq = on_q.row_grad.row(r);
    auto gp = grad.row(r);
    for (std::size_t i = 0; i < c; ++i) {
      double acc = 0.0;
      for (std::size_t j = 0; j < c; ++j) {
        acc += orientation == CorrectionOrientation::Transpose ? t(i, j) * gq[j] : t(j, i) * gq[j];
      }
      gp[i] = acc;
    }
  }
  return {std::move(on_q.values), std::move(grad)};
}

inline LossTerm forward_corrected_cce(const Tensor& pred, const TransitionMatrix& t, std::span<const int> labels,
                                      CorrectionOrientation orientation = CorrectionOrientation::Transpose) {
  return mean_loss(forward_corrected_per_sample(pred, t, labels, orientation));
}

/// sum_t w_t * loss_t / sum_t w_t, zero when every weight is zero. per_sample
/// holds the contributions rescaled so that their mean equals the scalar.
inline LossTerm weighted_supervised(const PerSampleLoss& loss, const SampleWeights& w) {
  const std::size_t n = loss.values.size();
  if (w.weights.size() != n) {
    throw DimensionError("weighted loss: " + std::to_string(w.weights.size()) + " weights for " + std::to_string(n) +
                         " samples");
  }
  double total = 0.0;
  for (double v : w.weights) {
    if (!(v >= 0.0)) throw ParameterError("sample weights must be nonnegative");
    total += v;
  }
  LossTerm out{{0.0, std::vector<double>(n, 0.0)}, Tensor(loss.row_grad.shape())};
  if (total == 0.0) return out;
  double s = 0.0;
  for (std::size_t t = 0; t < n; ++t) s += w.weights[t] * loss.values[t];
  out.value.scalar = s / total;
  for (std::size_t t = 0; t < n; ++t) {
    if (w.weights[t] == 0.0) continue;
    out.value.per_sample[t] = w.weights[t] * loss.values[t] * static_cast<double>(n) / total;
    const double scale = w.weights[t] / total;
    auto src = loss.row_grad.row(t);
    auto dst = out.grad.row(t);
    for (std::size_t j = 0; j < src.size(); ++j) dst[j] = src[j] * scale;
  }
  return out;
}

/// Batch-mean KL(p || q) with gradients into both arguments.
inline PairLossTerm kl_divergence(const Tensor& p, const Tensor& q) {
  if (p.shape() != q.shape() || p.rank() != 2) {
    throw DimensionError("kl_divergence: shapes " + shape_string(p.shape()) + " and " + shape_string(q.shape()) +
                         " differ or are not [B x c]");
  }
  const std::size_t n = p.rows();
  PairLossTerm out{{0.0, std::vector<double>(n, 0.0)}, Tensor(p.shape()), Tensor(q.shape())};
  const double scale = 1.0 / static_cast<double>(n);
  double total = 0.0;
  for (std::size_t t = 0; t < n; ++t) {
    auto pr = p.row(t);
    auto qr = q.row(t);
    auto gp = out.grad_p.row(t);
    auto gq = out.grad_q.row(t);
    double kl = 0.0;
    for (std::size_t i = 0; i < pr.size(); ++i) {
      const double cp = detail::clamp_prob(pr[i]);
      const double cq = detail::clamp_prob(qr[i]);
      const double log_ratio = std::log(cp / cq);
      kl += pr[i] * log_ratio;
      gp[i] = scale * (log_ratio + (detail::in_clamp_range(pr[i]) ? pr[i] / cp : 0.0));
      gq[i] = scale * (detail::in_clamp_range(qr[i]) ? -pr[i] / cq : 0.0);
    }
    out.value.per_sample[t] = kl;
    total += kl;
  }
  out.value.scalar = n ? total / static_cast<double>(n) : 0.0;
  return out;
}

/// supervised + alpha * psdr, elementwise on the per-sample values.
inline LossValue combined_loss(const LossValue& supervised, const LossValue& psdr, double alpha) {
  if (!(alpha >= 0.0)) throw ParameterError("alpha must be nonnegative");
  LossValue out{supervised.scalar + alpha * psdr.scalar, supervised.per_sample};
  if (psdr.per_sample.size() == out.per_sample.size()) {
    for (std::size_t t = 0; t < out.per_sample.size(); ++t) out.per_sample[t] += alpha * psdr.per_sample[t];
  }
  return out;
}

/// Gradient of the combined objective w.r.t. the stacked output [f(x'); f(x'')].
inline Tensor combined_gradient(const Tensor& supervised_grad, const PairLossTerm& psdr, double alpha) {
  if (!(alpha >= 0.0)) throw ParameterError("alpha must be nonnegative");
  if (supervised_grad.shape() != psdr.grad_p.shape()) throw DimensionError("combined_gradient: shape mismatch");
  Tensor top = supervised_grad;
  for (std::size_t i = 0; i < top.size(); ++i) top[i] += alpha * psdr.grad_p[i];
  Tensor bottom = psdr.grad_q;
  for (double& v : bottom.values()) v *= alpha;
  return concat_rows(top, bottom);
}

}  // namespace noisylab
