#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "noisylab/gradcheck.hpp"
#include "noisylab/losses.hpp"
#include "noisylab/network.hpp"
#include "noisylab/noise.hpp"
#include "noisylab/random.hpp"

namespace noisylab {

struct GradCheckCase {
  std::string name;
  GradCheckReport report;
};

namespace detail {

inline Tensor random_batch(Shape shape, std::uint64_t seed) {
  Rng rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Tensor t(std::move(shape));
  for (double& v : t.values()) v = normal(rng);
  return t;
}

inline std::vector<int> random_labels(std::size_t n, int classes, std::uint64_t seed) {
  Rng rng(seed);
  std::uniform_int_distribution<int> pick(0, classes - 1);
  std::vector<int> y(n);
  for (int& v : y) v = pick(rng);
  return y;
}

// Loss on a stacked [f(x'); f(x'')] output.
inline LossEval psdr_eval(const Tensor& out, const std::vector<int>* labels, double alpha) {
  const std::size_t b = out.rows() / 2;
  const Tensor p = out.slice_rows(0, b), q = out.slice_rows(b, 2 * b);
  const PairLossTerm kl = kl_divergence(p, q);
  if (!labels) return {kl.value.scalar, concat_rows(kl.grad_p, kl.grad_q)};
  const LossTerm sup = cce(p, *labels);
  return {combined_loss(sup.value, kl.value, alpha).scalar, combined_gradient(sup.grad, kl, alpha)};
}

}  // namespace detail

/// Finite-difference checks on 8-sample batches: every layer type under CCE,
/// and the KL, forward-corrected, weighted and combined losses on an MLP.
inline std::vector<GradCheckCase> run_gradcheck_suite(double tolerance = 1e-4, std::uint64_t seed = 7) {
  constexpr std::size_t B = 8;
  constexpr int C = 4;
  std::vector<GradCheckCase> out;
  const auto labels = detail::random_labels(B, C, derive_seed(seed, "labels"));
  const std::vector<LayerSpec> mlp{LayerSpec::dense(3, 6), LayerSpec::relu(), LayerSpec::dense(6, 5),
                                   LayerSpec::relu(), LayerSpec::dense(5, C), LayerSpec::softmax()};
  const Tensor x = detail::random_batch({B, 3}, derive_seed(seed, "x"));

  auto run = [&](const std::string& name, std::vector<LayerSpec> specs, const Tensor& batch, const LossFn& loss) {
    Network net(std::move(specs), derive_seed(seed, name));
    out.push_back({name, gradient_check(net, loss, batch, tolerance)});
  };

  auto cce_loss = [&](const Tensor& o) {
    auto t = cce(o, labels);
    return LossEval{t.value.scalar, t.grad};
  };
  run("dense+relu+softmax / cce", mlp, x, cce_loss);
  run("conv2d(stride 1, pad 1)+flatten / cce",
      {LayerSpec::conv2d(2, 3, 3, 1, 1), LayerSpec::relu(), LayerSpec::flatten(), LayerSpec::dense(3 * 4 * 4, C),
       LayerSpec::softmax()},
      detail::random_batch({B, 2, 4, 4}, derive_seed(seed, "img1")), cce_loss);
  run("conv2d(stride 2, pad 0)+flatten / cce",
      {LayerSpec::conv2d(1, 2, 2, 2, 0), LayerSpec::relu(), LayerSpec::conv2d(2, 2, 2, 1, 1), LayerSpec::flatten(),
       LayerSpec::dense(2 * 4 * 4, C), LayerSpec::softmax()},
      detail::random_batch({B, 1, 6, 6}, derive_seed(seed, "img2")), cce_loss);

  const TransitionMatrix t_sym = symmetric_matrix(C, 0.3);
  const TransitionMatrix t_asym = asymmetric_matrix(C, 0.4).matrix;
  run("mlp / forward-corrected cce (transpose)", mlp, x, [&](const Tensor& o) {
    auto t = forward_corrected_cce(o, t_asym, labels, CorrectionOrientation::Transpose);
    return LossEval{t.value.scalar, t.grad};
  });
  run("mlp / forward-corrected cce (literal)", mlp, x, [&](const Tensor& o) {
    auto t = forward_corrected_cce(o, t_sym, labels, CorrectionOrientation::Literal);
    return LossEval{t.value.scalar, t.grad};
  });
  run("mlp / weighted cce", mlp, x, [&](const Tensor& o) {
    const std::vector<std::size_t> chosen{0, 2, 3, 7};
    auto t = weighted_supervised(cce_per_sample(o, labels), SampleWeights::selection(B, chosen));
    return LossEval{t.value.scalar, t.grad};
  });

  const Tensor x2 = detail::random_batch({B, 3}, derive_seed(seed, "x2"));
  Tensor pair = concat_rows(x, x);
  for (std::size_t i = 0; i < x2.size(); ++i) pair[x.size() + i] = x[i] + 0.3 * x2[i];
  run("mlp / kl(f(x') || f(x''))", mlp, pair, [](const Tensor& o) { return detail::psdr_eval(o, nullptr, 0.0); });
  run("mlp / cce + 0.7 kl", mlp, pair, [&](const Tensor& o) { return detail::psdr_eval(o, &labels, 0.7); });
  return out;
}

}  // namespace noisylab
