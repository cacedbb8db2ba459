#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "noisylab/augment.hpp"
#include "noisylab/dataset.hpp"
#include "noisylab/error.hpp"
#include "noisylab/losses.hpp"
#include "noisylab/network.hpp"
#include "noisylab/noise.hpp"
#include "noisylab/optim.hpp"
#include "noisylab/random.hpp"

namespace noisylab {

enum class StrategyKind { Normal, FCorrection, Decoupling, Coteaching };
enum class TSource { Oracle, Estimated };

/// Mean: each term is averaged over its own sample set. Sum: plain sums.
enum class TermNormalization { Mean, Sum };

inline std::string to_string(StrategyKind k) {
  switch (k) {
    case StrategyKind::Normal: return "normal";
    case StrategyKind::FCorrection: return "fcorrection";
    case StrategyKind::Decoupling: return "decoupling";
    case StrategyKind::Coteaching: return "coteaching";
  }
  return "?";
}

inline bool uses_two_networks(StrategyKind k) {
  return k == StrategyKind::Decoupling || k == StrategyKind::Coteaching;
}

struct StrategyConfig {
  StrategyKind kind = StrategyKind::Normal;
  bool psdr_enabled = false;
  double alpha = 1.0;
  int E_k = 10;
  double tau = 0.5;
  TSource t_source = TSource::Oracle;
  int warmup_epochs = 30;
  double percentile = 97.0;
  CorrectionOrientation orientation = CorrectionOrientation::Transpose;
  TermNormalization normalization = TermNormalization::Mean;

  void validate() const {
    if (!(alpha >= 0.0)) throw ParameterError("alpha must be nonnegative");
    if (!(tau >= 0.0 && tau < 1.0)) throw ParameterError("tau must lie in [0, 1)");
    if (E_k < 1) throw ParameterError("E_k must be at least 1");
    if (warmup_epochs < 0) throw ParameterError("warmup_epochs must be nonnegative");
    if (!(percentile > 0.0 && percentile <= 100.0)) throw ParameterError("percentile must lie in (0, 100]");
  }
};

struct KeepRateSchedule {
  int E_k = 10;
  double tau = 0.5;
};

/// R(e) = 1 - min(e / E_k * tau, tau).
inline double keep_rate(const KeepRateSchedule& s, int epoch) {
  const double ratio = static_cast<double>(epoch) / static_cast<double>(s.E_k);
  return 1.0 - std::min(ratio * s.tau, s.tau);
}

/// Indices of the max(1, round(keep_rate * B)) smallest losses, ties broken by
/// lower index; returned in ascending index order. Rounding is half-up.
inline std::vector<std::size_t> select_small_loss(std::span<const double> losses, double rate) {
  const std::size_t n = losses.size();
  if (n == 0) return {};
  const auto want = static_cast<std::size_t>(std::floor(rate * static_cast<double>(n) + 0.5));
  const std::size_t k = std::clamp<std::size_t>(want, 1, n);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return losses[a] < losses[b]; });
  order.resize(k);
  std::sort(order.begin(), order.end());
  return order;
}

struct Learner {
  Network net;
  AdamState optimizer;
};

struct StrategyState {
  StrategyConfig config;
  std::vector<Learner> learners;
  int epoch = 0;
  std::optional<TransitionMatrix> estimated_T;
  LRSchedule lr_schedule = LRSchedule::standard();

  KeepRateSchedule keep_schedule() const { return {config.E_k, config.tau}; }
};

/// One learner per seed: one for Normal / F-correction, two otherwise.
inline StrategyState make_strategy_state(const StrategyConfig& config, const std::vector<LayerSpec>& layers,
                                         std::span<const std::uint64_t> seeds, const LRSchedule& schedule,
                                         double weight_decay) {
  config.validate();
  schedule.validate();
  const std::size_t want = uses_two_networks(config.kind) ? 2 : 1;
  if (seeds.size() != want) {
    throw ParameterError(to_string(config.kind) + " needs " + std::to_string(want) + " network seed(s)");
  }
  if (!(weight_decay >= 0.0)) throw ParameterError("weight decay must be nonnegative");
  StrategyState state;
  state.config = config;
  state.lr_schedule = schedule;
  for (auto seed : seeds) {
    Network net(layers, seed);
    AdamState opt(std::as_const(net).parameters(), schedule.at(0), weight_decay);
    state.learners.push_back({std::move(net), std::move(opt)});
  }
  return state;
}

/// Mini-batch of paired views; row t of both tensors comes from the same source sample.
struct PairBatch {
  Tensor x_prime;
  Tensor x_double_prime;
  std::vector<int> labels;
  std::vector<std::size_t> source;
  std::optional<std::vector<int>> true_labels;  // metrics only

  std::size_t size() const noexcept { return labels.size(); }

  static PairBatch from_pairs(std::span<const AugmentedPair> pairs) {
    if (pairs.empty()) throw DataError("empty batch");
    Shape s = pairs[0].x_prime.shape();
    s.insert(s.begin(), pairs.size());
    PairBatch b{Tensor(s), Tensor(s), {}, {}, std::nullopt};
    const std::size_t rs = pairs[0].x_prime.size();
    for (std::size_t t = 0; t < pairs.size(); ++t) {
      if (pairs[t].x_prime.shape() != pairs[0].x_prime.shape() ||
          pairs[t].x_double_prime.shape() != pairs[0].x_prime.shape()) {
        throw DimensionError("augmented pairs in a batch must share one shape");
      }
      std::copy(pairs[t].x_prime.values().begin(), pairs[t].x_prime.values().end(),
                b.x_prime.values().begin() + static_cast<std::ptrdiff_t>(t * rs));
      std::copy(pairs[t].x_double_prime.values().begin(), pairs[t].x_double_prime.values().end(),
                b.x_double_prime.values().begin() + static_cast<std::ptrdiff_t>(t * rs));
      b.labels.push_back(pairs[t].label);
      b.source.push_back(pairs[t].source_index);
    }
    return b;
  }
};

struct NetStepMetrics {
  double supervised = 0.0;
  double psdr = 0.0;
  double combined = 0.0;
  std::size_t correct_observed = 0;
  std::size_t correct_true = 0;
  std::vector<double> supervised_weights;  // weights the supervised term used
};

struct StepMetrics {
  std::vector<NetStepMetrics> nets;
  std::size_t batch_size = 0;
  double keep_rate = 1.0;
};

namespace detail {

struct ViewOutputs {
  Tensor prime;                         // f(x') rows
  std::optional<Tensor> double_prime;   // f(x'') rows, when PSDR is on
};

// Forwards x' (and x'' stacked below it when PSDR is enabled) with caching.
inline ViewOutputs forward_views(Learner& learner, const PairBatch& batch, bool with_pair) {
  if (!with_pair) return {learner.net.forward(batch.x_prime), std::nullopt};
  const std::size_t b = batch.size();
  const Tensor out = learner.net.forward(concat_rows(batch.x_prime, batch.x_double_prime));
  return {out.slice_rows(0, b), out.slice_rows(b, 2 * b)};
}

inline void count_correct(const Tensor& probs, const PairBatch& batch, NetStepMetrics& m) {
  for (std::size_t t = 0; t < batch.size(); ++t) {
    const auto pred = static_cast<int>(argmax(probs.row(t)));
    m.correct_observed += pred == batch.labels[t] ? 1 : 0;
    if (batch.true_labels) m.correct_true += pred == (*batch.true_labels)[t] ? 1 : 0;
  }
}

// Builds the combined objective on cached outputs and backpropagates it.
inline NetStepMetrics backprop_objective(Learner& learner, const ViewOutputs& views, const PerSampleLoss& supervised,
                                         const SampleWeights& weights, const StrategyConfig& cfg) {
  NetStepMetrics m;
  m.supervised_weights = weights.weights;
  LossTerm sup = weighted_supervised(supervised, weights);
  if (cfg.normalization == TermNormalization::Sum) {
    const double total = std::accumulate(weights.weights.begin(), weights.weights.end(), 0.0);
    sup.value.scalar *= total;
    for (double& g : sup.grad.values()) g *= total;
  }
  m.supervised = sup.value.scalar;
  if (!cfg.psdr_enabled) {
    m.combined = sup.value.scalar;
    learner.net.backward(sup.grad);
    return m;
  }
  PairLossTerm kl = kl_divergence(views.prime, *views.double_prime);
  if (cfg.normalization == TermNormalization::Sum) {
    const auto n = static_cast<double>(views.prime.rows());
    kl.value.scalar *= n;
    for (double& g : kl.grad_p.values()) g *= n;
    for (double& g : kl.grad_q.values()) g *= n;
  }
  m.psdr = kl.value.scalar;
  m.combined = combined_loss(sup.value, kl.value, cfg.alpha).scalar;
  learner.net.backward(combined_gradient(sup.grad, kl, cfg.alpha));
  return m;
}

inline void require_learners(const StrategyState& state, std::size_t n, const char* what) {
  if (state.learners.size() != n) {
    throw StateError(std::string(what) + " needs " + std::to_string(n) + " network(s), state has " +
                     std::to_string(state.learners.size()));
  }
}

}  // namespace detail

/// Mean CCE on x' (plus alpha * KL(f(x') || f(x'')) when PSDR is on), one Adam step.
inline StepMetrics step_normal(StrategyState& state, const PairBatch& batch) {
  detail::require_learners(state, 1, "step_normal");
  auto& learner = state.learners[0];
  const auto views = detail::forward_views(learner, batch, state.config.psdr_enabled);
  const auto sup = cce_per_sample(views.prime, batch.labels);
  StepMetrics out{{}, batch.size(), 1.0};
  out.nets.push_back(detail::backprop_objective(learner, views, sup, SampleWeights::ones(batch.size()), state.config));
  detail::count_correct(views.prime, batch, out.nets[0]);
  adam_step(learner.optimizer, learner.net.parameters());
  return out;
}

/// Forward-corrected CCE through the state's transition matrix.
inline StepMetrics step_fcorrection(StrategyState& state, const PairBatch& batch) {
  detail::require_learners(state, 1, "step_fcorrection");
  if (!state.estimated_T) throw StateError("F-correction step needs a transition matrix");
  auto& learner = state.learners[0];
  const auto views = detail::forward_views(learner, batch, state.config.psdr_enabled);
  const auto sup = forward_corrected_per_sample(views.prime, *state.estimated_T, batch.labels, state.config.orientation);
  StepMetrics out{{}, batch.size(), 1.0};
  out.nets.push_back(detail::backprop_objective(learner, views, sup, SampleWeights::ones(batch.size()), state.config));
  detail::count_correct(views.prime, batch, out.nets[0]);
  adam_step(learner.optimizer, learner.net.parameters());
  return out;
}

/// Both networks take a CCE step on the samples where their argmax
/// predictions on x' differ; PSDR, when on, covers the whole batch.
inline StepMetrics step_decoupling(StrategyState& state, const PairBatch& batch) {
  detail::require_learners(state, 2, "step_decoupling");
  const bool pair = state.config.psdr_enabled;
  const auto v1 = detail::forward_views(state.learners[0], batch, pair);
  const auto v2 = detail::forward_views(state.learners[1], batch, pair);
  std::vector<std::size_t> disagree;
  for (std::size_t t = 0; t < batch.size(); ++t) {
    if (argmax(v1.prime.row(t)) != argmax(v2.prime.row(t))) disagree.push_back(t);
  }
  const auto weights = SampleWeights::selection(batch.size(), disagree);
  StepMetrics out{{}, batch.size(), 1.0};
  const detail::ViewOutputs* views[2] = {&v1, &v2};
  for (std::size_t k = 0; k < 2; ++k) {
    const auto sup = cce_per_sample(views[k]->prime, batch.labels);
    out.nets.push_back(detail::backprop_objective(state.learners[k], *views[k], sup, weights, state.config));
    detail::count_correct(views[k]->prime, batch, out.nets[k]);
  }
  for (auto& l : state.learners) adam_step(l.optimizer, l.net.parameters());
  return out;
}

/// Each network ranks per-sample CCE on x' and keeps its R(e) smallest; network
/// 1 learns from network 2's selection and vice versa. Both gradients come from
/// the pre-step parameters before either optimizer is applied.
inline StepMetrics step_coteaching(StrategyState& state, const PairBatch& batch) {
  detail::require_learners(state, 2, "step_coteaching");
  const bool pair = state.config.psdr_enabled;
  const double rate = keep_rate(state.keep_schedule(), state.epoch);
  const auto v1 = detail::forward_views(state.learners[0], batch, pair);
  const auto v2 = detail::forward_views(state.learners[1], batch, pair);
  const auto l1 = cce_per_sample(v1.prime, batch.labels);
  const auto l2 = cce_per_sample(v2.prime, batch.labels);
  const auto picked_by_1 = select_small_loss(l1.values, rate);
  const auto picked_by_2 = select_small_loss(l2.values, rate);
  StepMetrics out{{}, batch.size(), rate};
  out.nets.push_back(detail::backprop_objective(state.learners[0], v1, l1,
                                                SampleWeights::selection(batch.size(), picked_by_2), state.config));
  out.nets.push_back(detail::backprop_objective(state.learners[1], v2, l2,
                                                SampleWeights::selection(batch.size(), picked_by_1), state.config));
  detail::count_correct(v1.prime, batch, out.nets[0]);
  detail::count_correct(v2.prime, batch, out.nets[1]);
  for (auto& l : state.learners) adam_step(l.optimizer, l.net.parameters());
  return out;
}

inline StepMetrics step(StrategyState& state, const PairBatch& batch) {
  switch (state.config.kind) {
    case StrategyKind::Normal: return step_normal(state, batch);
    case StrategyKind::FCorrection: return step_fcorrection(state, batch);
    case StrategyKind::Decoupling: return step_decoupling(state, batch);
    case StrategyKind::Coteaching: return step_coteaching(state, batch);
  }
  throw StateError("unknown strategy");
}

struct NetEpochMetrics {
  double supervised = 0.0;
  double psdr = 0.0;
  double combined = 0.0;
  double train_acc_observed = 0.0;
  std::optional<double> train_acc_true;
};

struct EpochMetrics {
  int epoch = 0;
  double learning_rate = 0.0;
  double keep_rate = 1.0;
  std::size_t steps = 0;
  std::vector<NetEpochMetrics> nets;
};

/// Seeds of the per-epoch shuffle and per-sample augmentation streams.
struct EpochSeeds {
  std::uint64_t shuffle = 0;
  std::uint64_t augment = 0;

  static EpochSeeds from(std::uint64_t seed) { return {derive_seed(seed, "shuffle"), derive_seed(seed, "augment")}; }
};

/// Fills rows of a pair batch for the given samples. Every sample's two views
/// come from its own generator, seeded by (augment seed, epoch, sample index).
inline PairBatch make_pair_batch(const LabeledDataset& data, std::span<const std::size_t> indices,
                                 const AugmentPolicy& policy, std::uint64_t augment_seed, int epoch) {
  PairBatch b{data.gather(indices), Tensor(), {}, {}, std::nullopt};
  b.x_double_prime = Tensor(b.x_prime.shape());
  const Shape sample = data.sample_shape();
  const std::size_t rs = data.inputs.row_size();
  std::vector<double> scratch(rs);
  for (std::size_t k = 0; k < indices.size(); ++k) {
    Rng rng(derive_seed(augment_seed, static_cast<std::uint64_t>(epoch), indices[k]));
    auto src = data.inputs.row(indices[k]);
    augment_into(policy, src, sample, b.x_prime.row(k), rng);
    augment_into(policy, src, sample, b.x_double_prime.row(k), rng);
    b.labels.push_back(data.observed_labels[indices[k]]);
    b.source.push_back(indices[k]);
  }
  if (data.true_labels) {
    b.true_labels.emplace();
    for (auto i : indices) b.true_labels->push_back((*data.true_labels)[i]);
  }
  return b;
}

/// Shuffles, batches (last batch may be short), augments pairs, dispatches
/// the configured step, then advances the epoch counter.
inline EpochMetrics run_epoch(StrategyState& state, const LabeledDataset& data, const AugmentPolicy& policy,
                              std::size_t batch_size, const EpochSeeds& seeds) {
  if (batch_size < 1) throw ParameterError("batch size must be at least 1");
  if (data.size() == 0) throw DataError("cannot train on an empty dataset");
  const double lr = state.lr_schedule.at(state.epoch);
  for (auto& l : state.learners) l.optimizer.learning_rate = lr;

  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  Rng shuffle_rng(derive_seed(seeds.shuffle, static_cast<std::uint64_t>(state.epoch), 0));
  std::shuffle(order.begin(), order.end(), shuffle_rng);

  EpochMetrics em;
  em.epoch = state.epoch;
  em.learning_rate = lr;
  em.keep_rate = state.config.kind == StrategyKind::Coteaching ? keep_rate(state.keep_schedule(), state.epoch) : 1.0;
  em.nets.resize(state.learners.size());
  std::vector<std::size_t> correct_obs(state.learners.size(), 0), correct_true(state.learners.size(), 0);
  for (std::size_t begin = 0; begin < order.size(); begin += batch_size) {
    const std::size_t end = std::min(order.size(), begin + batch_size);
    const std::span<const std::size_t> idx(order.data() + begin, end - begin);
    const PairBatch batch = make_pair_batch(data, idx, policy, seeds.augment, state.epoch);
    const StepMetrics sm = step(state, batch);
    const auto w = static_cast<double>(batch.size());
    for (std::size_t k = 0; k < sm.nets.size(); ++k) {
      em.nets[k].supervised += w * sm.nets[k].supervised;
      em.nets[k].psdr += w * sm.nets[k].psdr;
      em.nets[k].combined += w * sm.nets[k].combined;
      correct_obs[k] += sm.nets[k].correct_observed;
      correct_true[k] += sm.nets[k].correct_true;
    }
    ++em.steps;
  }
  const auto n = static_cast<double>(data.size());
  for (std::size_t k = 0; k < em.nets.size(); ++k) {
    em.nets[k].supervised /= n;
    em.nets[k].psdr /= n;
    em.nets[k].combined /= n;
    em.nets[k].train_acc_observed = static_cast<double>(correct_obs[k]) / n;
    if (data.true_labels) em.nets[k].train_acc_true = static_cast<double>(correct_true[k]) / n;
  }
  ++state.epoch;
  return em;
}

/// Predicts in chunks to bound memory.
inline Tensor predict_all(const Network& net, const Tensor& inputs, std::size_t chunk = 1024) {
  const std::size_t n = inputs.rows();
  Tensor out;
  std::vector<double> values;
  std::size_t classes = 0;
  for (std::size_t begin = 0; begin < n; begin += chunk) {
    const Tensor p = net.predict(inputs.slice_rows(begin, std::min(n, begin + chunk)));
    classes = p.dim(1);
    values.insert(values.end(), p.values().begin(), p.values().end());
  }
  return Tensor(Shape{n, classes}, std::move(values));
}

inline double accuracy(const Network& net, const Tensor& inputs, std::span<const int> labels) {
  if (labels.empty()) return 0.0;
  const Tensor p = predict_all(net, inputs);
  std::size_t ok = 0;
  for (std::size_t t = 0; t < labels.size(); ++t) ok += static_cast<int>(argmax(p.row(t))) == labels[t] ? 1 : 0;
  return static_cast<double>(ok) / static_cast<double>(labels.size());
}

struct EstimatedTransition {
  TransitionMatrix matrix;
  std::vector<std::size_t> fallback_classes;  // classes whose anchor came from the global argmax
};

/// Anchor-point estimate: for class i, the anchor is the sample with the
/// largest f_i among samples whose f_i does not exceed the given percentile
/// of f_i over the dataset (percentile 100 is the plain argmax). Row i of the
/// estimate is f(anchor), clamped to [0, 1] and row-normalized.
inline EstimatedTransition estimate_T(const Network& net, const Tensor& inputs, double percentile) {
  if (!(percentile > 0.0 && percentile <= 100.0)) throw ParameterError("percentile must lie in (0, 100]");
  if (inputs.rows() == 0) throw DataError("cannot estimate T on an empty dataset");
  const Tensor probs = predict_all(net, inputs);
  const std::size_t n = probs.rows(), c = probs.dim(1);
  EstimatedTransition out{TransitionMatrix(c), {}};
  std::vector<double> column(n);
  for (std::size_t i = 0; i < c; ++i) {
    for (std::size_t t = 0; t < n; ++t) column[t] = probs.at(t, i);
    std::vector<double> sorted = column;
    std::sort(sorted.begin(), sorted.end());
    const auto rank = static_cast<std::size_t>(std::ceil(percentile / 100.0 * static_cast<double>(n - 1)));
    const double threshold = sorted[std::min(rank, n - 1)];
    std::optional<std::size_t> anchor;
    for (std::size_t t = 0; t < n; ++t) {
      if (column[t] <= threshold && (!anchor || column[t] > column[*anchor])) anchor = t;
    }
    if (!anchor) {
      anchor = static_cast<std::size_t>(std::distance(column.begin(), std::max_element(column.begin(), column.end())));
      out.fallback_classes.push_back(i);
    }
    double s = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      out.matrix(i, j) = std::clamp(probs.at(*anchor, j), 0.0, 1.0);
      s += out.matrix(i, j);
    }
    for (std::size_t j = 0; j < c; ++j) out.matrix(i, j) = s > 0.0 ? out.matrix(i, j) / s : (i == j ? 1.0 : 0.0);
  }
  return out;
}

/// Trains a fresh network with the Normal strategy for `warmup_epochs` and
/// installs its anchor-point estimate of T into `state`.
inline EstimatedTransition warm_up_and_estimate_T(StrategyState& state, const std::vector<LayerSpec>& layers,
                                                  const LabeledDataset& data, const AugmentPolicy& policy,
                                                  std::size_t batch_size, std::uint64_t seed) {
  StrategyConfig warm_cfg;
  warm_cfg.kind = StrategyKind::Normal;
  const std::uint64_t init_seed = derive_seed(seed, "warmup/init");
  const double wd = state.learners.empty() ? 0.0 : state.learners[0].optimizer.weight_decay;
  StrategyState warm = make_strategy_state(warm_cfg, layers, std::span<const std::uint64_t>(&init_seed, 1),
                                           state.lr_schedule, wd);
  const auto seeds = EpochSeeds::from(derive_seed(seed, "warmup/epochs"));
  for (int e = 0; e < state.config.warmup_epochs; ++e) run_epoch(warm, data, policy, batch_size, seeds);
  auto est = estimate_T(warm.learners[0].net, data.inputs, state.config.percentile);
  state.estimated_T = est.matrix;
  return est;
}

}  // namespace noisylab
