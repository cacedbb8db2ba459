#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "noisylab/augment.hpp"
#include "noisylab/checkpoint.hpp"
#include "noisylab/config.hpp"
#include "noisylab/dataset.hpp"
#include "noisylab/metrics.hpp"
#include "noisylab/noise.hpp"
#include "noisylab/random.hpp"
#include "noisylab/strategies.hpp"

namespace noisylab {

// Every random stream of a run is derive_seed(master seed, tag) with one of
// these tags, unless the config pins a stream's seed explicitly.
namespace seed_tags {
inline constexpr const char* kData = "data";
inline constexpr const char* kNoise = "noise";
inline constexpr const char* kInitNet1 = "init/net1";
inline constexpr const char* kInitNet2 = "init/net2";
inline constexpr const char* kEpochs = "epochs";
inline constexpr const char* kWarmup = "warmup";
}  // namespace seed_tags

struct PreparedData {
  DatasetSplits splits;
  TransitionMatrix transition;  // matrix used to corrupt the training labels
  std::vector<CorruptionRecord> records;
  std::optional<std::string> noise_warning;
};

inline TransitionMatrix noise_matrix(const NoiseConfig& cfg, std::size_t classes,
                                     std::optional<std::string>* warning = nullptr) {
  if (cfg.type == "none") return TransitionMatrix::identity(classes);
  if (cfg.type == "symmetric") return symmetric_matrix(classes, cfg.epsilon);
  auto asym = asymmetric_matrix(classes, cfg.epsilon, cfg.mapping);
  if (warning) *warning = asym.warning;
  return asym.matrix;
}

/// Builds train/test splits and corrupts the training labels once. The test
/// split never passes through corruption.
inline PreparedData prepare_data(const ExperimentConfig& cfg) {
  PreparedData out;
  const auto& d = cfg.dataset;
  if (d.kind == "blobs") {
    BlobSpec spec = d.blobs;
    spec.seed = d.seed.value_or(derive_seed(cfg.seed, seed_tags::kData));
    out.splits = make_blobs(spec);
  } else {
    const auto kind = d.kind == "cifar10" ? CifarKind::Cifar10 : CifarKind::Cifar100;
    const auto train = read_cifar_split(d.path, kind, Split::Train);
    const auto test = read_cifar_split(d.path, kind, Split::Test);
    const auto stats = channel_stats(train);
    const std::size_t ntr = d.limit ? std::min(d.limit, train.size()) : train.size();
    const std::size_t nte = d.test_limit ? std::min(d.test_limit, test.size()) : test.size();
    out.splits.train = cifar_dataset(std::span(train).first(ntr), kind, Split::Train, stats, d.kind + ":" + d.path + ":train");
    out.splits.test = cifar_dataset(std::span(test).first(nte), kind, Split::Test, stats, d.kind + ":" + d.path + ":test");
  }
  auto& train = out.splits.train;
  out.transition = noise_matrix(cfg.noise, train.classes, &out.noise_warning);
  const auto noise_seed = cfg.noise.seed.value_or(derive_seed(cfg.seed, seed_tags::kNoise));
  auto corruption = corrupt_labels(*train.true_labels, out.transition, noise_seed);
  train.observed_labels = std::move(corruption.observed);
  out.records = std::move(corruption.records);
  train.provenance += "+noise(" + cfg.noise.type + "," + std::to_string(cfg.noise.epsilon) + ")";
  return out;
}

/// Mean over features of the per-feature standard deviation.
inline double mean_feature_std(const Tensor& inputs) {
  const std::size_t n = inputs.rows(), d = inputs.row_size();
  if (n < 2) return 0.0;
  double total = 0.0;
  for (std::size_t j = 0; j < d; ++j) {
    double s = 0.0, sq = 0.0;
    for (std::size_t t = 0; t < n; ++t) {
      const double v = inputs.at(t, j);
      s += v;
      sq += v * v;
    }
    const double mean = s / static_cast<double>(n);
    total += std::sqrt(std::max(0.0, sq / static_cast<double>(n) - mean * mean));
  }
  return total / static_cast<double>(d);
}

inline AugmentPolicy make_policy(const AugmentConfig& cfg, const LabeledDataset& train) {
  if (cfg.kind == "identity") return IdentityAugment{};
  if (cfg.kind == "image") return ImageStandard{cfg.pad, cfg.flip_prob};
  const double radius = cfg.radius.value_or(0.1 * mean_feature_std(train.inputs));
  return VectorJitter{radius, cfg.distribution};
}

struct RunOptions {
  std::optional<std::filesystem::path> output_dir;  // overrides config.output_dir
  bool write_files = true;
  std::function<void(const EpochRow&)> on_epoch;
};

struct ExperimentResult {
  RunMetrics metrics;
  std::vector<double> final_test_acc;  // per network
  std::vector<Learner> learners;
  std::optional<TransitionMatrix> used_T;  // F-correction only
  TransitionMatrix noise_T;
  std::filesystem::path output_dir;
  std::vector<std::filesystem::path> checkpoints;

  /// Reported accuracy; network 1 for two-network strategies.
  double test_acc() const { return final_test_acc.empty() ? 0.0 : final_test_acc[0]; }
};

/// Runs one configured experiment end to end. Files written to the output
/// directory: metrics.csv (deterministic), timing.csv (wall clock),
/// transition.txt, corruption.csv, used_T.txt (F-correction), net<k>.ckpt.
inline ExperimentResult run_experiment(const ExperimentConfig& cfg, const RunOptions& options = {}) {
  namespace fs = std::filesystem;
  ExperimentResult result;
  result.output_dir = options.output_dir.value_or(fs::path(cfg.output_dir));
  if (options.write_files) fs::create_directories(result.output_dir);

  PreparedData data = prepare_data(cfg);
  const auto& train = data.splits.train;
  const auto& test = data.splits.test;
  result.noise_T = data.transition;
  if (options.write_files) {
    save_transition((result.output_dir / "transition.txt").string(), data.transition);
    std::ofstream rec(result.output_dir / "corruption.csv");
    write_corruption_csv(rec, data.records);
  }

  const AugmentPolicy policy = make_policy(cfg.augment, train);
  const auto layers = build_layers(cfg.network, train.sample_shape(), train.classes);
  std::vector<std::uint64_t> init_seeds{derive_seed(cfg.seed, seed_tags::kInitNet1)};
  if (uses_two_networks(cfg.strategy.kind)) init_seeds.push_back(derive_seed(cfg.seed, seed_tags::kInitNet2));
  StrategyState state =
      make_strategy_state(cfg.strategy, layers, init_seeds, cfg.optimizer.schedule, cfg.optimizer.weight_decay);

  if (cfg.strategy.kind == StrategyKind::FCorrection) {
    if (cfg.strategy.t_source == TSource::Oracle) {
      state.estimated_T = data.transition;
    } else {
      warm_up_and_estimate_T(state, layers, train, policy, cfg.optimizer.batch_size,
                             derive_seed(cfg.seed, seed_tags::kWarmup));
    }
    result.used_T = state.estimated_T;
    if (options.write_files) save_transition((result.output_dir / "used_T.txt").string(), *state.estimated_T);
  }

  result.metrics.networks = state.learners.size();
  std::optional<MetricsWriter> writer;
  std::optional<std::ofstream> timing;
  if (options.write_files) {
    writer.emplace(result.output_dir / "metrics.csv", state.learners.size());
    timing.emplace(result.output_dir / "timing.csv", std::ios::trunc);
    *timing << "epoch,seconds\n" << std::flush;
  }

  const auto seeds = EpochSeeds::from(derive_seed(cfg.seed, seed_tags::kEpochs));
  result.final_test_acc.assign(state.learners.size(), 0.0);
  for (std::size_t k = 0; k < state.learners.size(); ++k) {
    result.final_test_acc[k] = accuracy(state.learners[k].net, test.inputs, test.observed_labels);
  }
  try {
    for (int e = 0; e < cfg.epochs; ++e) {
      const auto start = std::chrono::steady_clock::now();
      const EpochMetrics em = run_epoch(state, train, policy, cfg.optimizer.batch_size, seeds);
      EpochRow row;
      row.epoch = em.epoch + 1;
      row.learning_rate = em.learning_rate;
      row.keep_rate = em.keep_rate;
      const bool evaluate = (e + 1) % cfg.eval_every == 0 || e + 1 == cfg.epochs;
      for (std::size_t k = 0; k < em.nets.size(); ++k) {
        NetRow n{em.nets[k].supervised, em.nets[k].psdr, em.nets[k].combined, em.nets[k].train_acc_observed,
                 em.nets[k].train_acc_true, std::nullopt};
        if (evaluate) {
          n.test_acc = accuracy(state.learners[k].net, test.inputs, test.observed_labels);
          result.final_test_acc[k] = *n.test_acc;
        }
        row.nets.push_back(n);
      }
      row.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      if (writer) writer->append(row);
      if (timing) *timing << row.epoch << ',' << row.seconds << '\n' << std::flush;
      result.metrics.rows.push_back(row);
      if (options.on_epoch) options.on_epoch(row);
    }
  } catch (const std::exception& ex) {
    if (writer) writer->append_error(ex.what());
    throw;
  }

  if (options.write_files) {
    for (std::size_t k = 0; k < state.learners.size(); ++k) {
      const auto path = result.output_dir / ("net" + std::to_string(k + 1) + ".ckpt");
      save_checkpoint(path, state.learners[k].net, state.learners[k].optimizer);
      result.checkpoints.push_back(path);
    }
  }
  result.learners = std::move(state.learners);
  return result;
}

struct SuiteRow {
  std::string config;
  std::size_t requested = 0;
  std::size_t completed = 0;
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation; 0 for fewer than two runs
  std::vector<double> accuracies;
  std::vector<std::string> failures;
};

struct SuiteSummary {
  std::vector<SuiteRow> rows;
};

inline std::pair<double, double> mean_and_sample_std(const std::vector<double>& v) {
  if (v.empty()) return {0.0, 0.0};
  double s = 0.0;
  for (double x : v) s += x;
  const double mean = s / static_cast<double>(v.size());
  if (v.size() < 2) return {mean, 0.0};
  double sq = 0.0;
  for (double x : v) sq += (x - mean) * (x - mean);
  return {mean, std::sqrt(sq / static_cast<double>(v.size() - 1))};
}

inline void write_suite_summary(const std::filesystem::path& path, const SuiteSummary& summary) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot write " + path.string());
  os << "config,runs_requested,runs_completed,complete,mean_test_acc,std_test_acc\n";
  for (const auto& r : summary.rows) {
    os << r.config << ',' << r.requested << ',' << r.completed << ',' << (r.completed == r.requested ? 1 : 0) << ','
       << detail::fmt_metric(r.mean) << ',' << detail::fmt_metric(r.std) << '\n';
  }
}

/// Runs every config `repeats` times. Run r uses seeds[r] when given, else
/// config.seed + r, and writes into <root>/<config name>/seed_<seed>.
inline SuiteSummary run_suite(const std::vector<ExperimentConfig>& configs, std::size_t repeats,
                              const std::vector<std::uint64_t>& seeds, const std::filesystem::path& root) {
  if (repeats < 1) throw ParameterError("repeats must be at least 1");
  if (!seeds.empty() && seeds.size() != repeats) throw ParameterError("need one seed per repeat");
  SuiteSummary summary;
  for (const auto& base : configs) {
    SuiteRow row;
    row.config = base.name;
    row.requested = repeats;
    for (std::size_t r = 0; r < repeats; ++r) {
      ExperimentConfig cfg = base;
      cfg.seed = seeds.empty() ? base.seed + r : seeds[r];
      RunOptions opt;
      opt.output_dir = root / base.name / ("seed_" + std::to_string(cfg.seed));
      try {
        row.accuracies.push_back(run_experiment(cfg, opt).test_acc());
        ++row.completed;
      } catch (const std::exception& ex) {
        row.failures.push_back(ex.what());
      }
    }
    std::tie(row.mean, row.std) = mean_and_sample_std(row.accuracies);
    summary.rows.push_back(std::move(row));
  }
  std::filesystem::create_directories(root);
  write_suite_summary(root / "summary.csv", summary);
  return summary;
}

}  // namespace noisylab
