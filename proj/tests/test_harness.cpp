#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <thread>

#include "catch_amalgamated.hpp"
#include "noisylab/noisylab.hpp"

using namespace noisylab;
using Catch::Approx;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag) {
    path = fs::temp_directory_path() / ("noisylab-" + tag + "-" + std::to_string(::getpid()));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

ExperimentConfig small_config(const std::string& name) {
  ExperimentConfig c;
  c.name = name;
  c.seed = 3;
  c.epochs = 4;
  c.dataset.blobs.n = 200;
  c.dataset.blobs.n_test = 200;
  c.network.hidden = {"dense:16", "relu"};
  c.optimizer.batch_size = 32;
  c.optimizer.schedule = LRSchedule::constant(1e-2);
  return c;
}

CifarRecord random_record(Rng& rng, CifarKind kind) {
  std::uniform_int_distribution<int> byte(0, 255);
  CifarRecord r;
  r.label = static_cast<std::uint8_t>(byte(rng) % (kind == CifarKind::Cifar10 ? 10 : 100));
  r.coarse_label = kind == CifarKind::Cifar100 ? static_cast<std::uint8_t>(byte(rng) % 20) : 0;
  for (auto& p : r.pixels) p = static_cast<std::uint8_t>(byte(rng));
  return r;
}

void write_bytes(const fs::path& p, const std::vector<std::uint8_t>& bytes) {
  std::ofstream os(p, std::ios::binary);
  os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace

TEST_CASE("blob datasets", "[harness][blobs]") {
  BlobSpec spec;
  spec.seed = 4;
  const auto a = make_blobs(spec), b = make_blobs(spec);
  CHECK(a.train.inputs == b.train.inputs);
  CHECK(a.test.inputs == b.test.inputs);
  CHECK_FALSE(a.train.inputs == a.test.inputs);
  CHECK(a.train.size() == 2000);
  std::vector<std::size_t> counts(4, 0);
  for (int y : a.train.observed_labels) ++counts[static_cast<std::size_t>(y)];
  for (auto n : counts) CHECK(n == 500);

  const auto centers = blob_centers(4, 2, 3.91);
  for (std::size_t k = 0; k < 4; ++k) {
    const auto& p = centers[k];
    const auto& q = centers[(k + 1) % 4];
    CHECK(std::hypot(p[0] - q[0], p[1] - q[1]) == Approx(3.91).epsilon(1e-12));
  }

  BlobSpec bad = spec;
  bad.classes = 1;
  CHECK_THROWS_AS(make_blobs(bad), ParameterError);
  bad = spec;
  bad.n = 2;
  CHECK_THROWS_AS(make_blobs(bad), ParameterError);
}

TEST_CASE("zero-spread blobs are perfectly separable", "[harness][blobs]") {
  auto c = small_config("zero-std");
  c.dataset.blobs.cluster_std = 0.0;
  c.noise.type = "none";
  c.epochs = 30;
  RunOptions opt;
  opt.write_files = false;
  CHECK(run_experiment(c, opt).test_acc() == 1.0);
}

TEST_CASE("default blob geometry has Bayes accuracy near 0.95", "[harness][blobs][statistics]") {
  // Equal priors and a shared isotropic covariance: the Bayes rule is the nearest center.
  BlobSpec spec;
  spec.n = 100000;
  spec.n_test = 4;
  spec.seed = 12;
  const auto ds = make_blobs(spec).train;
  const auto centers = blob_centers(spec.classes, spec.dims, spec.separation);
  std::size_t ok = 0;
  for (std::size_t t = 0; t < ds.size(); ++t) {
    std::size_t best = 0;
    double best_d = 1e300;
    for (std::size_t k = 0; k < centers.size(); ++k) {
      const double d = std::hypot(ds.inputs.at(t, 0) - centers[k][0], ds.inputs.at(t, 1) - centers[k][1]);
      if (d < best_d) {
        best_d = d;
        best = k;
      }
    }
    ok += static_cast<int>(best) == (*ds.true_labels)[t] ? 1 : 0;
  }
  CHECK(static_cast<double>(ok) / static_cast<double>(ds.size()) == Approx(0.95).margin(0.005));
}

TEST_CASE("linear probe reaches 0.85 on clean default blobs", "[harness][blobs]") {
  ExperimentConfig c;
  c.seed = 1;
  c.epochs = 20;
  c.noise.type = "none";
  c.augment.kind = "identity";
  c.network.hidden = {};
  c.optimizer.schedule = LRSchedule::constant(1e-2);
  RunOptions opt;
  opt.write_files = false;
  CHECK(run_experiment(c, opt).test_acc() >= 0.85);
}

TEST_CASE("clean labels reach the clean baseline", "[harness][experiment]") {
  auto c = small_config("clean");
  c.epochs = 40;
  c.noise.type = "none";
  RunOptions opt;
  opt.write_files = false;
  const double noisy_free = run_experiment(c, opt).test_acc();
  c.noise.type = "symmetric";
  c.noise.epsilon = 0.0;
  CHECK(run_experiment(c, opt).test_acc() >= 0.9 * noisy_free);
}

TEST_CASE("test split is never corrupted", "[harness][experiment]") {
  auto c = small_config("clean-test");
  c.noise.epsilon = 0.6;
  const auto prepared = prepare_data(c);
  BlobSpec spec = c.dataset.blobs;
  spec.seed = derive_seed(c.seed, seed_tags::kData);
  const auto raw = make_blobs(spec);
  CHECK(prepared.splits.test.observed_labels == raw.test.observed_labels);
  CHECK(prepared.splits.test.observed_labels == *prepared.splits.test.true_labels);
  CHECK(prepared.splits.train.observed_labels != raw.train.observed_labels);
  CHECK(*prepared.splits.train.true_labels == raw.train.observed_labels);
}

TEST_CASE("zero epochs leaves the initialization checkpoint", "[harness][experiment]") {
  TempDir dir("zero-epochs");
  auto c = small_config("zero");
  c.epochs = 0;
  RunOptions opt;
  opt.output_dir = dir.path;
  const auto r = run_experiment(c, opt);
  CHECK(r.metrics.rows.empty());
  const auto m = read_metrics_csv(dir.path / "metrics.csv");
  CHECK(m.rows.empty());
  const auto ck = load_checkpoint(dir.path / "net1.ckpt");
  const auto layers = build_layers(c.network, {2}, 4);
  const Network init(layers, derive_seed(c.seed, seed_tags::kInitNet1));
  CHECK(ck.network.parameter_values() == init.parameter_values());
  CHECK(ck.optimizer.step_count == 0);
}

TEST_CASE("repeated runs write byte-identical metrics and checkpoints", "[harness][determinism]") {
  TempDir dir("determinism");
  for (auto kind : {StrategyKind::Normal, StrategyKind::Coteaching}) {
    auto c = small_config("det");
    c.strategy.kind = kind;
    c.strategy.psdr_enabled = true;
    RunOptions a, b;
    a.output_dir = dir.path / "a";
    b.output_dir = dir.path / "b";
    run_experiment(c, a);
    run_experiment(c, b);
    CHECK(slurp(dir.path / "a" / "metrics.csv") == slurp(dir.path / "b" / "metrics.csv"));
    CHECK(slurp(dir.path / "a" / "net1.ckpt") == slurp(dir.path / "b" / "net1.ckpt"));
    CHECK(slurp(dir.path / "a" / "corruption.csv") == slurp(dir.path / "b" / "corruption.csv"));
  }
}

TEST_CASE("metrics file layout", "[harness][metrics]") {
  TempDir dir("layout");
  auto c = small_config("layout");
  c.strategy.kind = StrategyKind::Coteaching;
  c.eval_every = 3;
  c.epochs = 5;
  RunOptions opt;
  opt.output_dir = dir.path;
  const auto r = run_experiment(c, opt);
  std::ifstream is(dir.path / "metrics.csv");
  std::string header;
  std::getline(is, header);
  CHECK(header ==
        "epoch,lr,keep_rate,supervised_loss_net1,psdr_loss_net1,combined_loss_net1,train_acc_observed_net1,"
        "train_acc_true_net1,test_acc_net1,supervised_loss_net2,psdr_loss_net2,combined_loss_net2,"
        "train_acc_observed_net2,train_acc_true_net2,test_acc_net2");
  const auto m = read_metrics_csv(dir.path / "metrics.csv");
  REQUIRE(m.rows.size() == 5);
  for (std::size_t e = 0; e < 5; ++e) {
    CHECK(m.rows[e].epoch == static_cast<int>(e + 1));
    CHECK(m.rows[e].keep_rate == keep_rate({10, 0.5}, static_cast<int>(e)));
    CHECK(m.rows[e].nets[0].test_acc.has_value() == (e == 2 || e == 4));
    CHECK(m.rows[e].nets[0] == r.metrics.rows[e].nets[0]);
  }
  CHECK(fs::exists(dir.path / "timing.csv"));
  CHECK(fs::exists(dir.path / "net2.ckpt"));
  CHECK(load_transition((dir.path / "transition.txt").string()) == symmetric_matrix(4, 0.5));
}

TEST_CASE("a killed run leaves a parseable metrics prefix", "[harness][durability]") {
  TempDir dir("kill");
  auto c = small_config("kill");
  c.epochs = 100000;
  c.dataset.blobs.n = 400;
  const fs::path out = dir.path / "run";
  const pid_t pid = ::fork();
  REQUIRE(pid >= 0);
  if (pid == 0) {
    RunOptions opt;
    opt.output_dir = out;
    try {
      run_experiment(c, opt);
    } catch (...) {
    }
    ::_exit(0);
  }
  const auto deadline = std::chrono::steady_clock::now() + std::chrono::seconds(60);
  std::size_t lines = 0;
  while (std::chrono::steady_clock::now() < deadline && lines < 4) {
    std::this_thread::sleep_for(std::chrono::milliseconds(20));
    const auto text = fs::exists(out / "metrics.csv") ? slurp(out / "metrics.csv") : std::string();
    lines = static_cast<std::size_t>(std::count(text.begin(), text.end(), '\n'));
  }
  ::kill(pid, SIGKILL);
  int status = 0;
  ::waitpid(pid, &status, 0);
  CHECK(WIFSIGNALED(status));
  REQUIRE(lines >= 4);
  const auto m = read_metrics_csv(out / "metrics.csv");
  REQUIRE(m.rows.size() >= 3);
  for (std::size_t e = 0; e < m.rows.size(); ++e) CHECK(m.rows[e].epoch == static_cast<int>(e + 1));
}

TEST_CASE("a failing run appends an error record after its rows", "[harness][durability]") {
  TempDir dir("error");
  auto c = small_config("error");
  c.epochs = 3;
  RunOptions opt;
  opt.output_dir = dir.path;
  opt.on_epoch = [](const EpochRow& row) {
    if (row.epoch == 2) throw NumericError("injected failure");
  };
  CHECK_THROWS_AS(run_experiment(c, opt), NumericError);
  const auto text = slurp(dir.path / "metrics.csv");
  CHECK(text.find("#error,injected failure") != std::string::npos);
  CHECK(read_metrics_csv(dir.path / "metrics.csv").rows.size() == 2);
}

TEST_CASE("suite summary matches a recomputation from per-run files", "[harness][suite]") {
  TempDir dir("suite");
  auto a = small_config("alpha");
  auto b = small_config("beta");
  b.strategy.psdr_enabled = true;
  const auto summary = run_suite({a, b}, 3, {}, dir.path);
  REQUIRE(summary.rows.size() == 2);
  for (const auto& row : summary.rows) {
    CHECK(row.completed == 3);
    std::vector<double> acc;
    for (std::uint64_t s = 3; s < 6; ++s) {
      const auto m = read_metrics_csv(dir.path / row.config / ("seed_" + std::to_string(s)) / "metrics.csv");
      acc.push_back(*m.rows.back().nets[0].test_acc);
    }
    double mean = 0.0;
    for (double v : acc) mean += v / 3.0;
    double var = 0.0;
    for (double v : acc) var += (v - mean) * (v - mean) / 2.0;
    CHECK(row.mean == Approx(mean).epsilon(1e-12));
    CHECK(row.std == Approx(std::sqrt(var)).margin(1e-12));
  }
  std::ifstream is(dir.path / "summary.csv");
  std::string header;
  std::getline(is, header);
  CHECK(header == "config,runs_requested,runs_completed,complete,mean_test_acc,std_test_acc");
}

TEST_CASE("suite statistics edge cases", "[harness][suite]") {
  TempDir dir("suite-edge");
  auto c = small_config("single");
  c.epochs = 2;
  const auto one = run_suite({c}, 1, {}, dir.path / "one");
  CHECK(one.rows[0].std == 0.0);
  CHECK(one.rows[0].mean == one.rows[0].accuracies[0]);
  const auto same = run_suite({c}, 3, {7, 7, 7}, dir.path / "same");
  CHECK(same.rows[0].std == 0.0);
  CHECK_THROWS_AS(run_suite({c}, 0, {}, dir.path), ParameterError);
  auto broken = c;
  broken.name = "broken";
  broken.dataset.kind = "cifar10";
  broken.dataset.path = (dir.path / "nowhere").string();
  const auto partial = run_suite({broken}, 2, {}, dir.path / "broken");
  CHECK(partial.rows[0].completed == 0);
  CHECK(partial.rows[0].failures.size() == 2);
}

TEST_CASE("curves are emitted in long format", "[harness][curves]") {
  TempDir dir("curves");
  auto c = small_config("curves");
  c.strategy.kind = StrategyKind::Decoupling;
  RunOptions opt;
  opt.output_dir = dir.path / "run7";
  const auto r = run_experiment(c, opt);
  const auto m = read_metrics_csv(dir.path / "run7" / "metrics.csv");
  emit_curves(m, dir.path / "curves.csv", "run7");
  std::ifstream is(dir.path / "curves.csv");
  std::string line;
  std::getline(is, line);
  CHECK(line == "run_id,epoch,series,value");
  std::map<std::string, std::vector<std::pair<int, double>>> series;
  while (std::getline(is, line)) {
    std::stringstream ss(line);
    std::string id, epoch, name, value;
    std::getline(ss, id, ',');
    std::getline(ss, epoch, ',');
    std::getline(ss, name, ',');
    std::getline(ss, value, ',');
    CHECK(id == "run7");
    series[name].emplace_back(std::stoi(epoch), std::stod(value));
  }
  REQUIRE(series.count("test_acc_net1"));
  REQUIRE(series.count("test_acc_net2"));
  CHECK(series["test_acc_net1"].size() == static_cast<std::size_t>(c.epochs));
  for (std::size_t e = 0; e < series["test_acc_net2"].size(); ++e) {
    CHECK(series["test_acc_net2"][e].second == *r.metrics.rows[e].nets[1].test_acc);
    CHECK(series["combined_loss_net1"][e].second == r.metrics.rows[e].nets[0].combined_loss);
  }
  CHECK_THROWS_AS(emit_curves(RunMetrics{}, dir.path / "x.csv", "x"), DataError);
}

TEST_CASE("config text round trip", "[harness][config]") {
  for (const auto& name : preset_names()) {
    auto c = preset_config(name);
    c.strategy.kind = StrategyKind::Coteaching;
    c.strategy.psdr_enabled = true;
    c.noise.mapping = name.find("blobs") == 0 ? std::vector<std::size_t>{1, 2, 3, 0} : std::vector<std::size_t>{};
    c.augment.radius = 0.25;
    const auto text = to_config_text(c);
    const auto back = parse_config(text);
    CHECK(to_config_text(back) == text);
    CHECK(back.strategy.kind == StrategyKind::Coteaching);
    CHECK(back.network.hidden == c.network.hidden);
    CHECK(back.optimizer.schedule.milestones == c.optimizer.schedule.milestones);
  }
}

TEST_CASE("config parsing", "[harness][config]") {
  const auto c = parse_config(R"(
# comment
name = "demo"   # trailing comment
seed = 9
epochs = 12
[dataset]
kind = "blobs"
n = 300
[augment]
kind = "image"
[strategy]
kind = "co-teaching"
psdr = true
tau = 0.2
E_k = 5
[optimizer]
milestones = [2, 4]
factors = [0.5, 0.5]
)");
  CHECK(c.name == "demo");
  CHECK(c.seed == 9);
  CHECK(c.epochs == 12);
  CHECK(c.dataset.blobs.n == 300);
  CHECK(c.augment.kind == "image");
  CHECK(c.strategy.kind == StrategyKind::Coteaching);
  CHECK(c.strategy.psdr_enabled);
  CHECK(c.strategy.tau == 0.2);
  CHECK(c.optimizer.schedule.at(4) == Approx(2.5e-4));
  const auto inline_table = parse_config("strategy = {kind = \"decoupling\", alpha = 0.5}\n");
  CHECK(inline_table.strategy.kind == StrategyKind::Decoupling);
  CHECK(inline_table.strategy.alpha == 0.5);

  CHECK_THROWS_AS(parse_config("bogus = 1\n"), ParameterError);
  CHECK_THROWS_AS(parse_config("[strategy]\ntau = 1.5\n"), ParameterError);
  CHECK_THROWS_AS(parse_config("[strategy]\nkind = \"mentor\"\n"), ParameterError);
  CHECK_THROWS_AS(parse_config("epochs = \n"), FormatError);
  CHECK_THROWS_AS(parse_config("[optimizer]\nmilestones = [1]\n"), ParameterError);
}

TEST_CASE("network layer strings", "[harness][config]") {
  const auto mlp = build_layers(NetworkConfig{}, {2}, 4);
  REQUIRE(mlp.size() == 6);
  CHECK(mlp[0] == LayerSpec::dense(2, 64));
  CHECK(mlp[2] == LayerSpec::dense(64, 64));
  CHECK(mlp[4] == LayerSpec::dense(64, 4));
  CHECK(mlp[5] == LayerSpec::softmax());
  const auto cnn = build_layers(NetworkConfig{{"conv:8:3:2:1", "relu"}}, {3, 32, 32}, 10);
  CHECK(cnn[0] == LayerSpec::conv2d(3, 8, 3, 2, 1));
  CHECK(cnn[2] == LayerSpec::flatten());
  CHECK(cnn[3] == LayerSpec::dense(8 * 16 * 16, 10));
  CHECK_THROWS_AS(build_layers(NetworkConfig{{"dense:4"}}, {3, 4, 4}, 2), ParameterError);
  CHECK_THROWS_AS(build_layers(NetworkConfig{{"pool"}}, {2}, 2), ParameterError);
}

TEST_CASE("cifar record round trip", "[harness][cifar]") {
  Rng rng(5);
  for (auto kind : {CifarKind::Cifar10, CifarKind::Cifar100}) {
    std::vector<std::uint8_t> bytes;
    for (int k = 0; k < 3; ++k) {
      const auto rec = serialize_cifar_record(random_record(rng, kind), kind);
      bytes.insert(bytes.end(), rec.begin(), rec.end());
    }
    CHECK(bytes.size() == 3 * cifar_record_size(kind));
    const auto parsed = parse_cifar_records(bytes, kind);
    REQUIRE(parsed.size() == 3);
    const auto first = serialize_cifar_record(parsed[0], kind);
    CHECK(std::equal(first.begin(), first.end(), bytes.begin()));
    std::vector<std::uint8_t> again;
    for (const auto& r : parsed) {
      const auto rec = serialize_cifar_record(r, kind);
      again.insert(again.end(), rec.begin(), rec.end());
    }
    CHECK(again == bytes);
  }
}

TEST_CASE("cifar truncation reports exact byte accounting", "[harness][cifar]") {
  Rng rng(6);
  std::vector<std::uint8_t> bytes;
  for (int k = 0; k < 2; ++k) {
    const auto rec = serialize_cifar_record(random_record(rng, CifarKind::Cifar10), CifarKind::Cifar10);
    bytes.insert(bytes.end(), rec.begin(), rec.end());
  }
  bytes.resize(bytes.size() - 100);
  try {
    parse_cifar_records(bytes, CifarKind::Cifar10, "data_batch_1.bin");
    FAIL("expected a format error");
  } catch (const FormatError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("got 6046 bytes") != std::string::npos);
    CHECK(msg.find("expected 6146") != std::string::npos);
    CHECK(msg.find("2973 trailing bytes") != std::string::npos);
  }
}

TEST_CASE("cifar directory loading", "[harness][cifar]") {
  TempDir dir("cifar");
  Rng rng(7);
  std::vector<CifarRecord> train;
  for (const auto& name : cifar_files(CifarKind::Cifar10, Split::Train)) {
    std::vector<std::uint8_t> bytes;
    for (int k = 0; k < 4; ++k) {
      train.push_back(random_record(rng, CifarKind::Cifar10));
      const auto rec = serialize_cifar_record(train.back(), CifarKind::Cifar10);
      bytes.insert(bytes.end(), rec.begin(), rec.end());
    }
    write_bytes(dir.path / name, bytes);
  }
  CHECK_THROWS_AS(load_cifar_binary(dir.path, Split::Test), IoError);
  std::vector<std::uint8_t> test_bytes;
  for (int k = 0; k < 3; ++k) {
    const auto rec = serialize_cifar_record(random_record(rng, CifarKind::Cifar10), CifarKind::Cifar10);
    test_bytes.insert(test_bytes.end(), rec.begin(), rec.end());
  }
  write_bytes(dir.path / "test_batch.bin", test_bytes);

  const auto tr = load_cifar_binary(dir.path, Split::Train);
  CHECK(tr.size() == 20);
  CHECK(tr.classes == 10);
  CHECK(tr.sample_shape() == Shape{3, 32, 32});
  CHECK(tr.observed_labels[5] == train[5].label);
  for (std::size_t c = 0; c < 3; ++c) {
    double s = 0.0, sq = 0.0;
    for (std::size_t t = 0; t < tr.size(); ++t)
      for (std::size_t i = 0; i < 1024; ++i) {
        const double v = tr.inputs.row(t)[c * 1024 + i];
        s += v;
        sq += v * v;
      }
    const double n = 20.0 * 1024.0;
    CHECK(s / n == Approx(0.0).margin(1e-9));
    CHECK(sq / n == Approx(1.0).epsilon(1e-9));
  }
  const auto stats = channel_stats(train);
  const auto te = load_cifar_binary(dir.path, Split::Test);
  CHECK(te.size() == 3);
  CHECK(te.inputs.row(0)[0] == Approx((test_bytes[1] / 255.0 - stats.mean[0]) / stats.std[0]).epsilon(1e-12));

  write_bytes(dir.path / "data_batch_3.bin", std::vector<std::uint8_t>(100, 0));
  CHECK_THROWS_AS(load_cifar_binary(dir.path, Split::Train), FormatError);
}

TEST_CASE("small cnn trains end to end on image-shaped data", "[harness][experiment]") {
  TempDir dir("cnn");
  Rng rng(8);
  auto write_split = [&](const std::string& name, int n) {
    std::vector<std::uint8_t> bytes;
    for (int k = 0; k < n; ++k) {
      const auto rec = serialize_cifar_record(random_record(rng, CifarKind::Cifar10), CifarKind::Cifar10);
      bytes.insert(bytes.end(), rec.begin(), rec.end());
    }
    write_bytes(dir.path / name, bytes);
  };
  for (const auto& name : cifar_files(CifarKind::Cifar10, Split::Train)) write_split(name, 2);
  write_split("test_batch.bin", 2);
  ExperimentConfig c;
  c.dataset.kind = "cifar10";
  c.dataset.path = dir.path.string();
  c.epochs = 1;
  c.augment.kind = "image";
  c.network.hidden = {"conv:2:3:4:1", "relu"};
  c.optimizer.batch_size = 4;
  RunOptions opt;
  opt.write_files = false;
  const auto r = run_experiment(c, opt);
  CHECK(r.metrics.rows.size() == 1);
  CHECK(std::isfinite(r.metrics.rows[0].nets[0].combined_loss));
}

TEST_CASE("presets", "[harness][config]") {
  for (const auto& name : preset_names()) CHECK(preset_config(name).name == name);
  CHECK(preset_config("blobs-asym40").noise.type == "asymmetric");
  CHECK(preset_config("cifar100-sym20").dataset.kind == "cifar100");
  CHECK_THROWS_AS(preset_config("mnist-sym50"), ParameterError);
}
