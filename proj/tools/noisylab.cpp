#include <glob.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "noisylab/noisylab.hpp"

namespace fs = std::filesystem;
using namespace noisylab;

namespace {

int report_error(std::string_view kind, const std::string& message) {
  nlohmann::json line{{"error", {{"kind", kind}, {"message", message}}}};
  std::cerr << line.dump() << '\n';
  return 1;
}

std::vector<std::string> expand_glob(const std::string& pattern) {
  glob_t g{};
  const int rc = ::glob(pattern.c_str(), 0, nullptr, &g);
  std::vector<std::string> out;
  if (rc == 0) {
    for (std::size_t i = 0; i < g.gl_pathc; ++i) out.emplace_back(g.gl_pathv[i]);
  }
  ::globfree(&g);
  if (rc == GLOB_NOMATCH || out.empty()) throw IoError("no config files match '" + pattern + "'");
  if (rc != 0) throw IoError("cannot expand '" + pattern + "'");
  return out;
}

int cmd_run(const std::string& path, const std::optional<std::string>& out, const std::optional<std::uint64_t>& seed,
            const std::optional<int>& epochs) {
  ExperimentConfig cfg = load_config(path);
  if (seed) cfg.seed = *seed;
  if (epochs) cfg.epochs = *epochs;
  RunOptions opt;
  if (out) opt.output_dir = *out;
  opt.on_epoch = [&](const EpochRow& row) {
    std::fprintf(stderr, "epoch %d/%d lr %.3g loss %.5f", row.epoch, cfg.epochs, row.learning_rate,
                 row.nets[0].combined_loss);
    if (row.nets[0].test_acc) std::fprintf(stderr, " test %.4f", *row.nets[0].test_acc);
    std::fprintf(stderr, " (%.2fs)\n", row.seconds);
  };
  const auto result = run_experiment(cfg, opt);
  std::cout << "final_test_acc " << result.test_acc() << "\noutput " << result.output_dir.string() << '\n';
  return 0;
}

int cmd_suite(const std::string& pattern, std::size_t repeats, const std::string& out) {
  std::vector<ExperimentConfig> configs;
  for (const auto& p : expand_glob(pattern)) {
    auto c = load_config(p);
    if (c.name == ExperimentConfig{}.name) c.name = fs::path(p).stem().string();
    configs.push_back(std::move(c));
  }
  const auto summary = run_suite(configs, repeats, {}, out);
  for (const auto& r : summary.rows) {
    std::printf("%-32s %zu/%zu  %.2f +- %.2f\n", r.config.c_str(), r.completed, r.requested, 100.0 * r.mean,
                100.0 * r.std);
    for (const auto& f : r.failures) std::fprintf(stderr, "  failed: %s\n", f.c_str());
  }
  std::cout << "summary " << (fs::path(out) / "summary.csv").string() << '\n';
  bool complete = true;
  for (const auto& r : summary.rows) complete = complete && r.completed == r.requested;
  return complete ? 0 : report_error("incomplete", "some suite runs failed");
}

int cmd_curves(const std::string& metrics_path, const std::optional<std::string>& out) {
  const fs::path src(metrics_path);
  const auto metrics = read_metrics_csv(src);
  const fs::path dir = src.has_parent_path() ? src.parent_path() : fs::current_path();
  const fs::path dest = out ? fs::path(*out) : dir / "curves.csv";
  emit_curves(metrics, dest, fs::absolute(dir).filename().string());
  std::cout << dest.string() << '\n';
  return 0;
}

int cmd_gradcheck() {
  bool ok = true;
  for (const auto& c : run_gradcheck_suite(1e-4)) {
    std::printf("%-40s max_rel_error %.3e  params %zu  %s\n", c.name.c_str(), c.report.max_rel_error,
                c.report.checked, c.report.passed() ? "ok" : "FAIL");
    ok = ok && c.report.passed();
  }
  return ok ? 0 : report_error("numeric", "gradient check exceeded tolerance 1e-4");
}

int cmd_make_config(const std::string& preset, const std::optional<std::string>& strategy,
                    const std::optional<bool>& psdr, const std::optional<std::string>& out) {
  ExperimentConfig c = preset_config(preset);
  if (strategy) c.strategy.kind = detail::parse_strategy_kind(*strategy);
  if (psdr) c.strategy.psdr_enabled = *psdr;
  if (strategy || psdr) {
    c.name += "-" + to_string(c.strategy.kind) + (c.strategy.psdr_enabled ? "-psdr" : "");
    c.output_dir = "runs/" + c.name;
  }
  const std::string text = to_config_text(c);
  if (!out) {
    std::cout << text;
    return 0;
  }
  std::ofstream os(*out, std::ios::trunc);
  if (!os) throw IoError("cannot write " + *out);
  os << text;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"noisylab: training under noisy labels"};
  app.require_subcommand(1);

  std::string config_path;
  std::optional<std::string> run_out;
  std::optional<std::uint64_t> run_seed;
  std::optional<int> run_epochs;
  auto* run = app.add_subcommand("run", "Run one experiment from a config file");
  run->add_option("config", config_path, "Config file")->required();
  run->add_option("--out", run_out, "Output directory (overrides output_dir)");
  run->add_option("--seed", run_seed, "Master seed (overrides seed)");
  run->add_option("--epochs", run_epochs, "Epoch count (overrides epochs)");

  std::string pattern;
  std::size_t repeats = 5;
  std::string suite_out = "runs/suite";
  auto* suite = app.add_subcommand("suite", "Run every matching config several times and summarize");
  suite->add_option("configs", pattern, "Config glob, e.g. 'configs/blobs-*.toml'")->required();
  suite->add_option("--repeats", repeats, "Runs per config")->check(CLI::PositiveNumber);
  suite->add_option("--out", suite_out, "Suite output root");

  std::string metrics_path;
  std::optional<std::string> curves_out;
  auto* curves = app.add_subcommand("curves", "Write long-format curve data from a metrics.csv");
  curves->add_option("metrics", metrics_path, "metrics.csv")->required();
  curves->add_option("--out", curves_out, "Destination (default: curves.csv next to the metrics)");

  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference check of every layer and loss");

  std::string preset;
  std::optional<std::string> mk_strategy;
  std::optional<bool> mk_psdr;
  std::optional<std::string> mk_out;
  auto* make = app.add_subcommand("make-config", "Print a preset config");
  make->add_option("--preset", preset, "Preset name")->required()->check(CLI::IsMember(preset_names()));
  make->add_option("--strategy", mk_strategy, "normal | fcorrection | decoupling | coteaching");
  make->add_option("--psdr", mk_psdr, "Enable the PSDR term (true/false)");
  make->add_option("--out", mk_out, "Write to a file instead of stdout");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return report_error("usage", e.what());
  }

  try {
    if (*run) return cmd_run(config_path, run_out, run_seed, run_epochs);
    if (*suite) return cmd_suite(pattern, repeats, suite_out);
    if (*curves) return cmd_curves(metrics_path, curves_out);
    if (*gradcheck) return cmd_gradcheck();
    if (*make) return cmd_make_config(preset, mk_strategy, mk_psdr, mk_out);
  } catch (const Error& e) {
    return report_error(to_string(e.kind()), e.what());
  } catch (const nlohmann::json::exception& e) {
    return report_error("format", e.what());
  } catch (const std::exception& e) {
    return report_error("internal", e.what());
  }
  return 0;
}
