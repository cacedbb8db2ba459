#pragma once

#include <cctype>
#include <charconv>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "noisylab/augment.hpp"
#include "noisylab/dataset.hpp"
#include "noisylab/error.hpp"
#include "noisylab/network.hpp"
#include "noisylab/optim.hpp"
#include "noisylab/strategies.hpp"

namespace noisylab {

// ---------------------------------------------------------------------------
// Config text: flat `key = value` lines, `#` comments, optional `[section]`
// headers. Values are "strings", numbers, true/false, [arrays] and
// {inline = tables}. Parsed into a JSON object tree.

namespace detail {

class ConfigParser {
 public:
  ConfigParser(std::string_view text, std::string source) : text_(text), source_(std::move(source)) {}

  nlohmann::json parse() {
    nlohmann::json root = nlohmann::json::object();
    nlohmann::json* section = &root;
    while (pos_ < text_.size()) {
      skip_blank_and_comments();
      if (pos_ >= text_.size()) break;
      if (text_[pos_] == '[') {
        ++pos_;
        const std::string name = key();
        expect(']');
        section = &root[name];
        if (!section->is_object()) *section = nlohmann::json::object();
        end_of_line();
        continue;
      }
      const std::string k = key();
      skip_spaces();
      expect('=');
      skip_spaces();
      (*section)[k] = value();
      end_of_line();
    }
    return root;
  }

 private:
  [[noreturn]] void fail(const std::string& what) const {
    throw FormatError(source_ + ":" + std::to_string(line()) + ": " + what);
  }

  std::size_t line() const {
    return 1 + static_cast<std::size_t>(std::count(text_.begin(), text_.begin() + static_cast<std::ptrdiff_t>(pos_), '\n'));
  }

  void skip_spaces() {
    while (pos_ < text_.size() && (text_[pos_] == ' ' || text_[pos_] == '\t' || text_[pos_] == '\r')) ++pos_;
  }

  void skip_blank_and_comments() {
    while (pos_ < text_.size()) {
      const char ch = text_[pos_];
      if (ch == ' ' || ch == '\t' || ch == '\r' || ch == '\n') {
        ++pos_;
      } else if (ch == '#') {
        while (pos_ < text_.size() && text_[pos_] != '\n') ++pos_;
      } else {
        break;
      }
    }
  }

  // Inside arrays and inline tables newlines and comments are allowed.
  void skip_ws_multiline() { skip_blank_and_comments(); }

  void end_of_line() {
    skip_spaces();
    if (pos_ < text_.size() && text_[pos_] == '#') {
      while (pos_ < text_.size() && text_[pos_] != '\n') ++pos_;
    }
    if (pos_ < text_.size() && text_[pos_] != '\n') fail("unexpected trailing text");
  }

  void expect(char ch) {
    if (pos_ >= text_.size() || text_[pos_] != ch) fail(std::string("expected '") + ch + "'");
    ++pos_;
  }

  std::string key() {
    skip_spaces();
    const std::size_t start = pos_;
    while (pos_ < text_.size() && (std::isalnum(static_cast<unsigned char>(text_[pos_])) || text_[pos_] == '_' ||
                                   text_[pos_] == '-' || text_[pos_] == '.')) {
      ++pos_;
    }
    if (start == pos_) fail("expected a key");
    std::string k(text_.substr(start, pos_ - start));
    skip_spaces();
    return k;
  }

  nlohmann::json value() {
    if (pos_ >= text_.size()) fail("missing value");
    const char ch = text_[pos_];
    if (ch == '"') return string_value();
    if (ch == '[') {
      ++pos_;
      nlohmann::json arr = nlohmann::json::array();
      skip_ws_multiline();
      while (pos_ < text_.size() && text_[pos_] != ']') {
        arr.push_back(value());
        skip_ws_multiline();
        if (pos_ < text_.size() && text_[pos_] == ',') {
          ++pos_;
          skip_ws_multiline();
        }
      }
      expect(']');
      return arr;
    }
    if (ch == '{') {
      ++pos_;
      nlohmann::json obj = nlohmann::json::object();
      skip_ws_multiline();
      while (pos_ < text_.size() && text_[pos_] != '}') {
        const std::string k = key();
        expect('=');
        skip_spaces();
        obj[k] = value();
        skip_ws_multiline();
        if (pos_ < text_.size() && text_[pos_] == ',') {
          ++pos_;
          skip_ws_multiline();
        }
      }
      expect('}');
      return obj;
    }
    const std::size_t start = pos_;
    while (pos_ < text_.size() && !std::isspace(static_cast<unsigned char>(text_[pos_])) && text_[pos_] != ',' &&
           text_[pos_] != ']' && text_[pos_] != '}' && text_[pos_] != '#') {
      ++pos_;
    }
    const std::string tok(text_.substr(start, pos_ - start));
    if (tok == "true") return true;
    if (tok == "false") return false;
    if (tok.empty()) fail("missing value");
    const bool integral = tok.find_first_of(".eE") == std::string::npos || tok.rfind("0x", 0) == 0;
    try {
      std::size_t used = 0;
      if (integral) {
        const long long v = std::stoll(tok, &used, 0);
        if (used == tok.size()) return v;
      } else {
        const double v = std::stod(tok, &used);
        if (used == tok.size()) return v;
      }
    } catch (const std::exception&) {
    }
    // Bare words are accepted as strings.
    return tok;
  }

  nlohmann::json string_value() {
    expect('"');
    std::string out;
    while (pos_ < text_.size() && text_[pos_] != '"') {
      if (text_[pos_] == '\n') fail("unterminated string");
      if (text_[pos_] == '\\' && pos_ + 1 < text_.size()) {
        ++pos_;
        const char e = text_[pos_];
        out += e == 'n' ? '\n' : e == 't' ? '\t' : e;
      } else {
        out += text_[pos_];
      }
      ++pos_;
    }
    expect('"');
    return out;
  }

  std::string_view text_;
  std::string source_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline nlohmann::json parse_config_tree(std::string_view text, const std::string& source = "config") {
  return detail::ConfigParser(text, source).parse();
}

// ---------------------------------------------------------------------------

struct DatasetConfig {
  std::string kind = "blobs";  // blobs | cifar10 | cifar100
  BlobSpec blobs;
  std::string path;
  std::optional<std::uint64_t> seed;  // blobs; derived from the master seed when absent
  std::size_t limit = 0;              // use only the first `limit` CIFAR training records (0 = all)
  std::size_t test_limit = 0;
};

struct NoiseConfig {
  std::string type = "symmetric";  // none | symmetric | asymmetric
  double epsilon = 0.5;
  std::vector<std::size_t> mapping;  // asymmetric targets; empty = circular shift
  std::optional<std::uint64_t> seed;
};

struct AugmentConfig {
  std::string kind = "jitter";  // identity | image | jitter
  std::size_t pad = 4;
  double flip_prob = 0.5;
  std::optional<double> radius;  // jitter; absent = 0.1 x mean feature std of the training inputs
  JitterDistribution distribution = JitterDistribution::UniformBall;
};

struct NetworkConfig {
  /// Hidden layers; the output Dense(c) and Softmax are appended.
  /// Forms: "dense:<out>", "relu", "conv:<out_ch>:<kernel>[:<stride>[:<pad>]]", "flatten".
  std::vector<std::string> hidden{"dense:64", "relu", "dense:64", "relu"};
};

struct OptimizerConfig {
  LRSchedule schedule = LRSchedule::standard();
  double weight_decay = 1e-4;
  std::size_t batch_size = 128;
};

struct ExperimentConfig {
  std::string name = "experiment";
  std::uint64_t seed = 0;
  int epochs = 200;
  int eval_every = 1;
  std::string output_dir = "runs";
  DatasetConfig dataset;
  NoiseConfig noise;
  AugmentConfig augment;
  NetworkConfig network;
  OptimizerConfig optimizer;
  StrategyConfig strategy;
};

namespace detail {

template <class T>
T get_or(const nlohmann::json& obj, const char* key, T fallback) {
  if (!obj.is_object() || !obj.contains(key)) return fallback;
  try {
    return obj.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ParameterError(std::string("config key '") + key + "' has the wrong type");
  }
}

inline void reject_unknown(const nlohmann::json& obj, std::initializer_list<const char*> known, const std::string& where) {
  if (!obj.is_object()) throw ParameterError(where + " must be a table");
  for (const auto& [k, v] : obj.items()) {
    bool ok = false;
    for (const char* name : known) ok = ok || k == name;
    if (!ok) throw ParameterError("unknown key '" + k + "' in " + where);
  }
}

inline StrategyKind parse_strategy_kind(const std::string& s) {
  if (s == "normal") return StrategyKind::Normal;
  if (s == "fcorrection" || s == "f-correction") return StrategyKind::FCorrection;
  if (s == "decoupling") return StrategyKind::Decoupling;
  if (s == "coteaching" || s == "co-teaching") return StrategyKind::Coteaching;
  throw ParameterError("unknown strategy kind '" + s + "'");
}

}  // namespace detail

inline ExperimentConfig config_from_tree(const nlohmann::json& root) {
  using detail::get_or;
  detail::reject_unknown(root,
                         {"name", "seed", "epochs", "eval_every", "output_dir", "dataset", "noise", "augment", "network",
                          "optimizer", "strategy"},
                         "config");
  ExperimentConfig c;
  c.name = get_or<std::string>(root, "name", c.name);
  c.seed = get_or<std::uint64_t>(root, "seed", c.seed);
  c.epochs = get_or<int>(root, "epochs", c.epochs);
  c.eval_every = get_or<int>(root, "eval_every", c.eval_every);
  c.output_dir = get_or<std::string>(root, "output_dir", c.output_dir);

  if (root.contains("dataset")) {
    const auto& d = root["dataset"];
    detail::reject_unknown(d,
                           {"kind", "n", "n_test", "c", "dims", "cluster_std", "separation", "seed", "path", "limit",
                            "test_limit"},
                           "dataset");
    c.dataset.kind = get_or<std::string>(d, "kind", c.dataset.kind);
    c.dataset.blobs.n = get_or<std::size_t>(d, "n", c.dataset.blobs.n);
    c.dataset.blobs.n_test = get_or<std::size_t>(d, "n_test", c.dataset.blobs.n_test);
    c.dataset.blobs.classes = get_or<std::size_t>(d, "c", c.dataset.blobs.classes);
    c.dataset.blobs.dims = get_or<std::size_t>(d, "dims", c.dataset.blobs.dims);
    c.dataset.blobs.cluster_std = get_or<double>(d, "cluster_std", c.dataset.blobs.cluster_std);
    c.dataset.blobs.separation = get_or<double>(d, "separation", c.dataset.blobs.separation);
    if (d.contains("seed")) c.dataset.seed = d["seed"].get<std::uint64_t>();
    c.dataset.path = get_or<std::string>(d, "path", c.dataset.path);
    c.dataset.limit = get_or<std::size_t>(d, "limit", c.dataset.limit);
    c.dataset.test_limit = get_or<std::size_t>(d, "test_limit", c.dataset.test_limit);
    if (c.dataset.kind != "blobs" && c.dataset.kind != "cifar10" && c.dataset.kind != "cifar100") {
      throw ParameterError("unknown dataset kind '" + c.dataset.kind + "'");
    }
  }
  if (root.contains("noise")) {
    const auto& n = root["noise"];
    detail::reject_unknown(n, {"type", "epsilon", "mapping", "seed"}, "noise");
    c.noise.type = get_or<std::string>(n, "type", c.noise.type);
    c.noise.epsilon = get_or<double>(n, "epsilon", c.noise.epsilon);
    c.noise.mapping = get_or<std::vector<std::size_t>>(n, "mapping", {});
    if (n.contains("seed")) c.noise.seed = n["seed"].get<std::uint64_t>();
    if (c.noise.type != "none" && c.noise.type != "symmetric" && c.noise.type != "asymmetric") {
      throw ParameterError("unknown noise type '" + c.noise.type + "'");
    }
  }
  if (root.contains("augment")) {
    const auto& a = root["augment"];
    detail::reject_unknown(a, {"kind", "pad", "flip_prob", "radius", "distribution"}, "augment");
    c.augment.kind = get_or<std::string>(a, "kind", c.augment.kind);
    c.augment.pad = get_or<std::size_t>(a, "pad", c.augment.pad);
    c.augment.flip_prob = get_or<double>(a, "flip_prob", c.augment.flip_prob);
    if (a.contains("radius")) c.augment.radius = a["radius"].get<double>();
    const auto dist = get_or<std::string>(a, "distribution", "uniform-ball");
    if (dist == "uniform-ball") c.augment.distribution = JitterDistribution::UniformBall;
    else if (dist == "gaussian") c.augment.distribution = JitterDistribution::Gaussian;
    else throw ParameterError("unknown jitter distribution '" + dist + "'");
    if (c.augment.kind != "identity" && c.augment.kind != "image" && c.augment.kind != "jitter") {
      throw ParameterError("unknown augment kind '" + c.augment.kind + "'");
    }
  }
  if (root.contains("network")) {
    const auto& n = root["network"];
    detail::reject_unknown(n, {"layers"}, "network");
    c.network.hidden = get_or<std::vector<std::string>>(n, "layers", c.network.hidden);
  }
  if (root.contains("optimizer")) {
    const auto& o = root["optimizer"];
    detail::reject_unknown(o, {"lr", "milestones", "factors", "weight_decay", "batch_size"}, "optimizer");
    c.optimizer.schedule.initial_lr = get_or<double>(o, "lr", c.optimizer.schedule.initial_lr);
    if (o.contains("milestones") || o.contains("factors")) {
      const auto ms = get_or<std::vector<int>>(o, "milestones", {});
      const auto fs = get_or<std::vector<double>>(o, "factors", {});
      if (ms.size() != fs.size()) throw ParameterError("optimizer milestones and factors must have equal length");
      c.optimizer.schedule.milestones.clear();
      for (std::size_t i = 0; i < ms.size(); ++i) c.optimizer.schedule.milestones.emplace_back(ms[i], fs[i]);
    }
    c.optimizer.weight_decay = get_or<double>(o, "weight_decay", c.optimizer.weight_decay);
    c.optimizer.batch_size = get_or<std::size_t>(o, "batch_size", c.optimizer.batch_size);
  }
  if (root.contains("strategy")) {
    const auto& s = root["strategy"];
    detail::reject_unknown(s,
                           {"kind", "psdr", "alpha", "E_k", "tau", "t_source", "warmup_epochs", "percentile",
                            "correction_orientation", "normalization"},
                           "strategy");
    auto& st = c.strategy;
    st.kind = detail::parse_strategy_kind(get_or<std::string>(s, "kind", "normal"));
    st.psdr_enabled = get_or<bool>(s, "psdr", st.psdr_enabled);
    st.alpha = get_or<double>(s, "alpha", st.alpha);
    st.E_k = get_or<int>(s, "E_k", st.E_k);
    st.tau = get_or<double>(s, "tau", st.tau);
    const auto src = get_or<std::string>(s, "t_source", "oracle");
    if (src == "oracle") st.t_source = TSource::Oracle;
    else if (src == "estimated") st.t_source = TSource::Estimated;
    else throw ParameterError("unknown t_source '" + src + "'");
    st.warmup_epochs = get_or<int>(s, "warmup_epochs", st.warmup_epochs);
    st.percentile = get_or<double>(s, "percentile", st.percentile);
    const auto orient = get_or<std::string>(s, "correction_orientation", "transpose");
    if (orient == "transpose") st.orientation = CorrectionOrientation::Transpose;
    else if (orient == "literal") st.orientation = CorrectionOrientation::Literal;
    else throw ParameterError("unknown correction_orientation '" + orient + "'");
    const auto norm = get_or<std::string>(s, "normalization", "mean");
    if (norm == "mean") st.normalization = TermNormalization::Mean;
    else if (norm == "sum") st.normalization = TermNormalization::Sum;
    else throw ParameterError("unknown normalization '" + norm + "'");
  }
  if (c.epochs < 0) throw ParameterError("epochs must be nonnegative");
  if (c.eval_every < 1) throw ParameterError("eval_every must be at least 1");
  if (c.optimizer.batch_size < 1) throw ParameterError("batch_size must be at least 1");
  c.optimizer.schedule.validate();
  c.strategy.validate();
  return c;
}

inline ExperimentConfig parse_config(std::string_view text, const std::string& source = "config") {
  return config_from_tree(parse_config_tree(text, source));
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot read config " + path);
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_config(ss.str(), path);
}

namespace detail {

inline std::string fmt_double(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  std::string s(buf, res.ptr);
  if (s.find_first_of(".eEn") == std::string::npos) s += ".0";
  return s;
}

template <class T>
std::string fmt_list(const std::vector<T>& v) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) os << ", ";
    if constexpr (std::is_same_v<T, std::string>) os << '"' << v[i] << '"';
    else if constexpr (std::is_floating_point_v<T>) os << fmt_double(v[i]);
    else os << v[i];
  }
  os << ']';
  return os.str();
}

}  // namespace detail

/// Serializes a config in the text format; parse_config(to_config_text(c)) == c.
inline std::string to_config_text(const ExperimentConfig& c) {
  using detail::fmt_double;
  std::ostringstream os;
  os << "# noisylab experiment config\n";
  os << "name = \"" << c.name << "\"\n";
  os << "seed = " << c.seed << "\n";
  os << "epochs = " << c.epochs << "\n";
  os << "eval_every = " << c.eval_every << "\n";
  os << "output_dir = \"" << c.output_dir << "\"\n\n";

  os << "[dataset]\n";
  os << "kind = \"" << c.dataset.kind << "\"\n";
  if (c.dataset.kind == "blobs") {
    const auto& b = c.dataset.blobs;
    os << "n = " << b.n << "\nn_test = " << b.n_test << "\nc = " << b.classes << "\ndims = " << b.dims
       << "\ncluster_std = " << fmt_double(b.cluster_std) << "\nseparation = " << fmt_double(b.separation) << "\n";
  } else {
    os << "path = \"" << c.dataset.path << "\"\n";
    os << "limit = " << c.dataset.limit << "\ntest_limit = " << c.dataset.test_limit << "\n";
  }
  if (c.dataset.seed) os << "seed = " << *c.dataset.seed << "\n";

  os << "\n[noise]\n";
  os << "type = \"" << c.noise.type << "\"\nepsilon = " << fmt_double(c.noise.epsilon) << "\n";
  if (!c.noise.mapping.empty()) os << "mapping = " << detail::fmt_list(c.noise.mapping) << "\n";
  if (c.noise.seed) os << "seed = " << *c.noise.seed << "\n";

  os << "\n[augment]\n";
  os << "kind = \"" << c.augment.kind << "\"\n";
  if (c.augment.kind == "image") os << "pad = " << c.augment.pad << "\nflip_prob = " << fmt_double(c.augment.flip_prob) << "\n";
  if (c.augment.kind == "jitter") {
    if (c.augment.radius) os << "radius = " << fmt_double(*c.augment.radius) << "\n";
    os << "distribution = \""
       << (c.augment.distribution == JitterDistribution::UniformBall ? "uniform-ball" : "gaussian") << "\"\n";
  }

  os << "\n[network]\n";
  os << "layers = " << detail::fmt_list(c.network.hidden) << "\n";

  os << "\n[optimizer]\n";
  os << "lr = " << fmt_double(c.optimizer.schedule.initial_lr) << "\n";
  std::vector<int> ms;
  std::vector<double> fs;
  for (const auto& [e, f] : c.optimizer.schedule.milestones) {
    ms.push_back(e);
    fs.push_back(f);
  }
  os << "milestones = " << detail::fmt_list(ms) << "\n";
  os << "factors = " << detail::fmt_list(fs) << "\n";
  os << "weight_decay = " << fmt_double(c.optimizer.weight_decay) << "\n";
  os << "batch_size = " << c.optimizer.batch_size << "\n";

  const auto& s = c.strategy;
  os << "\n[strategy]\n";
  os << "kind = \"" << to_string(s.kind) << "\"\n";
  os << "psdr = " << (s.psdr_enabled ? "true" : "false") << "\n";
  os << "alpha = " << fmt_double(s.alpha) << "\n";
  os << "E_k = " << s.E_k << "\ntau = " << fmt_double(s.tau) << "\n";
  os << "t_source = \"" << (s.t_source == TSource::Oracle ? "oracle" : "estimated") << "\"\n";
  os << "warmup_epochs = " << s.warmup_epochs << "\npercentile = " << fmt_double(s.percentile) << "\n";
  os << "correction_orientation = \""
     << (s.orientation == CorrectionOrientation::Transpose ? "transpose" : "literal") << "\"\n";
  os << "normalization = \"" << (s.normalization == TermNormalization::Mean ? "mean" : "sum") << "\"\n";
  return os.str();
}

/// Expands hidden-layer strings for a given per-sample input shape and class
/// count, appending the output Dense(c) and Softmax.
inline std::vector<LayerSpec> build_layers(const NetworkConfig& cfg, const Shape& sample_shape, std::size_t classes) {
  std::vector<LayerSpec> out;
  Shape cur = sample_shape;
  auto fail = [](const std::string& m) -> void { throw ParameterError("network layers: " + m); };
  for (const auto& item : cfg.hidden) {
    std::vector<std::string> parts;
    std::stringstream ss(item);
    for (std::string p; std::getline(ss, p, ':');) parts.push_back(p);
    if (parts.empty()) fail("empty layer entry");
    auto num = [&](std::size_t i, std::uint32_t fallback) -> std::uint32_t {
      if (i >= parts.size()) return fallback;
      try {
        return static_cast<std::uint32_t>(std::stoul(parts[i]));
      } catch (const std::exception&) {
        throw ParameterError("network layers: bad number in '" + item + "'");
      }
    };
    const auto& kind = parts[0];
    if (kind == "dense") {
      if (cur.size() != 1) fail("'" + item + "' needs a flat input; add \"flatten\" first");
      const auto width = num(1, 0);
      if (width == 0) fail("'" + item + "' needs a positive width");
      out.push_back(LayerSpec::dense(static_cast<std::uint32_t>(cur[0]), width));
      cur = {width};
    } else if (kind == "relu") {
      out.push_back(LayerSpec::relu());
    } else if (kind == "flatten") {
      out.push_back(LayerSpec::flatten());
      cur = {shape_size(cur)};
    } else if (kind == "conv") {
      if (cur.size() != 3) fail("'" + item + "' needs a C x H x W input");
      const auto oc = num(1, 0), k = num(2, 3), s = num(3, 1), p = num(4, 0);
      if (oc == 0 || k == 0 || s == 0) fail("'" + item + "' has a zero size");
      if (cur[1] + 2 * p < k || cur[2] + 2 * p < k) fail("'" + item + "' kernel exceeds the padded input");
      out.push_back(LayerSpec::conv2d(static_cast<std::uint32_t>(cur[0]), oc, k, s, p));
      cur = {oc, (cur[1] + 2 * p - k) / s + 1, (cur[2] + 2 * p - k) / s + 1};
    } else {
      fail("unknown layer '" + item + "'");
    }
  }
  if (cur.size() != 1) {
    out.push_back(LayerSpec::flatten());
    cur = {shape_size(cur)};
  }
  out.push_back(LayerSpec::dense(static_cast<std::uint32_t>(cur[0]), static_cast<std::uint32_t>(classes)));
  out.push_back(LayerSpec::softmax());
  return out;
}

}  // namespace noisylab
