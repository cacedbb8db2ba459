#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <limits>
#include <optional>
#include <ostream>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "noisylab/error.hpp"
#include "noisylab/random.hpp"

namespace noisylab {

/// Row-stochastic c x c matrix, entry (i, j) = P(observed j | true i).
class TransitionMatrix {
 public:
  TransitionMatrix() = default;

  explicit TransitionMatrix(std::size_t c) : c_(c), p_(c * c, 0.0) {
    if (c < 2) throw ParameterError("transition matrix needs at least 2 classes");
  }

  TransitionMatrix(std::size_t c, std::vector<double> entries) : c_(c), p_(std::move(entries)) {
    if (c < 2) throw ParameterError("transition matrix needs at least 2 classes");
    if (p_.size() != c * c) throw DimensionError("transition matrix needs c*c entries");
  }

  static TransitionMatrix identity(std::size_t c) {
    TransitionMatrix t(c);
    for (std::size_t i = 0; i < c; ++i) t(i, i) = 1.0;
    return t;
  }

  std::size_t classes() const noexcept { return c_; }
  double& operator()(std::size_t i, std::size_t j) { return p_[i * c_ + j]; }
  double operator()(std::size_t i, std::size_t j) const { return p_[i * c_ + j]; }
  std::span<const double> row(std::size_t i) const { return std::span<const double>(p_).subspan(i * c_, c_); }
  const std::vector<double>& entries() const noexcept { return p_; }

  bool is_row_stochastic(double tol = 1e-12) const {
    for (std::size_t i = 0; i < c_; ++i) {
      double s = 0.0;
      for (double v : row(i)) {
        if (!(v >= 0.0 && v <= 1.0)) return false;
        s += v;
      }
      if (std::abs(s - 1.0) > tol) return false;
    }
    return true;
  }

  /// True when every diagonal entry is the strict maximum of its row.
  bool is_nontrivial() const {
    for (std::size_t i = 0; i < c_; ++i) {
      for (std::size_t j = 0; j < c_; ++j) {
        if (j != i && !((*this)(i, i) > (*this)(i, j))) return false;
      }
    }
    return true;
  }

  /// Expected fraction of flipped labels under uniform class priors.
  double expected_flip_rate() const {
    double s = 0.0;
    for (std::size_t i = 0; i < c_; ++i) s += 1.0 - (*this)(i, i);
    return s / static_cast<double>(c_);
  }

  friend bool operator==(const TransitionMatrix&, const TransitionMatrix&) = default;

 private:
  std::size_t c_ = 0;
  std::vector<double> p_;
};

inline TransitionMatrix symmetric_matrix(std::size_t c, double epsilon) {
  if (c < 2) throw ParameterError("symmetric noise needs c >= 2");
  if (!(epsilon >= 0.0 && epsilon < 1.0)) throw ParameterError("noise ratio must lie in [0, 1)");
  TransitionMatrix t(c);
  const double off = epsilon / static_cast<double>(c - 1);
  for (std::size_t i = 0; i < c; ++i)
    for (std::size_t j = 0; j < c; ++j) t(i, j) = i == j ? 1.0 - epsilon : off;
  return t;
}

struct AsymmetricNoise {
  TransitionMatrix matrix;
  /// Set when epsilon >= 0.5, where the flip target ties or beats the true class.
  std::optional<std::string> warning;
};

inline std::vector<std::size_t> circular_mapping(std::size_t c) {
  std::vector<std::size_t> m(c);
  for (std::size_t i = 0; i < c; ++i) m[i] = (i + 1) % c;
  return m;
}

/// Each class i keeps its label with probability 1 - epsilon and flips to
/// mapping[i] otherwise. Default mapping is i -> (i + 1) mod c.
inline AsymmetricNoise asymmetric_matrix(std::size_t c, double epsilon, std::vector<std::size_t> mapping = {}) {
  if (c < 2) throw ParameterError("asymmetric noise needs c >= 2");
  if (!(epsilon >= 0.0 && epsilon < 1.0)) throw ParameterError("noise ratio must lie in [0, 1)");
  if (mapping.empty()) mapping = circular_mapping(c);
  if (mapping.size() != c) throw ParameterError("asymmetric mapping must have one target per class");
  TransitionMatrix t(c);
  for (std::size_t i = 0; i < c; ++i) {
    if (mapping[i] >= c) throw ParameterError("mapping target out of range for class " + std::to_string(i));
    if (mapping[i] == i) throw ParameterError("mapping sends class " + std::to_string(i) + " to itself");
    t(i, i) = 1.0 - epsilon;
    t(i, mapping[i]) += epsilon;
  }
  AsymmetricNoise out{std::move(t), std::nullopt};
  if (epsilon >= 0.5) out.warning = "asymmetric noise ratio >= 0.5 makes the flip target at least as likely as the true class";
  return out;
}

struct CorruptionRecord {
  std::size_t index = 0;
  int true_label = 0;
  int observed_label = 0;
  bool flipped = false;

  friend bool operator==(const CorruptionRecord&, const CorruptionRecord&) = default;
};

struct Corruption {
  std::vector<int> observed;
  std::vector<CorruptionRecord> records;

  double flip_fraction() const {
    if (records.empty()) return 0.0;
    std::size_t n = 0;
    for (const auto& r : records) n += r.flipped ? 1 : 0;
    return static_cast<double>(n) / static_cast<double>(records.size());
  }
};

/// Resamples every label from its row of T with a single seeded stream.
inline Corruption corrupt_labels(std::span<const int> true_labels, const TransitionMatrix& t, std::uint64_t seed) {
  const auto c = static_cast<int>(t.classes());
  Rng rng(seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  Corruption out;
  out.observed.reserve(true_labels.size());
  out.records.reserve(true_labels.size());
  for (std::size_t k = 0; k < true_labels.size(); ++k) {
    const int y = true_labels[k];
    if (y < 0 || y >= c) {
      throw DataError("label " + std::to_string(y) + " at index " + std::to_string(k) + " outside [0, " +
                      std::to_string(c) + ")");
    }
    const double u = unif(rng);
    auto row = t.row(static_cast<std::size_t>(y));
    int observed = c - 1;
    double cum = 0.0;
    for (int j = 0; j < c; ++j) {
      cum += row[static_cast<std::size_t>(j)];
      if (u < cum) {
        observed = j;
        break;
      }
    }
    // Guard against a cumulative sum that rounds just below 1.
    while (row[static_cast<std::size_t>(observed)] == 0.0 && observed > 0) --observed;
    out.observed.push_back(observed);
    out.records.push_back({k, y, observed, observed != y});
  }
  return out;
}

struct EmpiricalTransition {
  std::size_t c = 0;
  std::vector<double> entries;  // row-major, NaN rows for classes with no records
  std::vector<std::string> notes;

  double operator()(std::size_t i, std::size_t j) const { return entries[i * c + j]; }
};

inline EmpiricalTransition empirical_transition(std::span<const CorruptionRecord> records, std::size_t c) {
  EmpiricalTransition out{c, std::vector<double>(c * c, 0.0), {}};
  std::vector<std::size_t> totals(c, 0);
  for (const auto& r : records) {
    if (r.true_label < 0 || static_cast<std::size_t>(r.true_label) >= c || r.observed_label < 0 ||
        static_cast<std::size_t>(r.observed_label) >= c) {
      throw DataError("corruption record " + std::to_string(r.index) + " has a label outside [0, c)");
    }
    out.entries[static_cast<std::size_t>(r.true_label) * c + static_cast<std::size_t>(r.observed_label)] += 1.0;
    ++totals[static_cast<std::size_t>(r.true_label)];
  }
  for (std::size_t i = 0; i < c; ++i) {
    for (std::size_t j = 0; j < c; ++j) {
      auto& v = out.entries[i * c + j];
      v = totals[i] ? v / static_cast<double>(totals[i]) : std::numeric_limits<double>::quiet_NaN();
    }
    if (!totals[i]) out.notes.push_back("class " + std::to_string(i) + " has no records; row left as NaN");
  }
  return out;
}

// Text format: first line c, then c lines of c space-separated decimals.

inline void write_transition(std::ostream& os, const TransitionMatrix& t) {
  os << t.classes() << '\n' << std::setprecision(17);
  for (std::size_t i = 0; i < t.classes(); ++i) {
    for (std::size_t j = 0; j < t.classes(); ++j) os << (j ? " " : "") << t(i, j);
    os << '\n';
  }
}

inline TransitionMatrix read_transition(std::istream& is) {
  std::size_t c = 0;
  if (!(is >> c)) throw FormatError("transition matrix: missing class count");
  std::vector<double> v(c * c);
  for (std::size_t k = 0; k < v.size(); ++k) {
    if (!(is >> v[k])) throw FormatError("transition matrix: expected " + std::to_string(c * c) + " entries, got " + std::to_string(k));
  }
  return TransitionMatrix(c, std::move(v));
}

inline void save_transition(const std::string& path, const TransitionMatrix& t) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot write " + path);
  write_transition(os, t);
}

inline TransitionMatrix load_transition(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot read " + path);
  return read_transition(is);
}

inline void write_corruption_csv(std::ostream& os, std::span<const CorruptionRecord> records) {
  os << "index,true_label,observed_label,flipped\n";
  for (const auto& r : records) {
    os << r.index << ',' << r.true_label << ',' << r.observed_label << ',' << (r.flipped ? 1 : 0) << '\n';
  }
}

}  // namespace noisylab
