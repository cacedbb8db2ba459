#include <cmath>
#include <sstream>

#include "catch_amalgamated.hpp"
#include "noisylab/noisylab.hpp"

using namespace noisylab;
using Catch::Approx;

namespace {

std::vector<int> balanced_labels(std::size_t per_class, int classes) {
  std::vector<int> y;
  for (std::size_t k = 0; k < per_class * static_cast<std::size_t>(classes); ++k) y.push_back(static_cast<int>(k % classes));
  return y;
}

}  // namespace

TEST_CASE("symmetric matrix examples", "[noise]") {
  const auto t = symmetric_matrix(5, 0.4);
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = 0; j < 5; ++j) CHECK(t(i, j) == Approx(i == j ? 0.6 : 0.1).epsilon(1e-15));
  CHECK(t.is_row_stochastic(1e-12));
  CHECK(symmetric_matrix(7, 0.0) == TransitionMatrix::identity(7));
  const auto two = symmetric_matrix(2, 0.2);
  CHECK(two(0, 0) == Approx(0.8));
  CHECK(two(0, 1) == Approx(0.2));
  CHECK(two(1, 0) == Approx(0.2));
  CHECK(two(1, 1) == Approx(0.8));
  CHECK_THROWS_AS(symmetric_matrix(5, 1.0), ParameterError);
  CHECK_THROWS_AS(symmetric_matrix(1, 0.1), ParameterError);
}

TEST_CASE("asymmetric matrix examples", "[noise]") {
  const auto a = asymmetric_matrix(5, 0.4);
  for (std::size_t i = 0; i < 5; ++i) {
    for (std::size_t j = 0; j < 5; ++j) {
      const double want = i == j ? 0.6 : (j == (i + 1) % 5 ? 0.4 : 0.0);
      CHECK(a.matrix(i, j) == Approx(want).epsilon(1e-15));
    }
  }
  CHECK_FALSE(a.warning);
  CHECK(asymmetric_matrix(4, 0.0).matrix == TransitionMatrix::identity(4));
  const auto m = asymmetric_matrix(3, 0.4, {2, 0, 1}).matrix;
  const std::vector<double> want{0.6, 0, 0.4, 0.4, 0.6, 0, 0, 0.4, 0.6};
  for (std::size_t k = 0; k < 9; ++k) CHECK(m.entries()[k] == Approx(want[k]).epsilon(1e-15));
  CHECK_THROWS_AS(asymmetric_matrix(3, 0.4, {0, 2, 1}), ParameterError);
  const auto heavy = asymmetric_matrix(3, 0.5);
  CHECK(heavy.warning);
  CHECK_FALSE(heavy.matrix.is_nontrivial());
}

TEST_CASE("constructed matrices are row stochastic with the configured flip rate", "[noise][property]") {
  for (std::size_t c = 2; c <= 12; ++c) {
    for (double eps : {0.0, 0.1, 0.25, 0.4, 0.49, 0.6, 0.9}) {
      const auto s = symmetric_matrix(c, eps);
      CHECK(s.is_row_stochastic(1e-12));
      CHECK(s.expected_flip_rate() == Approx(eps).margin(1e-12));
      CHECK(s.is_nontrivial() == (eps < static_cast<double>(c - 1) / static_cast<double>(c)));
      const auto a = asymmetric_matrix(c, eps);
      CHECK(a.matrix.is_row_stochastic(1e-12));
      CHECK(a.matrix.expected_flip_rate() == Approx(eps).margin(1e-12));
      CHECK(a.matrix.is_nontrivial() == (eps < 0.5));
    }
  }
}

TEST_CASE("identity corruption changes nothing", "[noise]") {
  const auto y = balanced_labels(100, 4);
  const auto c = corrupt_labels(y, TransitionMatrix::identity(4), 3);
  CHECK(c.observed == y);
  CHECK(c.flip_fraction() == 0.0);
}

TEST_CASE("corruption records are consistent and reproducible", "[noise]") {
  const auto y = balanced_labels(500, 5);
  const auto t = symmetric_matrix(5, 0.3);
  const auto a = corrupt_labels(y, t, 99);
  const auto b = corrupt_labels(y, t, 99);
  const auto c = corrupt_labels(y, t, 100);
  CHECK(a.observed == b.observed);
  CHECK(a.observed != c.observed);
  for (std::size_t k = 0; k < y.size(); ++k) {
    CHECK(a.records[k].index == k);
    CHECK(a.records[k].true_label == y[k]);
    CHECK(a.records[k].flipped == (a.records[k].observed_label != y[k]));
  }
  const std::vector<int> bad{0, 5};
  CHECK_THROWS_AS(corrupt_labels(bad, t, 1), DataError);
}

TEST_CASE("symmetric corruption concentrates at n = 100000", "[noise][statistics]") {
  const auto y = balanced_labels(10000, 10);
  const auto t = symmetric_matrix(10, 0.5);
  const auto c = corrupt_labels(y, t, 2024);
  CHECK(c.flip_fraction() >= 0.49);
  CHECK(c.flip_fraction() <= 0.51);
  const auto e = empirical_transition(c.records, 10);
  for (std::size_t i = 0; i < 10; ++i)
    for (std::size_t j = 0; j < 10; ++j) CHECK(std::abs(e(i, j) - t(i, j)) <= 0.01);
}

TEST_CASE("per-class destination frequencies match T rows", "[noise][statistics]") {
  const auto y = balanced_labels(100000, 3);
  const auto t = asymmetric_matrix(3, 0.4, {2, 0, 1}).matrix;
  const auto e = empirical_transition(corrupt_labels(y, t, 5).records, 3);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 3; ++j) CHECK(std::abs(e(i, j) - t(i, j)) <= 0.01);
}

TEST_CASE("empirical transition edge cases", "[noise]") {
  const auto y = balanced_labels(50, 4);
  const auto e = empirical_transition(corrupt_labels(y, TransitionMatrix::identity(4), 1).records, 4);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 4; ++j) CHECK(e(i, j) == (i == j ? 1.0 : 0.0));

  const std::vector<CorruptionRecord> one{{0, 0, 3, true}};
  const auto s = empirical_transition(one, 4);
  CHECK(s(0, 0) == 0.0);
  CHECK(s(0, 3) == 1.0);
  for (std::size_t i = 1; i < 4; ++i)
    for (std::size_t j = 0; j < 4; ++j) CHECK(std::isnan(s(i, j)));
  CHECK(s.notes.size() == 3);
}

TEST_CASE("transition text format round trip", "[noise][io]") {
  const auto t = asymmetric_matrix(4, 0.3).matrix;
  std::stringstream ss;
  write_transition(ss, t);
  std::string first;
  std::getline(ss, first);
  CHECK(first == "4");
  ss.seekg(0);
  CHECK(read_transition(ss) == t);
  std::stringstream bad("3\n1 0 0\n0 1");
  CHECK_THROWS_AS(read_transition(bad), FormatError);
}

TEST_CASE("corruption csv export", "[noise][io]") {
  const std::vector<CorruptionRecord> recs{{0, 1, 1, false}, {1, 2, 0, true}};
  std::ostringstream os;
  write_corruption_csv(os, recs);
  CHECK(os.str() == "index,true_label,observed_label,flipped\n0,1,1,0\n1,2,0,1\n");
}
