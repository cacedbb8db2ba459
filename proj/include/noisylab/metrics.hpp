#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "noisylab/error.hpp"

namespace noisylab {

struct NetRow {
  double supervised_loss = 0.0;
  double psdr_loss = 0.0;
  double combined_loss = 0.0;
  double train_acc_observed = 0.0;
  std::optional<double> train_acc_true;
  std::optional<double> test_acc;

  friend bool operator==(const NetRow&, const NetRow&) = default;
};

struct EpochRow {
  int epoch = 0;
  double learning_rate = 0.0;
  double keep_rate = 1.0;
  std::vector<NetRow> nets;
  double seconds = 0.0;  // wall clock; kept out of metrics.csv
};

struct RunMetrics {
  std::size_t networks = 1;
  std::vector<EpochRow> rows;
};

// metrics.csv columns. One network:
//   epoch,lr,keep_rate,supervised_loss,psdr_loss,combined_loss,train_acc_observed,train_acc_true,test_acc
// Two networks: the six per-network columns repeat with suffixes _net1 and _net2.
// Empty cells mean "not measured" (no true labels, or no test evaluation that epoch).
inline const std::vector<std::string>& per_net_columns() {
  static const std::vector<std::string> cols{"supervised_loss",    "psdr_loss",      "combined_loss",
                                             "train_acc_observed", "train_acc_true", "test_acc"};
  return cols;
}

inline std::vector<std::string> metrics_header(std::size_t networks) {
  std::vector<std::string> h{"epoch", "lr", "keep_rate"};
  for (std::size_t k = 0; k < networks; ++k) {
    for (const auto& c : per_net_columns()) h.push_back(networks == 1 ? c : c + "_net" + std::to_string(k + 1));
  }
  return h;
}

namespace detail {

inline std::string fmt_metric(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string fmt_metric(const std::optional<double>& v) { return v ? fmt_metric(*v) : std::string(); }

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  for (std::string cell; std::getline(ss, cell, ',');) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

}  // namespace detail

inline std::string format_metrics_row(const EpochRow& row) {
  std::string s = std::to_string(row.epoch) + "," + detail::fmt_metric(row.learning_rate) + "," +
                  detail::fmt_metric(row.keep_rate);
  for (const auto& n : row.nets) {
    s += "," + detail::fmt_metric(n.supervised_loss) + "," + detail::fmt_metric(n.psdr_loss) + "," +
         detail::fmt_metric(n.combined_loss) + "," + detail::fmt_metric(n.train_acc_observed) + "," +
         detail::fmt_metric(n.train_acc_true) + "," + detail::fmt_metric(n.test_acc);
  }
  return s;
}

/// Streams rows to metrics.csv, flushing after each one so an interrupted
/// run leaves a valid prefix.
class MetricsWriter {
 public:
  MetricsWriter(const std::filesystem::path& path, std::size_t networks) : os_(path, std::ios::trunc) {
    if (!os_) throw IoError("cannot write " + path.string());
    const auto h = metrics_header(networks);
    for (std::size_t i = 0; i < h.size(); ++i) os_ << (i ? "," : "") << h[i];
    os_ << '\n' << std::flush;
  }

  void append(const EpochRow& row) { os_ << format_metrics_row(row) << '\n' << std::flush; }

  void append_error(const std::string& message) {
    std::string clean = message;
    for (char& ch : clean) ch = ch == '\n' ? ' ' : ch;
    os_ << "#error," << clean << '\n' << std::flush;
  }

 private:
  std::ofstream os_;
};

/// Parses metrics.csv back; lines starting with '#' are skipped.
inline RunMetrics read_metrics_csv(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot read " + path.string());
  std::string line;
  if (!std::getline(is, line)) throw FormatError(path.string() + ": empty metrics file");
  const auto header = detail::split_csv_line(line);
  RunMetrics m;
  if (header == metrics_header(1)) m.networks = 1;
  else if (header == metrics_header(2)) m.networks = 2;
  else throw FormatError(path.string() + ": unrecognized metrics header");
  auto num = [&](const std::string& cell) -> std::optional<double> {
    if (cell.empty()) return std::nullopt;
    try {
      return std::stod(cell);
    } catch (const std::exception&) {
      throw FormatError(path.string() + ": bad number '" + cell + "'");
    }
  };
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    const auto cells = detail::split_csv_line(line);
    if (cells.size() != header.size()) {
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": expected " + std::to_string(header.size()) +
                        " cells, got " + std::to_string(cells.size()));
    }
    EpochRow row;
    row.epoch = std::stoi(cells[0]);
    row.learning_rate = num(cells[1]).value_or(0.0);
    row.keep_rate = num(cells[2]).value_or(1.0);
    for (std::size_t k = 0; k < m.networks; ++k) {
      const std::size_t b = 3 + 6 * k;
      NetRow n;
      n.supervised_loss = num(cells[b]).value_or(0.0);
      n.psdr_loss = num(cells[b + 1]).value_or(0.0);
      n.combined_loss = num(cells[b + 2]).value_or(0.0);
      n.train_acc_observed = num(cells[b + 3]).value_or(0.0);
      n.train_acc_true = num(cells[b + 4]);
      n.test_acc = num(cells[b + 5]);
      row.nets.push_back(n);
    }
    m.rows.push_back(std::move(row));
  }
  return m;
}

/// Long-format curve data: run_id,epoch,series,value. Unmeasured cells are omitted.
inline void emit_curves(const RunMetrics& metrics, const std::filesystem::path& path, const std::string& run_id) {
  if (metrics.rows.empty()) throw DataError("no metrics rows to emit");
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot write " + path.string());
  os << "run_id,epoch,series,value\n";
  auto emit = [&](const std::string& series, int epoch, const std::optional<double>& v) {
    if (v) os << run_id << ',' << epoch << ',' << series << ',' << detail::fmt_metric(*v) << '\n';
  };
  const bool multi = metrics.networks > 1;
  for (const auto& row : metrics.rows) {
    emit("lr", row.epoch, row.learning_rate);
    emit("keep_rate", row.epoch, row.keep_rate);
    for (std::size_t k = 0; k < row.nets.size(); ++k) {
      const std::string sfx = multi ? "_net" + std::to_string(k + 1) : "";
      const auto& n = row.nets[k];
      emit("supervised_loss" + sfx, row.epoch, n.supervised_loss);
      emit("psdr_loss" + sfx, row.epoch, n.psdr_loss);
      emit("combined_loss" + sfx, row.epoch, n.combined_loss);
      emit("train_acc_observed" + sfx, row.epoch, n.train_acc_observed);
      emit("train_acc_true" + sfx, row.epoch, n.train_acc_true);
      emit("test_acc" + sfx, row.epoch, n.test_acc);
    }
  }
}

}  // namespace noisylab
