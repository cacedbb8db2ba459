#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "noisylab/error.hpp"
#include "noisylab/random.hpp"
#include "noisylab/tensor.hpp"

namespace noisylab {

enum class Split { Train, Test };

/// Inputs with observed labels. true_labels is retained for evaluation only;
/// training code reads observed_labels exclusively.
struct LabeledDataset {
  Tensor inputs;  // [n x sample dims...]
  std::vector<int> observed_labels;
  std::optional<std::vector<int>> true_labels;
  Split split = Split::Train;
  std::size_t classes = 0;
  std::string provenance;

  std::size_t size() const noexcept { return observed_labels.size(); }
  Shape sample_shape() const { return Shape(inputs.shape().begin() + 1, inputs.shape().end()); }

  /// Stacks the given samples into a batch tensor.
  Tensor gather(std::span<const std::size_t> indices) const {
    Shape s = inputs.shape();
    s[0] = indices.size();
    Tensor out(std::move(s));
    const std::size_t rs = inputs.row_size();
    for (std::size_t k = 0; k < indices.size(); ++k) {
      auto src = inputs.row(indices[k]);
      std::copy(src.begin(), src.end(), out.values().begin() + static_cast<std::ptrdiff_t>(k * rs));
    }
    return out;
  }
};

struct BlobSpec {
  std::size_t n = 2000;
  std::size_t n_test = 2000;
  std::size_t classes = 4;
  std::size_t dims = 2;
  double cluster_std = 1.0;
  double separation = 3.91;  // distance between neighbouring centers
  std::uint64_t seed = 0;
};

struct DatasetSplits {
  LabeledDataset train;
  LabeledDataset test;
};

/// Class centers. Classes sit on a circle in the first two coordinates with
/// neighbouring centers `separation` apart; with dims == 1 they sit on a line.
inline std::vector<std::vector<double>> blob_centers(std::size_t classes, std::size_t dims, double separation) {
  std::vector<std::vector<double>> centers(classes, std::vector<double>(dims, 0.0));
  for (std::size_t k = 0; k < classes; ++k) {
    if (dims == 1) {
      centers[k][0] = separation * (static_cast<double>(k) - 0.5 * static_cast<double>(classes - 1));
      continue;
    }
    const double radius = separation / (2.0 * std::sin(std::numbers::pi / static_cast<double>(classes)));
    const double angle = 2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(classes);
    centers[k][0] = radius * std::cos(angle);
    centers[k][1] = radius * std::sin(angle);
  }
  return centers;
}

namespace detail {

inline LabeledDataset draw_blobs(const BlobSpec& spec, std::size_t n, Split split, std::uint64_t seed) {
  const auto centers = blob_centers(spec.classes, spec.dims, spec.separation);
  Rng rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  LabeledDataset ds;
  ds.inputs = Tensor(Shape{n, spec.dims});
  ds.observed_labels.resize(n);
  ds.split = split;
  ds.classes = spec.classes;
  for (std::size_t t = 0; t < n; ++t) {
    const auto y = t % spec.classes;
    ds.observed_labels[t] = static_cast<int>(y);
    auto row = ds.inputs.row(t);
    for (std::size_t d = 0; d < spec.dims; ++d) row[d] = centers[y][d] + spec.cluster_std * normal(rng);
  }
  ds.true_labels = ds.observed_labels;
  ds.provenance = "blobs(n=" + std::to_string(n) + ",c=" + std::to_string(spec.classes) + ",dims=" +
                  std::to_string(spec.dims) + ",std=" + std::to_string(spec.cluster_std) +
                  ",sep=" + std::to_string(spec.separation) + ",seed=" + std::to_string(spec.seed) + ")";
  return ds;
}

}  // namespace detail

/// Balanced gaussian clusters; train and test come from separate streams.
inline DatasetSplits make_blobs(const BlobSpec& spec) {
  if (spec.classes < 2) throw ParameterError("blobs need at least 2 classes");
  if (spec.n < spec.classes || spec.n_test < 1) throw ParameterError("blobs need n >= c and n_test >= 1");
  if (spec.dims < 1) throw ParameterError("blobs need dims >= 1");
  if (!(spec.cluster_std >= 0.0) || !(spec.separation > 0.0)) {
    throw ParameterError("blobs need cluster_std >= 0 and separation > 0");
  }
  return {detail::draw_blobs(spec, spec.n, Split::Train, derive_seed(spec.seed, "blobs/train")),
          detail::draw_blobs(spec, spec.n_test, Split::Test, derive_seed(spec.seed, "blobs/test"))};
}

// ---------------------------------------------------------------------------
// CIFAR binary batches. Each record is the label byte(s) followed by 3072
// pixel bytes in channel-major order (1024 red, 1024 green, 1024 blue).

enum class CifarKind { Cifar10, Cifar100 };

inline constexpr std::size_t kCifarPixels = 3 * 32 * 32;

inline std::size_t cifar_label_bytes(CifarKind kind) { return kind == CifarKind::Cifar10 ? 1 : 2; }
inline std::size_t cifar_record_size(CifarKind kind) { return cifar_label_bytes(kind) + kCifarPixels; }

struct CifarRecord {
  std::uint8_t coarse_label = 0;  // CIFAR-100 only
  std::uint8_t label = 0;         // class label (fine label for CIFAR-100)
  std::array<std::uint8_t, kCifarPixels> pixels{};
};

inline std::vector<CifarRecord> parse_cifar_records(std::span<const std::uint8_t> bytes, CifarKind kind,
                                                    const std::string& source = "buffer") {
  const std::size_t rec = cifar_record_size(kind);
  if (bytes.size() % rec != 0) {
    const std::size_t full = bytes.size() / rec;
    throw FormatError(source + ": truncated CIFAR data: got " + std::to_string(bytes.size()) + " bytes, expected " +
                      std::to_string((full + 1) * rec) + " (" + std::to_string(full + 1) + " records of " +
                      std::to_string(rec) + " bytes); " + std::to_string(full) + " complete records and " +
                      std::to_string(bytes.size() % rec) + " trailing bytes");
  }
  std::vector<CifarRecord> out(bytes.size() / rec);
  for (std::size_t r = 0; r < out.size(); ++r) {
    const auto* p = bytes.data() + r * rec;
    if (kind == CifarKind::Cifar100) {
      out[r].coarse_label = p[0];
      out[r].label = p[1];
    } else {
      out[r].label = p[0];
    }
    std::copy(p + cifar_label_bytes(kind), p + rec, out[r].pixels.begin());
  }
  return out;
}

inline std::vector<std::uint8_t> serialize_cifar_record(const CifarRecord& r, CifarKind kind) {
  std::vector<std::uint8_t> out;
  out.reserve(cifar_record_size(kind));
  if (kind == CifarKind::Cifar100) out.push_back(r.coarse_label);
  out.push_back(r.label);
  out.insert(out.end(), r.pixels.begin(), r.pixels.end());
  return out;
}

inline std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>());
}

inline std::vector<std::string> cifar_files(CifarKind kind, Split split) {
  if (kind == CifarKind::Cifar10) {
    if (split == Split::Test) return {"test_batch.bin"};
    return {"data_batch_1.bin", "data_batch_2.bin", "data_batch_3.bin", "data_batch_4.bin", "data_batch_5.bin"};
  }
  return {split == Split::Test ? "test.bin" : "train.bin"};
}

inline std::vector<CifarRecord> read_cifar_split(const std::filesystem::path& dir, CifarKind kind, Split split) {
  std::vector<CifarRecord> all;
  for (const auto& name : cifar_files(kind, split)) {
    const auto path = dir / name;
    if (!std::filesystem::exists(path)) throw IoError("missing CIFAR file " + path.string());
    const auto bytes = read_file_bytes(path);
    auto recs = parse_cifar_records(bytes, kind, path.string());
    all.insert(all.end(), recs.begin(), recs.end());
  }
  return all;
}

struct ChannelStats {
  std::array<double, 3> mean{};
  std::array<double, 3> std{};
};

/// Per-channel mean/std of pixels scaled to [0, 1].
inline ChannelStats channel_stats(std::span<const CifarRecord> records) {
  ChannelStats s;
  for (std::size_t c = 0; c < 3; ++c) {
    double sum = 0.0, sq = 0.0;
    for (const auto& r : records) {
      for (std::size_t i = 0; i < 1024; ++i) {
        const double v = r.pixels[c * 1024 + i] / 255.0;
        sum += v;
        sq += v * v;
      }
    }
    const double n = static_cast<double>(records.size()) * 1024.0;
    s.mean[c] = n > 0 ? sum / n : 0.0;
    const double var = n > 0 ? sq / n - s.mean[c] * s.mean[c] : 0.0;
    s.std[c] = var > 0 ? std::sqrt(var) : 1.0;
  }
  return s;
}

inline LabeledDataset cifar_dataset(std::span<const CifarRecord> records, CifarKind kind, Split split,
                                    const ChannelStats& stats, const std::string& provenance) {
  if (records.empty()) throw DataError("no CIFAR records");
  const std::size_t classes = kind == CifarKind::Cifar10 ? 10 : 100;
  LabeledDataset ds;
  ds.inputs = Tensor(Shape{records.size(), 3, 32, 32});
  ds.observed_labels.resize(records.size());
  ds.split = split;
  ds.classes = classes;
  ds.provenance = provenance;
  for (std::size_t r = 0; r < records.size(); ++r) {
    if (records[r].label >= classes) throw DataError("CIFAR label out of range at record " + std::to_string(r));
    ds.observed_labels[r] = records[r].label;
    auto row = ds.inputs.row(r);
    for (std::size_t i = 0; i < kCifarPixels; ++i) {
      const std::size_t c = i / 1024;
      row[i] = (records[r].pixels[i] / 255.0 - stats.mean[c]) / stats.std[c];
    }
  }
  ds.true_labels = ds.observed_labels;
  return ds;
}

/// Loads one split; standardization always uses training-split statistics.
inline LabeledDataset load_cifar_binary(const std::filesystem::path& dir, Split split,
                                        CifarKind kind = CifarKind::Cifar10) {
  const auto train = read_cifar_split(dir, kind, Split::Train);
  const auto stats = channel_stats(train);
  const std::string prov = std::string(kind == CifarKind::Cifar10 ? "cifar10" : "cifar100") + ":" + dir.string();
  if (split == Split::Train) return cifar_dataset(train, kind, split, stats, prov + ":train");
  const auto test = read_cifar_split(dir, kind, Split::Test);
  return cifar_dataset(test, kind, split, stats, prov + ":test");
}

}  // namespace noisylab
