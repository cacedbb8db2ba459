#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "noisylab/error.hpp"

namespace noisylab {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

inline std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

/// Dense row-major array of doubles with an optional gradient buffer.
/// The first dimension is the batch dimension wherever a batch is expected.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape, double fill = 0.0)
      : shape_(std::move(shape)), data_(shape_size(shape_), fill) {
    check_shape();
  }

  Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
    check_shape();
    if (data_.size() != shape_size(shape_)) {
      throw DimensionError("tensor data length " + std::to_string(data_.size()) +
                           " does not match shape " + shape_string(shape_));
    }
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }
  std::vector<double>& values() noexcept { return data_; }
  const std::vector<double>& values() const noexcept { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  // 2-D access.
  double& at(std::size_t r, std::size_t c) { return data_[r * row_size() + c]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * row_size() + c]; }

  /// Number of elements per entry of the leading dimension.
  std::size_t row_size() const { return shape_.empty() || shape_[0] == 0 ? 0 : data_.size() / shape_[0]; }
  std::size_t rows() const { return shape_.empty() ? 0 : shape_[0]; }

  std::span<double> row(std::size_t r) { return std::span<double>(data_).subspan(r * row_size(), row_size()); }
  std::span<const double> row(std::size_t r) const {
    return std::span<const double>(data_).subspan(r * row_size(), row_size());
  }

  bool has_grad() const noexcept { return grad_.has_value(); }
  void ensure_grad() {
    if (!grad_) grad_.emplace(data_.size(), 0.0);
  }
  void zero_grad() {
    if (grad_) std::fill(grad_->begin(), grad_->end(), 0.0);
  }
  void drop_grad() { grad_.reset(); }
  std::span<double> grad() {
    if (!grad_) throw StateError("tensor has no gradient buffer");
    return *grad_;
  }
  std::span<const double> grad() const {
    if (!grad_) throw StateError("tensor has no gradient buffer");
    return *grad_;
  }

  Tensor reshaped(Shape shape) const {
    if (shape_size(shape) != data_.size()) {
      throw DimensionError("cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
    }
    return Tensor(std::move(shape), data_);
  }

  /// Rows [begin, end) of the leading dimension, without gradient.
  Tensor slice_rows(std::size_t begin, std::size_t end) const {
    if (begin > end || end > rows()) throw DimensionError("row slice out of range");
    Shape s = shape_;
    s[0] = end - begin;
    const auto rs = row_size();
    return Tensor(std::move(s), std::vector<double>(data_.begin() + static_cast<std::ptrdiff_t>(begin * rs),
                                                    data_.begin() + static_cast<std::ptrdiff_t>(end * rs)));
  }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
  }

  /// Value equality (shape and data); gradients are ignored.
  friend bool operator==(const Tensor& a, const Tensor& b) { return a.shape_ == b.shape_ && a.data_ == b.data_; }

 private:
  void check_shape() const {
    for (auto d : shape_) {
      if (d == 0) throw DimensionError("tensor dimensions must be positive, got " + shape_string(shape_));
    }
  }

  Shape shape_;
  std::vector<double> data_;
  std::optional<std::vector<double>> grad_;
};

/// Stacks two tensors along the leading dimension.
inline Tensor concat_rows(const Tensor& a, const Tensor& b) {
  if (a.rank() != b.rank() || !std::equal(a.shape().begin() + 1, a.shape().end(), b.shape().begin() + 1)) {
    throw DimensionError("cannot stack " + shape_string(a.shape()) + " and " + shape_string(b.shape()));
  }
  Shape s = a.shape();
  s[0] += b.dim(0);
  std::vector<double> data;
  data.reserve(a.size() + b.size());
  data.insert(data.end(), a.values().begin(), a.values().end());
  data.insert(data.end(), b.values().begin(), b.values().end());
  return Tensor(std::move(s), std::move(data));
}

inline std::size_t argmax(std::span<const double> row) {
  return static_cast<std::size_t>(std::distance(row.begin(), std::max_element(row.begin(), row.end())));
}

}  // namespace noisylab
