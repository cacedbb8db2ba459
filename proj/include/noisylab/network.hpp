#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "noisylab/error.hpp"
#include "noisylab/random.hpp"
#include "noisylab/tensor.hpp"

namespace noisylab {

// Tag values are part of the checkpoint format.
enum class LayerKind : std::uint8_t {
  Dense = 1,
  Relu = 2,
  Conv2D = 3,
  Flatten = 4,
  Softmax = 5,
};

/// Layer descriptor. dims: Dense {in, out}; Conv2D {in_ch, out_ch, kernel, stride, pad};
/// Relu, Flatten and Softmax take none.
struct LayerSpec {
  LayerKind kind{};
  std::vector<std::uint32_t> dims;

  static LayerSpec dense(std::uint32_t in, std::uint32_t out) { return {LayerKind::Dense, {in, out}}; }
  static LayerSpec relu() { return {LayerKind::Relu, {}}; }
  static LayerSpec conv2d(std::uint32_t in_ch, std::uint32_t out_ch, std::uint32_t kernel, std::uint32_t stride = 1,
                          std::uint32_t pad = 0) {
    return {LayerKind::Conv2D, {in_ch, out_ch, kernel, stride, pad}};
  }
  static LayerSpec flatten() { return {LayerKind::Flatten, {}}; }
  static LayerSpec softmax() { return {LayerKind::Softmax, {}}; }

  std::string describe() const {
    switch (kind) {
      case LayerKind::Dense: return "Dense(" + std::to_string(dims[0]) + "," + std::to_string(dims[1]) + ")";
      case LayerKind::Relu: return "ReLU";
      case LayerKind::Conv2D:
        return "Conv2D(" + std::to_string(dims[0]) + "," + std::to_string(dims[1]) + ",k" + std::to_string(dims[2]) +
               ",s" + std::to_string(dims[3]) + ",p" + std::to_string(dims[4]) + ")";
      case LayerKind::Flatten: return "Flatten";
      case LayerKind::Softmax: return "Softmax";
    }
    return "?";
  }

  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

inline std::size_t expected_dim_count(LayerKind kind) {
  switch (kind) {
    case LayerKind::Dense: return 2;
    case LayerKind::Conv2D: return 5;
    case LayerKind::Relu:
    case LayerKind::Flatten:
    case LayerKind::Softmax: return 0;
  }
  throw FormatError("unknown layer kind tag " + std::to_string(static_cast<int>(kind)));
}

/// Row-wise softmax with max shift.
inline Tensor softmax_rows(const Tensor& logits) {
  if (logits.rank() != 2) throw DimensionError("softmax expects a 2-D batch, got " + shape_string(logits.shape()));
  Tensor out(logits.shape());
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    auto in = logits.row(r);
    auto o = out.row(r);
    double mx = -std::numeric_limits<double>::infinity();
    for (double v : in) mx = std::max(mx, v);
    double sum = 0.0;
    for (std::size_t j = 0; j < in.size(); ++j) {
      o[j] = std::exp(in[j] - mx);
      sum += o[j];
    }
    for (double& v : o) v /= sum;
  }
  return out;
}

class Layer {
 public:
  explicit Layer(LayerSpec spec) : spec_(std::move(spec)) {
    if (spec_.dims.size() != expected_dim_count(spec_.kind)) {
      throw ParameterError(spec_.describe() + ": wrong number of layer dimensions");
    }
    for (std::size_t i = 0; i < spec_.dims.size(); ++i) {
      const bool is_padding = spec_.kind == LayerKind::Conv2D && i == 4;
      if (spec_.dims[i] == 0 && !is_padding) {
        throw ParameterError("layer dimensions must be positive in " + spec_.describe());
      }
    }
    switch (spec_.kind) {
      case LayerKind::Dense:
        params_.emplace_back(Shape{spec_.dims[0], spec_.dims[1]});
        params_.emplace_back(Shape{spec_.dims[1]});
        break;
      case LayerKind::Conv2D:
        params_.emplace_back(Shape{spec_.dims[1], spec_.dims[0], spec_.dims[2], spec_.dims[2]});
        params_.emplace_back(Shape{spec_.dims[1]});
        break;
      default: break;
    }
  }

  const LayerSpec& spec() const noexcept { return spec_; }
  std::vector<Tensor>& params() noexcept { return params_; }
  const std::vector<Tensor>& params() const noexcept { return params_; }

  /// He-uniform weights, zero biases.
  void initialize(Rng& rng) {
    if (params_.empty()) return;
    const double fan_in = spec_.kind == LayerKind::Dense
                              ? spec_.dims[0]
                              : static_cast<double>(spec_.dims[0]) * spec_.dims[2] * spec_.dims[2];
    const double limit = std::sqrt(6.0 / fan_in);
    std::uniform_real_distribution<double> dist(-limit, limit);
    for (double& w : params_[0].values()) w = dist(rng);
    std::fill(params_[1].values().begin(), params_[1].values().end(), 0.0);
  }

  Tensor forward(const Tensor& in, std::size_t index) const {
    switch (spec_.kind) {
      case LayerKind::Dense: return dense_forward(in, index);
      case LayerKind::Relu: {
        Tensor out = in;
        for (double& v : out.values()) v = v > 0.0 ? v : 0.0;
        return out;
      }
      case LayerKind::Conv2D: return conv_forward(in, index);
      case LayerKind::Flatten: {
        if (in.rank() < 2) throw DimensionError(where(index) + ": expected a batched tensor, got " + shape_string(in.shape()));
        return in.reshaped({in.dim(0), in.row_size()});
      }
      case LayerKind::Softmax:
        if (in.rank() != 2) throw DimensionError(where(index) + ": expected [B x c], got " + shape_string(in.shape()));
        return softmax_rows(in);
    }
    throw StateError("unreachable layer kind");
  }

  /// Accumulates parameter gradients and returns d loss / d input.
  Tensor backward(const Tensor& in, const Tensor& out, const Tensor& grad_out) {
    switch (spec_.kind) {
      case LayerKind::Dense: return dense_backward(in, grad_out);
      case LayerKind::Relu: {
        Tensor g(in.shape());
        for (std::size_t i = 0; i < in.size(); ++i) g[i] = in[i] > 0.0 ? grad_out[i] : 0.0;
        return g;
      }
      case LayerKind::Conv2D: return conv_backward(in, grad_out);
      case LayerKind::Flatten: return grad_out.reshaped(in.shape());
      case LayerKind::Softmax: {
        Tensor g(in.shape());
        for (std::size_t r = 0; r < out.rows(); ++r) {
          auto p = out.row(r);
          auto go = grad_out.row(r);
          double dot = 0.0;
          for (std::size_t j = 0; j < p.size(); ++j) dot += go[j] * p[j];
          auto gr = g.row(r);
          for (std::size_t j = 0; j < p.size(); ++j) gr[j] = p[j] * (go[j] - dot);
        }
        return g;
      }
    }
    throw StateError("unreachable layer kind");
  }

 private:
  std::string where(std::size_t index) const { return "layer " + std::to_string(index) + " (" + spec_.describe() + ")"; }

  Tensor dense_forward(const Tensor& in, std::size_t index) const {
    const std::size_t n_in = spec_.dims[0], n_out = spec_.dims[1];
    if (in.rank() != 2 || in.dim(1) != n_in) {
      throw DimensionError(where(index) + ": expected input [B x " + std::to_string(n_in) + "], got " +
                           shape_string(in.shape()));
    }
    const auto& w = params_[0].values();
    const auto& b = params_[1].values();
    Tensor out(Shape{in.rows(), n_out});
    for (std::size_t r = 0; r < in.rows(); ++r) {
      auto x = in.row(r);
      auto y = out.row(r);
      std::copy(b.begin(), b.end(), y.begin());
      for (std::size_t i = 0; i < n_in; ++i) {
        const double xi = x[i];
        const double* wi = w.data() + i * n_out;
        for (std::size_t o = 0; o < n_out; ++o) y[o] += xi * wi[o];
      }
    }
    return out;
  }

  Tensor dense_backward(const Tensor& in, const Tensor& grad_out) {
    const std::size_t n_in = spec_.dims[0], n_out = spec_.dims[1];
    auto& wt = params_[0];
    auto& bt = params_[1];
    wt.ensure_grad();
    bt.ensure_grad();
    auto dw = wt.grad();
    auto db = bt.grad();
    const auto& w = wt.values();
    Tensor grad_in(in.shape());
    for (std::size_t r = 0; r < in.rows(); ++r) {
      auto x = in.row(r);
      auto g = grad_out.row(r);
      auto gi = grad_in.row(r);
      for (std::size_t o = 0; o < n_out; ++o) db[o] += g[o];
      for (std::size_t i = 0; i < n_in; ++i) {
        const double xi = x[i];
        const double* wi = w.data() + i * n_out;
        double* dwi = dw.data() + i * n_out;
        double acc = 0.0;
        for (std::size_t o = 0; o < n_out; ++o) {
          dwi[o] += xi * g[o];
          acc += g[o] * wi[o];
        }
        gi[i] = acc;
      }
    }
    return grad_in;
  }

  struct ConvGeometry {
    std::size_t batch, in_ch, out_ch, h, w, k, stride, pad, out_h, out_w;
  };

  ConvGeometry geometry(const Tensor& in, std::size_t index) const {
    const std::size_t in_ch = spec_.dims[0], k = spec_.dims[2], stride = spec_.dims[3], pad = spec_.dims[4];
    if (in.rank() != 4 || in.dim(1) != in_ch) {
      throw DimensionError(where(index) + ": expected input [B x " + std::to_string(in_ch) + " x H x W], got " +
                           shape_string(in.shape()));
    }
    const std::size_t h = in.dim(2), w = in.dim(3);
    if (h + 2 * pad < k || w + 2 * pad < k) {
      throw DimensionError(where(index) + ": kernel larger than padded input " + shape_string(in.shape()));
    }
    return {in.dim(0), in_ch, spec_.dims[1], h, w, k, stride, pad, (h + 2 * pad - k) / stride + 1,
            (w + 2 * pad - k) / stride + 1};
  }

  Tensor conv_forward(const Tensor& in, std::size_t index) const {
    const auto g = geometry(in, index);
    const auto& w = params_[0].values();
    const auto& b = params_[1].values();
    Tensor out(Shape{g.batch, g.out_ch, g.out_h, g.out_w});
    auto& o = out.values();
    const auto& x = in.values();
    for (std::size_t n = 0; n < g.batch; ++n) {
      for (std::size_t oc = 0; oc < g.out_ch; ++oc) {
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            double acc = b[oc];
            for (std::size_t ic = 0; ic < g.in_ch; ++ic) {
              for (std::size_t ky = 0; ky < g.k; ++ky) {
                const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - static_cast<std::ptrdiff_t>(g.pad);
                if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) continue;
                for (std::size_t kx = 0; kx < g.k; ++kx) {
                  const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) - static_cast<std::ptrdiff_t>(g.pad);
                  if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.w)) continue;
                  acc += w[((oc * g.in_ch + ic) * g.k + ky) * g.k + kx] *
                         x[((n * g.in_ch + ic) * g.h + static_cast<std::size_t>(iy)) * g.w + static_cast<std::size_t>(ix)];
                }
              }
            }
            o[((n * g.out_ch + oc) * g.out_h + oy) * g.out_w + ox] = acc;
          }
        }
      }
    }
    return out;
  }

  Tensor conv_backward(const Tensor& in, const Tensor& grad_out) {
    const auto g = geometry(in, 0);
    auto& wt = params_[0];
    auto& bt = params_[1];
    wt.ensure_grad();
    bt.ensure_grad();
    auto dw = wt.grad();
    auto db = bt.grad();
    const auto& w = wt.values();
    const auto& x = in.values();
    const auto& go = grad_out.values();
    Tensor grad_in(in.shape());
    auto& gi = grad_in.values();
    for (std::size_t n = 0; n < g.batch; ++n) {
      for (std::size_t oc = 0; oc < g.out_ch; ++oc) {
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            const double gv = go[((n * g.out_ch + oc) * g.out_h + oy) * g.out_w + ox];
            db[oc] += gv;
            for (std::size_t ic = 0; ic < g.in_ch; ++ic) {
              for (std::size_t ky = 0; ky < g.k; ++ky) {
                const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - static_cast<std::ptrdiff_t>(g.pad);
                if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) continue;
                for (std::size_t kx = 0; kx < g.k; ++kx) {
                  const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) - static_cast<std::ptrdiff_t>(g.pad);
                  if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.w)) continue;
                  const std::size_t wi = ((oc * g.in_ch + ic) * g.k + ky) * g.k + kx;
                  const std::size_t xi =
                      ((n * g.in_ch + ic) * g.h + static_cast<std::size_t>(iy)) * g.w + static_cast<std::size_t>(ix);
                  dw[wi] += gv * x[xi];
                  gi[xi] += gv * w[wi];
                }
              }
            }
          }
        }
      }
    }
    return grad_in;
  }

  LayerSpec spec_;
  std::vector<Tensor> params_;
};

/// Feed-forward softmax classifier f(x; theta).
class Network {
 public:
  Network() = default;

  Network(std::vector<LayerSpec> specs, std::uint64_t seed) : seed_(seed) {
    build(std::move(specs));
    Rng rng(seed);
    for (auto& layer : layers_) layer.initialize(rng);
  }

  /// Rebuilds a network from descriptors and explicit parameter values
  /// (checkpoint path). Empty `values` leaves every parameter at zero.
  static Network from_parameters(std::vector<LayerSpec> specs, const std::vector<std::vector<double>>& values,
                                 std::uint64_t seed = 0) {
    Network net;
    net.seed_ = seed;
    net.build(std::move(specs));
    auto params = net.parameters();
    if (values.empty()) return net;
    if (params.size() != values.size()) throw FormatError("parameter tensor count mismatch");
    for (std::size_t i = 0; i < params.size(); ++i) {
      if (params[i]->size() != values[i].size()) throw FormatError("parameter length mismatch at tensor " + std::to_string(i));
      params[i]->values() = values[i];
    }
    return net;
  }

  const std::vector<LayerSpec>& specs() const noexcept { return specs_; }
  std::uint64_t seed() const noexcept { return seed_; }
  std::size_t num_classes() const noexcept { return classes_; }
  std::size_t layer_count() const noexcept { return layers_.size(); }

  /// Forward pass that caches every activation for a following backward().
  Tensor forward(const Tensor& batch) {
    cache_.clear();
    cache_.reserve(layers_.size() + 1);
    cache_.push_back(batch);
    for (std::size_t i = 0; i < layers_.size(); ++i) cache_.push_back(layers_[i].forward(cache_.back(), i));
    return cache_.back();
  }

  /// Forward pass without caching; safe to call concurrently.
  Tensor predict(const Tensor& batch) const {
    Tensor act = batch;
    for (std::size_t i = 0; i < layers_.size(); ++i) act = layers_[i].forward(act, i);
    return act;
  }

  /// Backpropagates d loss / d output through the cached pass; gradients accumulate.
  void backward(const Tensor& grad_output) {
    if (cache_.size() != layers_.size() + 1) throw StateError("backward() called without a preceding forward()");
    if (grad_output.shape() != cache_.back().shape()) {
      throw DimensionError("output gradient shape " + shape_string(grad_output.shape()) + " does not match output " +
                           shape_string(cache_.back().shape()));
    }
    Tensor g = grad_output;
    for (std::size_t i = layers_.size(); i-- > 0;) g = layers_[i].backward(cache_[i], cache_[i + 1], g);
    cache_.clear();
  }

  std::vector<Tensor*> parameters() {
    std::vector<Tensor*> out;
    for (auto& layer : layers_)
      for (auto& p : layer.params()) out.push_back(&p);
    return out;
  }

  std::vector<const Tensor*> parameters() const {
    std::vector<const Tensor*> out;
    for (const auto& layer : layers_)
      for (const auto& p : layer.params()) out.push_back(&p);
    return out;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto* p : parameters()) n += p->size();
    return n;
  }

  void zero_grad() {
    for (auto* p : parameters()) p->zero_grad();
  }

  /// Parameter values only; used for bit-identity comparisons.
  std::vector<std::vector<double>> parameter_values() const {
    std::vector<std::vector<double>> out;
    for (const auto* p : parameters()) out.push_back(p->values());
    return out;
  }

 private:
  void build(std::vector<LayerSpec> specs) {
    if (specs.empty() || specs.back().kind != LayerKind::Softmax) {
      throw ParameterError("network must end with a Softmax layer");
    }
    for (std::size_t i = 0; i + 1 < specs.size(); ++i) {
      if (specs[i].kind == LayerKind::Softmax) throw ParameterError("Softmax is only allowed as the terminal layer");
    }
    classes_ = 0;
    for (const auto& s : specs) {
      if (s.kind == LayerKind::Dense) classes_ = s.dims.at(1);
    }
    if (classes_ < 2) throw ParameterError("network needs a Dense layer with at least 2 outputs before Softmax");
    specs_ = std::move(specs);
    layers_.clear();
    for (const auto& s : specs_) layers_.emplace_back(s);
  }

  std::vector<LayerSpec> specs_;
  std::vector<Layer> layers_;
  std::vector<Tensor> cache_;
  std::uint64_t seed_ = 0;
  std::size_t classes_ = 0;
};

}  // namespace noisylab
