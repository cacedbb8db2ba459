#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <type_traits>
#include <variant>
#include <vector>

#include "noisylab/error.hpp"
#include "noisylab/random.hpp"
#include "noisylab/tensor.hpp"

namespace noisylab {

struct IdentityAugment {};

/// Zero-pad by `pad` pixels, crop back to H x W at a uniform offset, then
/// mirror horizontally with probability flip_prob. Input is one C x H x W image.
struct ImageStandard {
  std::size_t pad = 4;
  double flip_prob = 0.5;
};

enum class JitterDistribution { UniformBall, Gaussian };

/// Additive noise on feature vectors: uniform in the ball of the given
/// radius, or gaussian with std = radius.
struct VectorJitter {
  double radius = 0.1;
  JitterDistribution distribution = JitterDistribution::UniformBall;
};

using AugmentPolicy = std::variant<IdentityAugment, ImageStandard, VectorJitter>;

inline std::string policy_name(const AugmentPolicy& policy) {
  return std::visit(
      [](const auto& p) -> std::string {
        using P = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<P, IdentityAugment>) return "identity";
        else if constexpr (std::is_same_v<P, ImageStandard>) return "image";
        else return "jitter";
      },
      policy);
}

struct AugmentedPair {
  Tensor x_prime;
  Tensor x_double_prime;
  int label = 0;
  std::size_t source_index = 0;
};

/// Augments one sample (given as a flat span with its per-sample shape) into `out`.
inline void augment_into(const AugmentPolicy& policy, std::span<const double> x, const Shape& sample_shape,
                         std::span<double> out, Rng& rng) {
  if (x.size() != out.size()) throw DimensionError("augment: output buffer size mismatch");
  std::visit(
      [&](const auto& p) {
        using P = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<P, IdentityAugment>) {
          std::copy(x.begin(), x.end(), out.begin());
        } else if constexpr (std::is_same_v<P, ImageStandard>) {
          if (sample_shape.size() != 3) {
            throw DimensionError("image augmentation needs a C x H x W sample, got " + shape_string(sample_shape));
          }
          const std::size_t ch = sample_shape[0], h = sample_shape[1], w = sample_shape[2];
          std::uniform_int_distribution<std::size_t> offset(0, 2 * p.pad);
          std::bernoulli_distribution flip(p.flip_prob);
          const std::size_t oy = offset(rng);
          const std::size_t ox = offset(rng);
          const bool mirror = flip(rng);
          for (std::size_t c = 0; c < ch; ++c) {
            for (std::size_t y = 0; y < h; ++y) {
              // Row y of the crop is row (y + oy - pad) of the original image.
              const auto sy = static_cast<std::ptrdiff_t>(y + oy) - static_cast<std::ptrdiff_t>(p.pad);
              for (std::size_t xx = 0; xx < w; ++xx) {
                const std::size_t cx = mirror ? w - 1 - xx : xx;
                const auto sx = static_cast<std::ptrdiff_t>(cx + ox) - static_cast<std::ptrdiff_t>(p.pad);
                double v = 0.0;
                if (sy >= 0 && sy < static_cast<std::ptrdiff_t>(h) && sx >= 0 && sx < static_cast<std::ptrdiff_t>(w)) {
                  v = x[(c * h + static_cast<std::size_t>(sy)) * w + static_cast<std::size_t>(sx)];
                }
                out[(c * h + y) * w + xx] = v;
              }
            }
          }
        } else {
          if (!(p.radius >= 0.0)) throw ParameterError("jitter radius must be nonnegative");
          std::copy(x.begin(), x.end(), out.begin());
          if (p.radius == 0.0) return;
          std::normal_distribution<double> normal(0.0, 1.0);
          if (p.distribution == JitterDistribution::Gaussian) {
            for (double& v : out) v += p.radius * normal(rng);
            return;
          }
          // Uniform in the d-ball: gaussian direction, radius r * u^(1/d).
          std::vector<double> dir(x.size());
          double norm = 0.0;
          for (double& v : dir) {
            v = normal(rng);
            norm += v * v;
          }
          norm = std::sqrt(norm);
          std::uniform_real_distribution<double> unif(0.0, 1.0);
          const double r = p.radius * std::pow(unif(rng), 1.0 / static_cast<double>(x.size()));
          if (norm == 0.0) return;
          for (std::size_t i = 0; i < out.size(); ++i) out[i] += r * dir[i] / norm;
        }
      },
      policy);
}

inline Tensor augment_one(const AugmentPolicy& policy, const Tensor& x, Rng& rng) {
  Tensor out(x.shape());
  augment_into(policy, x.data(), x.shape(), out.data(), rng);
  return out;
}

/// Two independent draws from the same policy and generator.
inline AugmentedPair augment_pair(const AugmentPolicy& policy, const Tensor& x, int label, Rng& rng,
                                  std::size_t source_index = 0) {
  AugmentedPair pair;
  pair.x_prime = augment_one(policy, x, rng);
  pair.x_double_prime = augment_one(policy, x, rng);
  pair.label = label;
  pair.source_index = source_index;
  return pair;
}

}  // namespace noisylab
