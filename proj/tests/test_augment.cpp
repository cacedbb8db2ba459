#include <cmath>
#include <set>

#include "catch_amalgamated.hpp"
#include "noisylab/noisylab.hpp"

using namespace noisylab;

namespace {

Tensor random_image(std::size_t c, std::size_t h, std::size_t w, std::uint64_t seed) {
  Tensor img = detail::random_batch({c, h, w}, seed);
  // Shift away from zero so padded pixels can never be confused with content.
  for (double& v : img.values()) v = 10.0 + std::abs(v);
  return img;
}

// Every 32x32 window of the zero-padded image, plain and mirrored.
bool in_crop_set(const Tensor& img, const Tensor& out, std::size_t pad) {
  const std::size_t ch = img.dim(0), h = img.dim(1), w = img.dim(2);
  auto padded = [&](std::size_t c, std::ptrdiff_t y, std::ptrdiff_t x) {
    if (y < 0 || x < 0 || y >= static_cast<std::ptrdiff_t>(h) || x >= static_cast<std::ptrdiff_t>(w)) return 0.0;
    return img[(c * h + static_cast<std::size_t>(y)) * w + static_cast<std::size_t>(x)];
  };
  for (std::size_t oy = 0; oy <= 2 * pad; ++oy) {
    for (std::size_t ox = 0; ox <= 2 * pad; ++ox) {
      for (bool mirror : {false, true}) {
        bool same = true;
        for (std::size_t c = 0; c < ch && same; ++c)
          for (std::size_t y = 0; y < h && same; ++y)
            for (std::size_t x = 0; x < w && same; ++x) {
              const std::size_t sx = mirror ? w - 1 - x : x;
              const double want = padded(c, static_cast<std::ptrdiff_t>(y + oy) - static_cast<std::ptrdiff_t>(pad),
                                         static_cast<std::ptrdiff_t>(sx + ox) - static_cast<std::ptrdiff_t>(pad));
              same = out[(c * h + y) * w + x] == want;
            }
        if (same) return true;
      }
    }
  }
  return false;
}

double dist(const Tensor& a, const Tensor& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

}  // namespace

TEST_CASE("identity policy is bit exact", "[augment]") {
  Rng rng(1);
  const Tensor x = detail::random_batch({5}, 3);
  CHECK(augment_one(IdentityAugment{}, x, rng) == x);
  const auto pair = augment_pair(IdentityAugment{}, x, 2, rng, 17);
  CHECK(pair.x_prime == x);
  CHECK(pair.x_double_prime == x);
  CHECK(pair.label == 2);
  CHECK(pair.source_index == 17);
}

TEST_CASE("zero-radius jitter is the identity", "[augment]") {
  Rng rng(1);
  const Tensor x = detail::random_batch({8}, 4);
  CHECK(augment_one(VectorJitter{0.0, JitterDistribution::UniformBall}, x, rng) == x);
  CHECK(augment_one(VectorJitter{0.0, JitterDistribution::Gaussian}, x, rng) == x);
}

TEST_CASE("image crops come from the enumerated crop and flip set", "[augment][image]") {
  const Tensor img = random_image(3, 32, 32, 8);
  Rng rng(5);
  std::size_t mirrored_or_shifted = 0;
  for (int k = 0; k < 40; ++k) {
    const Tensor out = augment_one(ImageStandard{4, 0.5}, img, rng);
    REQUIRE(out.shape() == img.shape());
    REQUIRE(in_crop_set(img, out, 4));
    mirrored_or_shifted += out == img ? 0 : 1;
  }
  CHECK(mirrored_or_shifted > 0);
}

TEST_CASE("image policy rejects non-image samples", "[augment][image]") {
  Rng rng(1);
  CHECK_THROWS_AS(augment_one(ImageStandard{}, detail::random_batch({12}, 1), rng), DimensionError);
}

TEST_CASE("paired image views rarely collide", "[augment][image][property]") {
  const Tensor img = random_image(1, 32, 32, 9);
  Rng rng(77);
  int collisions = 0;
  const int draws = 2000;
  for (int k = 0; k < draws; ++k) {
    const auto p = augment_pair(ImageStandard{4, 0.5}, img, 0, rng);
    collisions += p.x_prime == p.x_double_prime ? 1 : 0;
  }
  CHECK(static_cast<double>(collisions) / draws < 0.01);
}

TEST_CASE("uniform-ball jitter stays within the radius", "[augment][jitter][property]") {
  const Tensor x = detail::random_batch({2}, 12);
  const double radius = 0.35;
  Rng rng(3);
  double max_seen = 0.0;
  for (int k = 0; k < 10000; ++k) {
    const auto p = augment_pair(VectorJitter{radius, JitterDistribution::UniformBall}, x, 1, rng);
    REQUIRE(dist(p.x_prime, x) <= radius);
    REQUIRE(dist(p.x_double_prime, x) <= radius);
    max_seen = std::max(max_seen, dist(p.x_prime, x));
  }
  CHECK(max_seen > 0.9 * radius);
}

TEST_CASE("gaussian jitter has the configured spread", "[augment][jitter]") {
  const Tensor x(Shape{1}, 0.0);
  Rng rng(4);
  double sq = 0.0;
  const int n = 20000;
  for (int k = 0; k < n; ++k) {
    const double v = augment_one(VectorJitter{0.5, JitterDistribution::Gaussian}, x, rng)[0];
    sq += v * v;
  }
  CHECK(std::sqrt(sq / n) == Catch::Approx(0.5).epsilon(0.03));
}

TEST_CASE("augmentation is deterministic per seed and preserves shape and label", "[augment][determinism]") {
  const AugmentPolicy policies[] = {IdentityAugment{}, ImageStandard{2, 0.5},
                                    VectorJitter{0.2, JitterDistribution::UniformBall}};
  for (const auto& policy : policies) {
    const Tensor x = std::holds_alternative<ImageStandard>(policy) ? random_image(2, 6, 6, 1) : detail::random_batch({6}, 1);
    Rng a(123), b(123);
    const auto pa = augment_pair(policy, x, 3, a);
    const auto pb = augment_pair(policy, x, 3, b);
    CHECK(pa.x_prime == pb.x_prime);
    CHECK(pa.x_double_prime == pb.x_double_prime);
    CHECK(pa.x_prime.shape() == x.shape());
    CHECK(pa.label == 3);
    if (!std::holds_alternative<IdentityAugment>(policy)) CHECK_FALSE(pa.x_prime == pa.x_double_prime);
  }
}
