#include "lct/rng.hpp"

#include <cmath>
#include <numbers>

namespace lct {
namespace {

constexpr std::uint64_t kGamma = 0x9E3779B97F4A7C15ULL;

std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

}  // namespace

std::uint64_t Rng::next_u64() {
  const std::uint64_t key = mix64(state_.seed ^ 0x6A09E667F3BCC909ULL);
  return mix64(key + (++state_.counter) * kGamma);
}

double Rng::uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

double Rng::normal(double mu, double sigma) {
  const double u1 = 1.0 - uniform();  // (0, 1]
  const double u2 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  return mu + sigma * r * std::cos(2.0 * std::numbers::pi * u2);
}

std::uint64_t Rng::below(std::uint64_t bound) {
  if (bound <= 1) return 0;
  // Rejection keeps the result unbiased.
  const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % bound);
  std::uint64_t x = next_u64();
  while (x >= limit) x = next_u64();
  return x % bound;
}

Rng Rng::fork(std::uint64_t stream) const {
  return Rng(mix64(state_.seed * kGamma + mix64(stream + 0x3C6EF372FE94F82BULL)));
}

template <typename T>
Tensor<T> rng_normal(Rng& rng, const Shape& shape, double mu, double sigma) {
  if (sigma < 0) throw ConfigError("rng_normal: sigma must be non-negative");
  Tensor<T> out(shape);
  for (auto& v : out.values()) v = static_cast<T>(rng.normal(mu, sigma));
  return out;
}

template <typename T>
Tensor<T> rng_uniform(Rng& rng, const Shape& shape, double lo, double hi) {
  Tensor<T> out(shape);
  for (auto& v : out.values()) v = static_cast<T>(rng.uniform(lo, hi));
  return out;
}

template Tensor<float> rng_normal(Rng&, const Shape&, double, double);
template Tensor<double> rng_normal(Rng&, const Shape&, double, double);
template Tensor<float> rng_uniform(Rng&, const Shape&, double, double);
template Tensor<double> rng_uniform(Rng&, const Shape&, double, double);

}  // namespace lct
