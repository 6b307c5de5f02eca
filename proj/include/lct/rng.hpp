#pragma once

#include <cstdint>

#include "lct/tensor.hpp"

namespace lct {

// Counter-based generator: draw i is a pure function of (seed, i), so a
// stream is reproducible from its two words alone on any platform.
class Rng {
 public:
  struct State {
    std::uint64_t seed = 0;
    std::uint64_t counter = 0;
    bool operator==(const State&) const = default;
  };

  explicit Rng(std::uint64_t seed = 0) : state_{seed, 0} {}
  explicit Rng(State state) : state_(state) {}

  std::uint64_t next_u64();
  // Uniform in [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  // Box-Muller; consumes two draws per sample.
  double normal(double mu = 0.0, double sigma = 1.0);
  // Uniform integer in [0, bound).
  std::uint64_t below(std::uint64_t bound);

  // Independent stream keyed by this generator's seed and `stream`.
  Rng fork(std::uint64_t stream) const;

  const State& state() const { return state_; }

 private:
  State state_;
};

template <typename T>
Tensor<T> rng_normal(Rng& rng, const Shape& shape, double mu, double sigma);

template <typename T>
Tensor<T> rng_uniform(Rng& rng, const Shape& shape, double lo, double hi);

}  // namespace lct
