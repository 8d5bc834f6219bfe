#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>
#include <utility>

namespace thzleaf {

/// SplitMix64 generator.
///
/// State update and output, all arithmetic modulo 2^64:
///
///     state <- state + 0x9E3779B97F4A7C15
///     z     <- state
///     z     <- (z xor (z >> 30)) * 0xBF58476D1CE4E5B9
///     z     <- (z xor (z >> 27)) * 0x94D049BB133111EB
///     out   <- z xor (z >> 31)
///
/// Every derived quantity (uniform doubles, bounded integers, normals,
/// shuffles) is defined below in terms of this output so that seeded
/// results do not depend on the standard library implementation.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : state_(seed) {}

  std::uint64_t next() {
    state_ += 0x9E3779B97F4A7C15ULL;
    return mix(state_);
  }

  /// Uniform in [0, 1): top 53 bits of the output times 2^-53.
  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n) by rejection on the low end of the 64-bit range.
  std::uint64_t below(std::uint64_t n) {
    const std::uint64_t limit = (~std::uint64_t{0}) - ((~std::uint64_t{0}) % n);
    std::uint64_t x = next();
    while (x >= limit) x = next();
    return x % n;
  }

  /// Standard normal via Box-Muller; one variate per call, the cosine branch.
  double normal() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  double normal(double mean, double sd) { return mean + sd * normal(); }

  /// exp(N(log(median), sigma_log^2))
  double lognormal(double median, double sigma_log) {
    return median * std::exp(sigma_log * normal());
  }

  /// Gamma(shape, 1) by Marsaglia-Tsang; shape < 1 via the u^(1/shape) boost.
  double gamma(double shape) {
    if (shape < 1.0) {
      double u = uniform();
      while (u <= 0.0) u = uniform();
      return gamma(shape + 1.0) * std::pow(u, 1.0 / shape);
    }
    const double d = shape - 1.0 / 3.0;
    const double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
      const double x = normal();
      double v = 1.0 + c * x;
      if (v <= 0.0) continue;
      v = v * v * v;
      double u = uniform();
      while (u <= 0.0) u = uniform();
      if (std::log(u) < 0.5 * x * x + d - d * v + d * std::log(v)) return d * v;
    }
  }

  /// Fisher-Yates, from the back.
  template <typename T>
  void shuffle(std::span<T> v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

  /// Independent generator for substream `id`, derived from the current state
  /// without advancing it.
  [[nodiscard]] Rng substream(std::uint64_t id) const { return Rng(derive_seed(state_, id)); }

  static std::uint64_t mix(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  /// seed' = mix(mix(seed) xor mix(id + 1))
  static std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t id) {
    return mix(mix(seed) ^ mix(id + 1));
  }

 private:
  std::uint64_t state_;
};

}  // namespace thzleaf
