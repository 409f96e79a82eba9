#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <vector>

namespace paircam {

// Counter-based generator: output i of a stream is a pure hash of
// (key, i), so any frame or pixel can be generated independently of
// ordering or thread assignment. The mix is the SplitMix64 finalizer.
namespace rng_detail {

inline constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ull;

inline std::uint64_t mix64(std::uint64_t z) {
  z ^= z >> 30;
  z *= 0xBF58476D1CE4E5B9ull;
  z ^= z >> 27;
  z *= 0x94D049BB133111EBull;
  z ^= z >> 31;
  return z;
}

} // namespace rng_detail

class RngStream {
public:
  explicit RngStream(std::uint64_t key) : key_(key) {}

  // Stream key for a (seed, frame, lane) triple. Lanes separate the
  // independent random inputs of one frame (count, positions, thinning,
  // per-pixel readout) so adding draws to one lane never shifts another.
  static RngStream for_frame(std::uint64_t seed, std::uint64_t frame, std::uint64_t lane) {
    using rng_detail::kGolden;
    using rng_detail::mix64;
    std::uint64_t k = mix64(seed + kGolden);
    k = mix64(k ^ (frame + kGolden));
    k = mix64(k ^ (lane + kGolden));
    return RngStream(k);
  }

  std::uint64_t next_u64() {
    return rng_detail::mix64(key_ + (++counter_) * rng_detail::kGolden);
  }

  // Uniform in [0, 1), 53-bit resolution.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  bool bernoulli(double p) { return uniform() < p; }

  // Uniform integer in [0, n), bias removed by rejection.
  std::uint64_t uniform_int(std::uint64_t n) {
    const std::uint64_t limit = n * (UINT64_MAX / n);
    std::uint64_t v = next_u64();
    while (v >= limit) v = next_u64();
    return v % n;
  }

  double exponential(double mean) { return -std::log(1.0 - uniform()) * mean; }

  // Box-Muller, non-cached: consumes two uniforms per variate so the
  // draw count is a fixed function of the call sequence.
  double gaussian() {
    const double u1 = 1.0 - uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  double gaussian(double mean, double stddev) { return mean + stddev * gaussian(); }

  // Knuth multiplication; means above 30 use Poisson additivity.
  std::uint64_t poisson(double mean) {
    std::uint64_t total = 0;
    while (mean > 30.0) {
      const double half = mean * 0.5;
      total += poisson(half);
      mean -= half;
    }
    if (mean <= 0.0) return total;
    const double threshold = std::exp(-mean);
    double prod = uniform();
    std::uint64_t k = 0;
    while (prod > threshold) {
      ++k;
      prod *= uniform();
    }
    return total + k;
  }

  // CDF inversion via the ratio recurrence; expected O(n*p) work.
  std::uint64_t binomial(std::uint64_t n, double p) {
    if (p <= 0.0 || n == 0) return 0;
    if (p >= 1.0) return n;
    const double q = 1.0 - p;
    const double ratio = p / q;
    double pmf = std::pow(q, static_cast<double>(n));
    double cdf = pmf;
    const double u = uniform();
    std::uint64_t k = 0;
    while (u > cdf && k < n) {
      pmf *= ratio * static_cast<double>(n - k) / static_cast<double>(k + 1);
      ++k;
      cdf += pmf;
    }
    return k;
  }

  // Erlang(shape, scale): sum of exponentials for small shapes, the
  // Marsaglia-Tsang gamma sampler above (shape is integer >= 1).
  double erlang(std::uint64_t shape, double scale) {
    if (shape == 0) return 0.0;
    if (shape <= 16) {
      double sum = 0.0;
      for (std::uint64_t i = 0; i < shape; ++i) sum += exponential(1.0);
      return sum * scale;
    }
    return gamma_ge1(static_cast<double>(shape)) * scale;
  }

private:
  double gamma_ge1(double alpha) {
    const double d = alpha - 1.0 / 3.0;
    const double c = 1.0 / (3.0 * std::sqrt(d));
    for (;;) {
      double x;
      double v;
      do {
        x = gaussian();
        v = 1.0 + c * x;
      } while (v <= 0.0);
      v = v * v * v;
      const double u = uniform();
      if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
      if (std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
    }
  }

  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

// Lane assignments within one frame.
inline constexpr std::uint64_t kLanePairCount = 0;
inline constexpr std::uint64_t kLanePositions = 1;
inline constexpr std::uint64_t kLaneThinning = 2;
inline constexpr std::uint64_t kLaneReadoutBase = 3; // lane 3 + p for pixel p

} // namespace paircam
