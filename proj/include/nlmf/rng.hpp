#pragma once

// Random number generation with fully specified algorithms, so that chains are
// bit-reproducible across standard library implementations. The engine is
// std::mt19937_64 (specified by the standard); every distribution is written
// out here rather than taken from <random>.

#include <cmath>
#include <concepts>
#include <cstdint>
#include <limits>
#include <numbers>
#include <random>

#include "nlmf/errors.hpp"

namespace nlmf {

/// Anything the samplers can draw from. Tests substitute deterministic stubs.
template <class R>
concept RandomSource = requires(R& r, double a, double b) {
  { r.uniform() } -> std::convertible_to<double>;
  { r.normal() } -> std::convertible_to<double>;
  { r.gamma(a, b) } -> std::convertible_to<double>;
};

inline std::uint64_t splitmix64(std::uint64_t& x) {
  std::uint64_t z = (x += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : seed_(seed) {
    std::uint64_t s = seed;
    std::seed_seq seq{static_cast<std::uint32_t>(splitmix64(s)),
                      static_cast<std::uint32_t>(splitmix64(s)),
                      static_cast<std::uint32_t>(splitmix64(s)),
                      static_cast<std::uint32_t>(splitmix64(s))};
    engine_.seed(seq);
  }

  std::uint64_t seed() const { return seed_; }

  /// Independent stream derived from this generator's seed and an index.
  /// Depends only on (seed, stream), never on how many draws were taken.
  Rng substream(std::uint64_t stream) const {
    std::uint64_t s = seed_ ^ (0x632be59bd9b4e019ULL * (stream + 1));
    return Rng(splitmix64(s));
  }

  std::uint64_t bits() { return engine_(); }

  /// Uniform on the open interval (0, 1), 53 bits of resolution.
  double uniform() {
    for (;;) {
      const double u = static_cast<double>(engine_() >> 11) * 0x1.0p-53;
      if (u > 0.0) return u;
    }
  }

  /// Uniform integer in [0, n).
  std::uint64_t index(std::uint64_t n) {
    // Lemire-style rejection keeps the draw unbiased.
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                std::numeric_limits<std::uint64_t>::max() % n;
    for (;;) {
      const std::uint64_t x = engine_();
      if (x < limit) return x % n;
    }
  }

  /// Standard normal via the Marsaglia polar method.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u, v, s;
    do {
      u = 2.0 * uniform() - 1.0;
      v = 2.0 * uniform() - 1.0;
      s = u * u + v * v;
    } while (s >= 1.0 || s == 0.0);
    const double f = std::sqrt(-2.0 * std::log(s) / s);
    spare_ = v * f;
    has_spare_ = true;
    return u * f;
  }

  double normal(double mean, double sd) { return mean + sd * normal(); }

  double exponential() { return -std::log(uniform()); }

  /// log of a Ga(shape, 1) variate. Stable for very small shapes, where the
  /// variate itself underflows.
  double log_gamma1(double shape) {
    if (!(shape > 0.0) || !std::isfinite(shape))
      throw DomainError("gamma shape must be positive and finite");
    if (shape < 1.0) {
      // Ga(a) = Ga(a + 1) * U^(1/a)
      return std::log(marsaglia_tsang(shape + 1.0)) + std::log(uniform()) / shape;
    }
    return std::log(marsaglia_tsang(shape));
  }

  /// Gamma with shape/rate parameterization.
  double gamma(double shape, double rate) {
    if (!(rate > 0.0) || !std::isfinite(rate))
      throw DomainError("gamma rate must be positive and finite");
    if (shape >= 1.0) return marsaglia_tsang(shape) / rate;
    return std::exp(log_gamma1(shape)) / rate;
  }

  /// Beta(a, b) computed through log-gamma variates; may return exactly 0 for
  /// tiny a.
  double beta(double a, double b) {
    const double lx = log_gamma1(a);
    const double ly = log_gamma1(b);
    // x / (x + y) = 1 / (1 + exp(ly - lx))
    return 1.0 / (1.0 + std::exp(ly - lx));
  }

  /// logit of a Beta(a, b) draw; finite even when the draw underflows.
  double beta_logit(double a, double b) { return log_gamma1(a) - log_gamma1(b); }

 private:
  double marsaglia_tsang(double shape) {
    const double d = shape - 1.0 / 3.0;
    const double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
      double x, v;
      do {
        x = normal();
        v = 1.0 + c * x;
      } while (v <= 0.0);
      v = v * v * v;
      const double u = uniform();
      if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
      if (std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
    }
  }

  std::uint64_t seed_;
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

static_assert(RandomSource<Rng>);

}  // namespace nlmf
