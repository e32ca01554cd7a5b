#pragma once

// Exact rejection sampler for the density proportional to
//   exp(p x - e^x - beta e^{-x}),   beta > 0,
// which is the law of log(theta) when theta is generalized inverse Gaussian
// with density proportional to theta^{p-1} exp(-theta - beta/theta). The log
// density is strictly concave, so a flat-top envelope with exponential tails
// at the two points where it has dropped by one unit below its mode is valid.

#include <cmath>
#include <limits>

#include "nlmf/errors.hpp"
#include "nlmf/rng.hpp"

namespace nlmf {

struct LogGig {
  double p;
  double beta;

  double logf(double x) const { return p * x - std::exp(x) - beta * std::exp(-x); }
  double dlogf(double x) const { return p - std::exp(x) + beta * std::exp(-x); }
  double d2logf(double x) const { return -std::exp(x) - beta * std::exp(-x); }

  double mode() const {
    // e^x solves z^2 - p z - beta = 0; pick the cancellation-free branch.
    const double r = std::sqrt(p * p + 4.0 * beta);
    const double z = p >= 0.0 ? 0.5 * (p + r) : 2.0 * beta / (r - p);
    return std::log(z);
  }
};

namespace detail {

/// Point on the given side of the mode where logf = target (logf(m) > target).
inline double level_crossing(const LogGig& f, double m, double target, double dir) {
  double step = 1.0 / std::sqrt(-f.d2logf(m));
  double inner = m;
  double outer = m + dir * step;
  int guard = 0;
  while (f.logf(outer) > target) {
    inner = outer;
    step *= 2.0;
    outer = m + dir * step;
    if (++guard > 200) throw StateError("log-GIG envelope: bracket search failed");
  }
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (inner + outer);
    if (mid == inner || mid == outer) break;
    (f.logf(mid) > target ? inner : outer) = mid;
  }
  return 0.5 * (inner + outer);
}

}  // namespace detail

template <RandomSource R>
double sample_log_gig(const LogGig& f, R& rng) {
  if (!(f.beta > 0.0) || !std::isfinite(f.beta) || !std::isfinite(f.p))
    throw DomainError("sample_log_gig: need finite p and beta > 0");
  const double m = f.mode();
  const double top = f.logf(m);
  const double xl = detail::level_crossing(f, m, top - 1.0, -1.0);
  const double xr = detail::level_crossing(f, m, top - 1.0, +1.0);
  const double sl = f.dlogf(xl);   // > 0
  const double sr = -f.dlogf(xr);  // > 0
  const double hl = f.logf(xl) - top;
  const double hr = f.logf(xr) - top;
  // envelope masses relative to exp(top)
  const double w_mid = xr - xl;
  const double w_left = std::exp(hl) / sl;
  const double w_right = std::exp(hr) / sr;
  const double total = w_mid + w_left + w_right;
  for (int tries = 0; tries < 100000; ++tries) {
    const double u = rng.uniform() * total;
    double x, env;
    if (u < w_mid) {
      x = xl + u / w_mid * (xr - xl);
      env = 0.0;
    } else if (u < w_mid + w_left) {
      const double e = -std::log(rng.uniform()) / sl;
      x = xl - e;
      env = hl - sl * e;
    } else {
      const double e = -std::log(rng.uniform()) / sr;
      x = xr + e;
      env = hr - sr * e;
    }
    if (std::log(rng.uniform()) <= f.logf(x) - top - env) return x;
  }
  throw StateError("sample_log_gig: rejection sampler did not accept");
}

}  // namespace nlmf
