#pragma once

// Hamiltonian Monte Carlo with identity mass matrix, a fixed number of
// leapfrog steps, and dual-averaging step-size adaptation.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <concepts>
#include <limits>

#include "nlmf/errors.hpp"
#include "nlmf/rng.hpp"

namespace nlmf {

/// Callable (x, grad_out) -> log density; grad_out is resized by the callee.
template <class F>
concept LogDensity = requires(F& f, const Eigen::VectorXd& x, Eigen::VectorXd& g) {
  { f(x, g) } -> std::convertible_to<double>;
};

/// Hoffman & Gelman dual averaging for the leapfrog step size.
class DualAveraging {
 public:
  explicit DualAveraging(double eps0 = 0.05, double target = 0.75) : target_(target) { reset(eps0); }

  void reset(double eps0) {
    mu_ = std::log(10.0 * eps0);
    log_eps_ = std::log(eps0);
    log_eps_bar_ = 0.0;
    hbar_ = 0.0;
    t_ = 0;
  }

  double step() const { return std::exp(log_eps_); }
  double final_step() const { return t_ > 0 ? std::exp(log_eps_bar_) : step(); }

  void update(double accept_prob) {
    ++t_;
    const double t = static_cast<double>(t_);
    const double w = 1.0 / (t + t0_);
    hbar_ = (1.0 - w) * hbar_ + w * (target_ - accept_prob);
    log_eps_ = mu_ - std::sqrt(t) / gamma_ * hbar_;
    log_eps_ = std::clamp(log_eps_, -20.0, 2.0);
    const double eta = std::pow(t, -kappa_);
    log_eps_bar_ = eta * log_eps_ + (1.0 - eta) * log_eps_bar_;
  }

  /// Freeze at the averaged iterate.
  void freeze() { log_eps_ = std::log(final_step()); }

 private:
  double target_;
  double mu_ = 0.0, log_eps_ = 0.0, log_eps_bar_ = 0.0, hbar_ = 0.0;
  long t_ = 0;
  static constexpr double gamma_ = 0.05, t0_ = 10.0, kappa_ = 0.75;
};

struct HmcResult {
  bool accepted = false;
  double accept_prob = 0.0;
  double energy_error = 0.0;  // H(end) - H(start)
  bool divergent = false;     // non-finite density or gradient along the path
};

/// One HMC transition. x is updated in place when the proposal is accepted.
template <LogDensity F, RandomSource R>
HmcResult hmc_step(F& logp, Eigen::VectorXd& x, double eps, int n_leapfrog, R& rng) {
  HmcResult res;
  Eigen::VectorXd g;
  const double lp0 = logp(x, g);
  if (!std::isfinite(lp0) || !g.allFinite()) throw StateError("hmc_step: initial state has non-finite density");
  Eigen::VectorXd p(x.size());
  for (Eigen::Index i = 0; i < p.size(); ++i) p[i] = rng.normal();
  const double h0 = -lp0 + 0.5 * p.squaredNorm();

  Eigen::VectorXd xn = x;
  double lp = lp0;
  p += 0.5 * eps * g;
  for (int l = 0; l < n_leapfrog; ++l) {
    xn += eps * p;
    lp = logp(xn, g);
    if (!std::isfinite(lp) || !g.allFinite()) {
      res.divergent = true;
      break;
    }
    p += (l + 1 == n_leapfrog ? 0.5 : 1.0) * eps * g;
  }
  if (res.divergent) {
    res.energy_error = std::numeric_limits<double>::infinity();
    return res;
  }
  const double h1 = -lp + 0.5 * p.squaredNorm();
  res.energy_error = h1 - h0;
  res.accept_prob = std::isfinite(res.energy_error) ? std::min(1.0, std::exp(-res.energy_error)) : 0.0;
  if (rng.uniform() < res.accept_prob) {
    x = xn;
    res.accepted = true;
  }
  return res;
}

}  // namespace nlmf
