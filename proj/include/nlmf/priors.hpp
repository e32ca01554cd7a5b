#pragma once

// Priors: multiplicative gamma process and log-CAR for the loadings, gamma
// scores and Beta jumps for the truncated CoRM, Normal-inverse-Gamma base.

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include <cmath>
#include <numbers>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "nlmf/errors.hpp"
#include "nlmf/measures.hpp"
#include "nlmf/rng.hpp"

namespace nlmf {

// ---------------------------------------------------------------------------
// Multiplicative gamma process

struct MgpParams {
  double a1 = 3.0;
  double a2 = 5.0;
  double nu = 6.0;

  void validate() const {
    if (!(a1 > 0 && a2 > 0 && nu > 0)) throw InputError("MGP parameters must be positive");
  }
};

/// MGP hyperparameters plus the per-column state theta_1..theta_H and the
/// per-entry phi_jh. tau_h = prod_{l<=h} theta_l is formed in log space.
struct MgpHyper {
  MgpParams params;
  VectorXd theta;  // length H
  MatrixXd phi;    // g x H

  Eigen::Index H() const { return theta.size(); }

  VectorXd log_tau() const {
    VectorXd lt(theta.size());
    double acc = 0.0;
    for (Eigen::Index h = 0; h < theta.size(); ++h) {
      acc += std::log(theta[h]);
      lt[h] = acc;
    }
    return lt;
  }

  VectorXd tau() const { return log_tau().array().exp(); }

  /// lambda_jh = 1 / (phi_jh tau_h)
  MatrixXd lambda() const {
    const VectorXd lt = log_tau();
    MatrixXd L(phi.rows(), phi.cols());
    for (Eigen::Index j = 0; j < phi.rows(); ++j)
      for (Eigen::Index h = 0; h < phi.cols(); ++h) L(j, h) = std::exp(-std::log(phi(j, h)) - lt[h]);
    return L;
  }
};

template <RandomSource R>
MgpHyper sample_mgp_hyper(const MgpParams& p, Eigen::Index g, Eigen::Index H, R& rng) {
  p.validate();
  if (g < 1 || H < 1) throw InputError("sample_mgp_hyper: need g, H >= 1");
  MgpHyper out{p, VectorXd(H), MatrixXd(g, H)};
  for (Eigen::Index h = 0; h < H; ++h) out.theta[h] = rng.gamma(h == 0 ? p.a1 : p.a2, 1.0);
  for (Eigen::Index h = 0; h < H; ++h)
    for (Eigen::Index j = 0; j < g; ++j) out.phi(j, h) = rng.gamma(p.nu / 2.0, p.nu / 2.0);
  return out;
}

template <RandomSource R>
LoadingsMatrix sample_mgp_lambda(const MgpParams& p, Eigen::Index g, Eigen::Index H, R& rng) {
  return LoadingsMatrix(sample_mgp_hyper(p, g, H, rng).lambda());
}

/// E[lambda_jh] = (a1-1)^{-1} (a2-1)^{-(h-1)} nu/(nu-2), h counted from 1.
inline double mgp_lambda_mean(const MgpParams& p, int h) {
  if (!(p.a1 > 1 && p.a2 > 1 && p.nu > 2)) throw DomainError("mgp_lambda_mean: needs a1 > 1, a2 > 1, nu > 2");
  return 1.0 / (p.a1 - 1.0) * std::pow(p.a2 - 1.0, -(h - 1)) * p.nu / (p.nu - 2.0);
}

/// log density of lambda_jh given tau_h (inverse gamma with shape nu/2 and
/// rate nu/(2 tau_h)), taken on x = log lambda so it includes the Jacobian.
inline double mgp_log_lambda_logpdf(double x, double tau_h, double nu) {
  const double a = nu / 2.0;
  const double b = nu / (2.0 * tau_h);
  return a * std::log(b) - std::lgamma(a) - a * x - b * std::exp(-x);
}

inline double mgp_log_lambda_grad(double x, double tau_h, double nu) {
  return -nu / 2.0 + nu / (2.0 * tau_h) * std::exp(-x);
}

// ---------------------------------------------------------------------------
// CAR prior on log columns

using Edge = std::pair<int, int>;

inline Eigen::MatrixXd adjacency_from_edges(int g, std::span<const Edge> edges) {
  if (g < 1) throw InputError("adjacency: need g >= 1");
  MatrixXd W = MatrixXd::Zero(g, g);
  for (const auto& [i, j] : edges) {
    if (i < 0 || j < 0 || i >= g || j >= g) throw InputError("adjacency: node index out of range");
    if (i == j) throw InputError("adjacency: self loop at node " + std::to_string(i));
    W(i, j) = 1.0;
  }
  if (!W.isApprox(W.transpose(), 0.0)) throw InputError("adjacency: edge list is not symmetric");
  return W;
}

class CarPrior {
 public:
  CarPrior(MatrixXd W, double rho, double tau, VectorXd mu) : W_(std::move(W)), rho_(rho), tau_(tau), mu_(std::move(mu)) {
    const auto g = W_.rows();
    if (W_.cols() != g || mu_.size() != g) throw InputError("CarPrior: dimension mismatch");
    if (!(rho_ > 0.0 && rho_ < 1.0)) throw InputError("CarPrior: rho must lie in (0,1)");
    if (!(tau_ > 0.0)) throw InputError("CarPrior: tau must be positive");
    for (Eigen::Index i = 0; i < g; ++i) {
      if (W_(i, i) != 0.0) throw InputError("CarPrior: W must have zero diagonal");
      for (Eigen::Index j = 0; j < g; ++j)
        if (W_(i, j) != W_(j, i) || (W_(i, j) != 0.0 && W_(i, j) != 1.0))
          throw InputError("CarPrior: W must be symmetric 0/1");
    }
    const VectorXd deg = W_.rowwise().sum();
    prec_ = tau_ * (MatrixXd(deg.asDiagonal()) - rho_ * W_);
    llt_.compute(prec_);
    if (llt_.info() != Eigen::Success) throw InputError("CarPrior: precision tau(F - rho W) is not positive definite");
    double logdet = 0.0;
    for (Eigen::Index i = 0; i < g; ++i) {
      const double d = llt_.matrixLLT()(i, i);
      if (!(d > 0.0)) throw InputError("CarPrior: precision is not positive definite");
      logdet += 2.0 * std::log(d);
    }
    log_norm_ = 0.5 * logdet - 0.5 * static_cast<double>(g) * std::log(2.0 * std::numbers::pi);
  }

  /// Default mean log(1/H) in every coordinate.
  static CarPrior with_uniform_mean(MatrixXd W, double rho, double tau, int H) {
    const auto g = W.rows();
    return CarPrior(std::move(W), rho, tau, VectorXd::Constant(g, std::log(1.0 / H)));
  }

  Eigen::Index g() const { return W_.rows(); }
  const MatrixXd& precision() const { return prec_; }
  const VectorXd& mean() const { return mu_; }
  double rho() const { return rho_; }
  double tau() const { return tau_; }
  const MatrixXd& adjacency() const { return W_; }

  /// -0.5 (x - mu)^T P (x - mu)
  double quadratic_term(const Eigen::Ref<const VectorXd>& x) const {
    check(x);
    const VectorXd d = x - mu_;
    return -0.5 * d.dot(prec_ * d);
  }

  double log_density(const Eigen::Ref<const VectorXd>& x) const { return log_norm_ + quadratic_term(x); }

  VectorXd gradient(const Eigen::Ref<const VectorXd>& x) const {
    check(x);
    return -prec_ * (x - mu_);
  }

  /// Draw x ~ N(mu, P^{-1}) via the Cholesky factor of the precision.
  template <RandomSource R>
  VectorXd sample(R& rng) const {
    VectorXd z(g());
    for (Eigen::Index i = 0; i < g(); ++i) z[i] = rng.normal();
    return mu_ + llt_.matrixU().solve(z);
  }

 private:
  void check(const Eigen::Ref<const VectorXd>& x) const {
    if (x.size() != g()) throw InputError("CarPrior: vector length mismatch");
  }

  MatrixXd W_;
  double rho_, tau_;
  VectorXd mu_;
  MatrixXd prec_;
  Eigen::LLT<MatrixXd> llt_;
  double log_norm_ = 0.0;
};

// ---------------------------------------------------------------------------
// Normal-inverse-Gamma base measure

struct NigBase {
  double mu0 = 0.0;
  double lambda0 = 0.01;
  double a = 2.0;
  double b = 2.0;

  void validate() const {
    if (!std::isfinite(mu0) || !(lambda0 > 0 && a > 0 && b > 0))
      throw InputError("NigBase: lambda0, a, b must be positive and mu0 finite");
  }

  /// log N(mu | mu0, s2/lambda0) IG(s2 | a, b)
  double log_density(const Atom& t) const {
    return normal_logpdf(t.mu, mu0, t.sigma2 / lambda0) + a * std::log(b) - std::lgamma(a) -
           (a + 1.0) * std::log(t.sigma2) - b / t.sigma2;
  }

  template <RandomSource R>
  Atom sample(R& rng) const {
    const double s2 = 1.0 / rng.gamma(a, b);
    return Atom{mu0 + std::sqrt(s2 / lambda0) * rng.normal(), s2};
  }
};

/// Weighted sufficient statistics: total weight, weighted mean, weighted sum of
/// squared deviations. A weight of one per observation is the usual update.
struct NigStats {
  double n = 0.0;
  double mean = 0.0;
  double ss = 0.0;

  void add(double y, double w = 1.0) {
    // West's weighted Welford update
    if (w <= 0.0) return;
    n += w;
    const double d = y - mean;
    mean += d * w / n;
    ss += w * d * (y - mean);
  }
};

inline NigBase nig_posterior_update(const NigBase& base, const NigStats& s) {
  if (s.n <= 0.0) return base;
  const double ln = base.lambda0 + s.n;
  const double dm = s.mean - base.mu0;
  return NigBase{(base.lambda0 * base.mu0 + s.n * s.mean) / ln, ln, base.a + 0.5 * s.n,
                 base.b + 0.5 * s.ss + 0.5 * base.lambda0 * s.n * dm * dm / ln};
}

inline NigBase nig_posterior_update(const NigBase& base, std::span<const double> data) {
  NigStats s;
  for (double y : data) {
    if (!std::isfinite(y)) throw InputError("nig_posterior_update: non-finite observation");
    s.add(y);
  }
  return nig_posterior_update(base, s);
}

// ---------------------------------------------------------------------------
// CoRM scores and jumps

/// sum_hk log Ga(m_hk | phi, 1); gradient (phi - 1)/m - 1 written into grad if given.
inline double log_prior_scores(const MatrixXd& M, double phi, MatrixXd* grad = nullptr) {
  if (!(phi > 0.0)) throw DomainError("log_prior_scores: phi must be positive");
  if (!(M.array() > 0.0).all()) throw DomainError("log_prior_scores: scores must be positive");
  const double c = -std::lgamma(phi);
  double s = 0.0;
  for (Eigen::Index i = 0; i < M.size(); ++i) s += (phi - 1.0) * std::log(M.data()[i]) - M.data()[i] + c;
  if (grad) *grad = ((phi - 1.0) / M.array() - 1.0).matrix();
  return s;
}

/// sum_k log Beta(J_k | phi/K, phi)
inline double log_prior_jumps(const Eigen::Ref<const VectorXd>& J, double phi, int K) {
  if (!(phi > 0.0) || K < 1) throw DomainError("log_prior_jumps: need phi > 0 and K >= 1");
  const double a = phi / K;
  const double b = phi;
  const double lbeta = std::lgamma(a) + std::lgamma(b) - std::lgamma(a + b);
  double s = 0.0;
  for (Eigen::Index k = 0; k < J.size(); ++k) {
    const double x = J[k];
    if (!(x > 0.0 && x < 1.0)) throw DomainError("log_prior_jumps: jumps must lie in (0,1)");
    s += (a - 1.0) * std::log(x) + (b - 1.0) * std::log1p(-x) - lbeta;
  }
  return s;
}

}  // namespace nlmf
