#pragma once

// Atomic measures over univariate Gaussian kernel parameters, the truncated
// compound random measure, and closed-form L2 inner products of the mixture
// densities they induce.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "nlmf/errors.hpp"

namespace nlmf {

using Eigen::MatrixXd;
using Eigen::VectorXd;

/// Kernel parameters of one mixture component: N(mu, sigma2).
struct Atom {
  double mu = 0.0;
  double sigma2 = 1.0;

  bool valid() const { return std::isfinite(mu) && std::isfinite(sigma2) && sigma2 > 0.0; }
};

inline void require_valid(std::span<const Atom> atoms) {
  for (const auto& a : atoms)
    if (!a.valid()) throw InputError("atom with non-finite location or non-positive variance");
}

inline double normal_logpdf(double y, double mu, double var) {
  const double d = y - mu;
  return -0.5 * (std::log(2.0 * std::numbers::pi * var) + d * d / var);
}

inline double normal_pdf(double y, double mu, double var) {
  return std::exp(normal_logpdf(y, mu, var));
}

inline double normal_cdf(double y, double mu, double var) {
  return 0.5 * std::erfc(-(y - mu) / std::sqrt(2.0 * var));
}

/// Sum_k weights_k N(y | mu_k, sigma2_k). Unnormalized unless weights sum to one.
inline double mixture_density(const Eigen::Ref<const VectorXd>& weights, std::span<const Atom> atoms,
                              double y) {
  if (!std::isfinite(y)) throw InputError("mixture_density: non-finite evaluation point");
  if (static_cast<std::size_t>(weights.size()) != atoms.size())
    throw InputError("mixture_density: weights/atoms size mismatch");
  double out = 0.0;
  bool any_positive = false;
  for (std::size_t k = 0; k < atoms.size(); ++k) {
    const double w = weights[static_cast<Eigen::Index>(k)];
    if (!std::isfinite(w) || w < 0.0) throw InputError("mixture_density: weights must be finite and nonnegative");
    if (w > 0.0) {
      any_positive = true;
      out += w * normal_pdf(y, atoms[k].mu, atoms[k].sigma2);
    }
  }
  if (!any_positive) throw InputError("mixture_density: all weights are zero");
  return out;
}

/// Integral over the real line of N(y|a) N(y|b), which equals N(mu_a | mu_b, s2_a + s2_b).
inline double gaussian_l2_inner(const Atom& a, const Atom& b) {
  return normal_pdf(a.mu, b.mu, a.sigma2 + b.sigma2);
}

/// K x K matrix of pairwise kernel inner products.
inline MatrixXd kernel_gram(std::span<const Atom> atoms) {
  const auto K = static_cast<Eigen::Index>(atoms.size());
  MatrixXd A(K, K);
  for (Eigen::Index k = 0; k < K; ++k)
    for (Eigen::Index l = 0; l <= k; ++l)
      A(k, l) = A(l, k) = gaussian_l2_inner(atoms[k], atoms[l]);
  return A;
}

/// Cross inner products between the atoms of two (possibly different) measures.
inline MatrixXd kernel_cross(std::span<const Atom> a, std::span<const Atom> b) {
  MatrixXd A(static_cast<Eigen::Index>(a.size()), static_cast<Eigen::Index>(b.size()));
  for (std::size_t k = 0; k < a.size(); ++k)
    for (std::size_t l = 0; l < b.size(); ++l)
      A(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(l)) = gaussian_l2_inner(a[k], b[l]);
  return A;
}

/// K shared atoms, K shared jumps in (0,1) and an H x K matrix of positive
/// scores. Latent measure h is sum_k scores(h,k) jumps(k) delta_{atom_k}.
class TruncatedCoRM {
 public:
  TruncatedCoRM(std::vector<Atom> atoms, VectorXd jumps, MatrixXd scores)
      : atoms_(std::move(atoms)), jumps_(std::move(jumps)), scores_(std::move(scores)) {
    const auto K = static_cast<Eigen::Index>(atoms_.size());
    if (K < 1 || scores_.rows() < 1) throw InputError("TruncatedCoRM: need K >= 1 and H >= 1");
    if (jumps_.size() != K || scores_.cols() != K) throw InputError("TruncatedCoRM: dimension mismatch");
    require_valid(atoms_);
    for (Eigen::Index k = 0; k < K; ++k)
      if (!(jumps_[k] > 0.0 && jumps_[k] < 1.0)) throw InputError("TruncatedCoRM: jumps must lie in (0,1)");
    if (!(scores_.array() > 0.0).all() || !scores_.allFinite())
      throw InputError("TruncatedCoRM: scores must be strictly positive");
  }

  const std::vector<Atom>& atoms() const { return atoms_; }
  const VectorXd& jumps() const { return jumps_; }
  const MatrixXd& scores() const { return scores_; }
  Eigen::Index H() const { return scores_.rows(); }
  Eigen::Index K() const { return scores_.cols(); }

  /// scores * diag(jumps): weights of each latent measure over the atoms.
  MatrixXd weighted_scores() const { return scores_ * jumps_.asDiagonal(); }

  VectorXd latent_masses() const { return weighted_scores().rowwise().sum(); }

 private:
  std::vector<Atom> atoms_;
  VectorXd jumps_;
  MatrixXd scores_;
};

/// g x H matrix of strictly positive loadings.
class LoadingsMatrix {
 public:
  explicit LoadingsMatrix(MatrixXd lambda) : lambda_(std::move(lambda)) {
    if (lambda_.size() == 0) throw InputError("LoadingsMatrix: empty");
    if (!lambda_.allFinite() || !(lambda_.array() > 0.0).all())
      throw InputError("LoadingsMatrix: entries must be finite and strictly positive");
  }
  const MatrixXd& matrix() const { return lambda_; }
  Eigen::Index g() const { return lambda_.rows(); }
  Eigen::Index H() const { return lambda_.cols(); }

 private:
  MatrixXd lambda_;
};

/// Group measures (Lambda M)_{jk} J_k over the shared atoms.
struct GroupMeasureView {
  MatrixXd weights;               // g x K
  const std::vector<Atom>* atoms;  // shared with the CoRM

  GroupMeasureView(const LoadingsMatrix& lambda, const TruncatedCoRM& corm)
      : weights(lambda.matrix() * corm.weighted_scores()), atoms(&corm.atoms()) {
    if (lambda.H() != corm.H()) throw InputError("GroupMeasureView: H mismatch");
  }

  /// Row totals T_j.
  VectorXd total_mass() const { return weights.rowwise().sum(); }
};

/// G = B A B^T with B = Q M diag(J) and A the kernel Gram matrix.
inline MatrixXd gram_matrix(const TruncatedCoRM& corm, const MatrixXd& Q) {
  if (Q.rows() != corm.H() || Q.cols() != corm.H()) throw InputError("gram_matrix: Q must be H x H");
  if (!Q.allFinite()) throw InputError("gram_matrix: Q must be finite");
  const MatrixXd B = Q * corm.weighted_scores();
  const MatrixXd G = B * kernel_gram(corm.atoms()) * B.transpose();
  return 0.5 * (G + G.transpose());
}

/// Mixture densities tabulated on a fixed grid, one row per density.
struct DensityGrid {
  VectorXd points;
  MatrixXd values;
  std::vector<std::string> names;

  void validate() const {
    for (Eigen::Index i = 1; i < points.size(); ++i)
      if (!(points[i] > points[i - 1])) throw InputError("DensityGrid: points must be strictly increasing");
    if (values.cols() != points.size()) throw InputError("DensityGrid: value/point size mismatch");
    if (!values.allFinite()) throw InputError("DensityGrid: non-finite value");
  }

  /// CSV: first column y, then one column per density.
  void write_csv(std::ostream& os) const;
};

inline VectorXd equispaced(double lo, double hi, Eigen::Index n) {
  if (n < 2 || !(hi > lo)) throw InputError("equispaced: need n >= 2 and hi > lo");
  return VectorXd::LinSpaced(n, lo, hi);
}

/// Default evaluation grid: 500 points on [min - 3 sd, max + 3 sd] of the data.
inline VectorXd default_grid(std::span<const double> data, Eigen::Index n = 500) {
  if (data.empty()) throw InputError("default_grid: no data");
  const auto [mn, mx] = std::minmax_element(data.begin(), data.end());
  double mean = 0.0;
  for (double y : data) mean += y;
  mean /= static_cast<double>(data.size());
  double var = 0.0;
  for (double y : data) var += (y - mean) * (y - mean);
  const double sd = data.size() > 1 ? std::sqrt(var / static_cast<double>(data.size() - 1)) : 1.0;
  const double pad = 3.0 * (sd > 0.0 ? sd : 1.0);
  return equispaced(*mn - pad, *mx + pad, n);
}

inline VectorXd evaluate_on_grid(const Eigen::Ref<const VectorXd>& weights, std::span<const Atom> atoms,
                                 const Eigen::Ref<const VectorXd>& grid) {
  if (grid.size() == 0) throw InputError("evaluate_on_grid: empty grid");
  for (Eigen::Index i = 1; i < grid.size(); ++i)
    if (!(grid[i] > grid[i - 1])) throw InputError("evaluate_on_grid: grid must be strictly increasing");
  VectorXd out(grid.size());
  for (Eigen::Index i = 0; i < grid.size(); ++i) out[i] = mixture_density(weights, atoms, grid[i]);
  return out;
}

/// Trapezoid rule over a sorted grid.
inline double trapezoid(const Eigen::Ref<const VectorXd>& x, const Eigen::Ref<const VectorXd>& f) {
  double s = 0.0;
  for (Eigen::Index i = 1; i < x.size(); ++i) s += 0.5 * (f[i] + f[i - 1]) * (x[i] - x[i - 1]);
  return s;
}

}  // namespace nlmf
