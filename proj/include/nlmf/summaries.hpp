#pragma once

// Posterior summaries computed from aligned draws: mean latent densities and
// loadings, convex and importance scores, residual factor densities, binned
// densities, WAIC, grid KL divergence, and complete-linkage clustering of
// loadings rows.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "nlmf/alignment.hpp"
#include "nlmf/errors.hpp"
#include "nlmf/gibbs.hpp"
#include "nlmf/measures.hpp"
#include "nlmf/slopt.hpp"

namespace nlmf {

struct PosteriorSummary {
  VectorXd grid;
  MatrixXd latent_density;  // H x n, average of unnormalized aligned latent densities
  VectorXd masses;          // H, average aligned latent total masses
  MatrixXd lambda_prime;    // g x H
  MatrixXd s;               // g x H convex scores
  VectorXd importance;      // H
  std::size_t draws = 0;

  Eigen::Index H() const { return masses.size(); }
  Eigen::Index g() const { return lambda_prime.rows(); }
};

/// Rows are N(grid | atom_k).
inline MatrixXd kernel_on_grid(std::span<const Atom> atoms, const Eigen::Ref<const VectorXd>& grid) {
  MatrixXd out(atoms.size(), grid.size());
  for (std::size_t k = 0; k < atoms.size(); ++k)
    for (Eigen::Index i = 0; i < grid.size(); ++i) out(k, i) = normal_pdf(grid[i], atoms[k].mu, atoms[k].sigma2);
  return out;
}

inline MatrixXd convex_scores(const MatrixXd& lambda_prime, const VectorXd& masses) {
  if (lambda_prime.cols() != masses.size()) throw InputError("convex_scores: size mismatch");
  if ((lambda_prime.array() < 0.0).any() || (masses.array() < 0.0).any())
    throw InputError("convex_scores: inputs must be nonnegative");
  MatrixXd s = lambda_prime * masses.asDiagonal();
  for (Eigen::Index j = 0; j < s.rows(); ++j) {
    const double den = s.row(j).sum();
    if (!(den > 0.0)) throw DomainError("convex_scores: zero denominator in row " + std::to_string(j));
    s.row(j) /= den;
  }
  return s;
}

inline VectorXd importance_scores(const MatrixXd& s) { return s.colwise().sum().transpose(); }

/// Average aligned latent densities and loadings over all draws.
inline PosteriorSummary aligned_means(const ChainRecord& chain, std::span<const TransformResult> transforms,
                                      const VectorXd& grid) {
  if (chain.draws.empty()) throw InputError("aligned_means: empty chain");
  if (transforms.size() != chain.draws.size()) throw InputError("aligned_means: one transform per draw required");
  const auto H = chain.draws.front().M.rows();
  const auto g = chain.draws.front().Lambda.rows();
  PosteriorSummary out;
  out.grid = grid;
  out.latent_density = MatrixXd::Zero(H, grid.size());
  out.masses = VectorXd::Zero(H);
  out.lambda_prime = MatrixXd::Zero(g, H);
  for (std::size_t l = 0; l < chain.draws.size(); ++l) {
    const auto& d = chain.draws[l];
    if (d.M.rows() != H || d.Lambda.rows() != g || d.Lambda.cols() != H)
      throw InputError("aligned_means: dimensions change across draws");
    std::vector<int> perm = transforms[l].perm;
    if (perm.empty()) {
      perm.resize(H);
      for (Eigen::Index h = 0; h < H; ++h) perm[h] = static_cast<int>(h);
    }
    const AlignedDraw a = apply_alignment(d, transforms[l].Q, perm);
    out.latent_density += a.weights * kernel_on_grid(a.atoms, grid);
    out.masses += a.weights.rowwise().sum();
    out.lambda_prime += a.loadings;
  }
  const double n = static_cast<double>(chain.draws.size());
  out.latent_density /= n;
  out.masses /= n;
  out.lambda_prime /= n;
  out.draws = chain.draws.size();
  out.s = convex_scores(out.lambda_prime.cwiseMax(0.0), out.masses);
  out.importance = importance_scores(out.s);
  return out;
}

/// Normalized aligned factor densities p'_h, H x n.
inline MatrixXd factor_densities(const PosteriorSummary& s) {
  if ((s.masses.array() <= 0.0).any()) throw DomainError("factor_densities: latent measure with zero mass");
  return s.masses.cwiseInverse().asDiagonal() * s.latent_density;
}

/// p_j = sum_h s_jh p'_h, g x n.
inline MatrixXd group_densities(const PosteriorSummary& s) { return s.s * factor_densities(s); }

/// eps_h = p'_h - mean_j p_j.
inline DensityGrid residual_densities(const PosteriorSummary& s) {
  const MatrixXd f = factor_densities(s);
  const VectorXd pbar = (s.s * f).colwise().mean().transpose();
  DensityGrid out;
  out.points = s.grid;
  out.values = f.rowwise() - pbar.transpose();
  for (Eigen::Index h = 0; h < s.H(); ++h) out.names.push_back("residual_" + std::to_string(h + 1));
  return out;
}

/// Mass of the normalized mixture in each bin [edges[i], edges[i+1]).
inline VectorXd discretize_density(const Eigen::Ref<const VectorXd>& weights, std::span<const Atom> atoms,
                                   const Eigen::Ref<const VectorXd>& edges) {
  if (edges.size() < 2) throw InputError("discretize_density: need at least two edges");
  for (Eigen::Index i = 1; i < edges.size(); ++i)
    if (!(edges[i] > edges[i - 1])) throw InputError("discretize_density: edges must be increasing");
  if (static_cast<std::size_t>(weights.size()) != atoms.size()) throw InputError("discretize_density: size mismatch");
  require_valid(atoms);
  const double total = weights.sum();
  if (!(total > 0.0)) throw InputError("discretize_density: measure has no positive mass");
  VectorXd out = VectorXd::Zero(edges.size() - 1);
  for (std::size_t k = 0; k < atoms.size(); ++k) {
    const double sd = std::sqrt(atoms[k].sigma2);
    for (Eigen::Index i = 0; i + 1 < edges.size(); ++i) {
      // difference of upper tails on the right half keeps small bin masses accurate
      const double a = (edges[i] - atoms[k].mu) / sd, b = (edges[i + 1] - atoms[k].mu) / sd;
      const double m = a >= 0.0 ? 0.5 * (std::erfc(a / std::sqrt(2.0)) - std::erfc(b / std::sqrt(2.0)))
                                : 0.5 * (std::erfc(-b / std::sqrt(2.0)) - std::erfc(-a / std::sqrt(2.0)));
      out[i] += weights[k] * m;
    }
  }
  return out / total;
}

// ---------------------------------------------------------------------------
// WAIC

/// Streaming accumulator over draws of per-observation log-likelihoods.
class WaicAccumulator {
 public:
  explicit WaicAccumulator(std::size_t n_obs)
      : max_(n_obs, -std::numeric_limits<double>::infinity()), sum_(n_obs, 0.0), mean_(n_obs, 0.0), m2_(n_obs, 0.0) {}

  void add_draw(std::span<const double> loglik) {
    if (loglik.size() != max_.size()) throw InputError("WaicAccumulator: observation count mismatch");
    ++draws_;
    const double n = static_cast<double>(draws_);
    for (std::size_t i = 0; i < loglik.size(); ++i) {
      const double x = loglik[i];
      if (!std::isfinite(x)) throw DomainError("WaicAccumulator: non-finite log-likelihood");
      if (x > max_[i]) {
        sum_[i] = sum_[i] * std::exp(max_[i] - x) + 1.0;
        max_[i] = x;
      } else {
        sum_[i] += std::exp(x - max_[i]);
      }
      const double delta = x - mean_[i];
      mean_[i] += delta / n;
      m2_[i] += delta * (x - mean_[i]);
    }
  }

  std::size_t draws() const { return draws_; }
  double lppd() const {
    double s = 0.0;
    for (std::size_t i = 0; i < max_.size(); ++i) s += max_[i] + std::log(sum_[i]) - std::log(double(draws_));
    return s;
  }
  double p_waic() const {
    double s = 0.0;
    for (double v : m2_) s += v / static_cast<double>(draws_ - 1);
    return s;
  }
  double value() const {
    if (draws_ < 2) throw DomainError("waic: at least two draws are needed");
    return -2.0 * (lppd() - p_waic());
  }

 private:
  std::vector<double> max_, sum_, mean_, m2_;
  std::size_t draws_ = 0;
};

/// Group mixture weights of one draw, rows normalized: w_jk = Gamma_jk J_k / T_j.
inline MatrixXd group_weights(const ChainDraw& d) {
  MatrixXd W = d.Lambda * d.M * d.J.asDiagonal();
  for (Eigen::Index j = 0; j < W.rows(); ++j) {
    const double t = W.row(j).sum();
    if (!(t > 0.0)) throw DomainError("group_weights: group with zero total mass");
    W.row(j) /= t;
  }
  return W;
}

/// log p(y_ji | draw) for every observation, groups concatenated in order.
inline std::vector<double> pointwise_loglik(const ChainDraw& d, const GroupedData& data) {
  const MatrixXd W = group_weights(d);
  if (W.rows() != data.g()) throw InputError("pointwise_loglik: group count mismatch");
  std::vector<double> out;
  out.reserve(data.total());
  std::vector<double> lw(d.atoms.size());
  for (Eigen::Index j = 0; j < data.g(); ++j) {
    for (std::size_t k = 0; k < d.atoms.size(); ++k) lw[k] = std::log(W(j, k));
    for (double y : data.y[j]) {
      double mx = -std::numeric_limits<double>::infinity();
      thread_local std::vector<double> t;
      t.resize(d.atoms.size());
      for (std::size_t k = 0; k < d.atoms.size(); ++k) {
        t[k] = lw[k] + normal_logpdf(y, d.atoms[k].mu, d.atoms[k].sigma2);
        mx = std::max(mx, t[k]);
      }
      double s = 0.0;
      for (double v : t) s += std::exp(v - mx);
      out.push_back(mx + std::log(s));
    }
  }
  return out;
}

inline double waic(const ChainRecord& chain, const GroupedData& data) {
  if (chain.draws.size() < 2) throw DomainError("waic: at least two draws are needed");
  WaicAccumulator acc(data.total());
  for (const auto& d : chain.draws) acc.add_draw(pointwise_loglik(d, data));
  return acc.value();
}

// ---------------------------------------------------------------------------
// Densities and divergences

/// Posterior mean of each group's density on the grid, g x n.
inline MatrixXd posterior_group_densities(const ChainRecord& chain, const VectorXd& grid) {
  if (chain.draws.empty()) throw InputError("posterior_group_densities: empty chain");
  MatrixXd acc = MatrixXd::Zero(chain.draws.front().Lambda.rows(), grid.size());
  for (const auto& d : chain.draws) acc += group_weights(d) * kernel_on_grid(d.atoms, grid);
  return acc / static_cast<double>(chain.draws.size());
}

struct KlResult {
  double value = 0.0;
  bool clamped = false;  // estimate was nonpositive where the truth is positive
};

/// Trapezoid approximation of int p_true log(p_true / p_est).
inline KlResult kl_to_truth(const Eigen::Ref<const VectorXd>& est, const Eigen::Ref<const VectorXd>& truth,
                            const Eigen::Ref<const VectorXd>& grid) {
  if (est.size() != grid.size() || truth.size() != grid.size()) throw InputError("kl_to_truth: size mismatch");
  if ((truth.array() < 0.0).any() || !truth.allFinite() || !est.allFinite())
    throw InputError("kl_to_truth: densities must be finite and the truth nonnegative");
  KlResult r;
  VectorXd f(grid.size());
  for (Eigen::Index i = 0; i < grid.size(); ++i) {
    if (truth[i] == 0.0) {
      f[i] = 0.0;
      continue;
    }
    double e = est[i];
    if (!(e > 0.0)) {
      r.clamped = true;
      e = 1e-300;
    }
    f[i] = truth[i] * (std::log(truth[i]) - std::log(e));
  }
  r.value = trapezoid(grid, f);
  return r;
}

// ---------------------------------------------------------------------------
// Complete-linkage clustering

struct Clustering {
  std::vector<int> labels;      // 0-based, numbered by first appearance
  MatrixXd centers;             // n_clusters x H mean loading rows
  std::vector<double> heights;  // merge heights in merge order
};

inline Clustering cluster_loadings(const MatrixXd& lambda_prime, int n_clusters) {
  const auto g = static_cast<int>(lambda_prime.rows());
  if (n_clusters < 1 || n_clusters > g) throw InputError("cluster_loadings: need 1 <= n_clusters <= g");
  MatrixXd D(g, g);
  for (int a = 0; a < g; ++a)
    for (int b = 0; b < g; ++b) D(a, b) = (lambda_prime.row(a) - lambda_prime.row(b)).norm();
  std::vector<int> owner(g);
  for (int a = 0; a < g; ++a) owner[a] = a;
  std::vector<char> alive(g, 1);
  Clustering out;
  for (int active = g; active > n_clusters; --active) {
    int ba = -1, bb = -1;
    double best = std::numeric_limits<double>::infinity();
    for (int a = 0; a < g; ++a) {
      if (!alive[a]) continue;
      for (int b = a + 1; b < g; ++b)
        if (alive[b] && D(a, b) < best) {
          best = D(a, b);
          ba = a;
          bb = b;
        }
    }
    out.heights.push_back(best);
    alive[bb] = 0;
    for (int c = 0; c < g; ++c) {
      if (owner[c] == bb) owner[c] = ba;
      if (alive[c] && c != ba) D(ba, c) = D(c, ba) = std::max(D(ba, c), D(bb, c));
    }
  }
  std::vector<int> id(g, -1);
  int next = 0;
  out.labels.resize(g);
  for (int a = 0; a < g; ++a) {
    if (id[owner[a]] < 0) id[owner[a]] = next++;
    out.labels[a] = id[owner[a]];
  }
  out.centers = MatrixXd::Zero(n_clusters, lambda_prime.cols());
  VectorXd counts = VectorXd::Zero(n_clusters);
  for (int a = 0; a < g; ++a) {
    out.centers.row(out.labels[a]) += lambda_prime.row(a);
    counts[out.labels[a]] += 1.0;
  }
  for (int c = 0; c < n_clusters; ++c) out.centers.row(c) /= counts[c];
  return out;
}

}  // namespace nlmf
