#pragma once

// Truncated Gibbs sampler for the normalized latent measure factor model:
// conjugate atom updates, logit random-walk jumps, HMC blocks for the scores M
// and the loadings Lambda on the log scale, categorical cluster labels and the
// gamma auxiliary variables u_j. Under the MGP prior the number of latent
// measures H is adapted during an initial window.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "nlmf/errors.hpp"
#include "nlmf/hmc.hpp"
#include "nlmf/logconcave.hpp"
#include "nlmf/measures.hpp"
#include "nlmf/priors.hpp"
#include "nlmf/rng.hpp"

namespace nlmf {

struct GroupedData {
  std::vector<std::vector<double>> y;
  std::vector<std::string> labels;

  Eigen::Index g() const { return static_cast<Eigen::Index>(y.size()); }
  std::size_t total() const {
    std::size_t n = 0;
    for (const auto& v : y) n += v.size();
    return n;
  }

  void validate() const {
    if (y.empty()) throw InputError("GroupedData: no groups");
    for (std::size_t j = 0; j < y.size(); ++j) {
      if (y[j].empty()) throw InputError("GroupedData: group " + std::to_string(j) + " is empty");
      for (double v : y[j])
        if (!std::isfinite(v)) throw InputError("GroupedData: non-finite value in group " + std::to_string(j));
    }
  }

  std::vector<double> flat() const {
    std::vector<double> out;
    out.reserve(total());
    for (const auto& v : y) out.insert(out.end(), v.begin(), v.end());
    return out;
  }

  double mean() const {
    double s = 0.0;
    for (const auto& v : y)
      for (double x : v) s += x;
    return s / static_cast<double>(total());
  }
};

enum class LoadingsPrior { Mgp, Car };

struct SamplerConfig {
  int K = 20;
  double phi = 1.0;
  int H = 20;  // initial H under MGP, fixed H under CAR
  LoadingsPrior prior = LoadingsPrior::Mgp;
  MgpParams mgp;
  double car_rho = 0.95;
  double car_tau = 2.5;
  NigBase base;  // mu0 is normally replaced by the data mean at fit time

  long iterations = 11000;
  long burn_in = 5000;
  long thin = 1;

  bool adapt_H = true;
  long adapt_window = 1000;
  long adapt_every = 50;
  double adapt_eps = 0.05;

  int leapfrog = 10;
  double hmc_step0 = 0.05;
  double hmc_target = 0.75;
  double jump_step0 = 1.0;
  double jump_target = 0.44;

  double likelihood_weight = 1.0;  // 0 turns the chain into a prior sampler

  void validate() const {
    if (K < 1 || H < 1) throw InputError("config: K and H must be >= 1");
    if (!(phi > 0.0)) throw InputError("config: phi must be positive");
    if (iterations < 1 || burn_in < 0 || thin < 1) throw InputError("config: iterations >= 1, burn_in >= 0, thin >= 1");
    if (burn_in > iterations) throw InputError("config: burn_in must not exceed iterations");
    if (leapfrog < 1 || !(hmc_step0 > 0.0) || !(jump_step0 > 0.0)) throw InputError("config: bad HMC/MH settings");
    if (!(hmc_target > 0.0 && hmc_target < 1.0) || !(jump_target > 0.0 && jump_target < 1.0))
      throw InputError("config: acceptance targets must lie in (0,1)");
    if (!(likelihood_weight >= 0.0 && likelihood_weight <= 1.0)) throw InputError("config: likelihood_weight in [0,1]");
    if (adapt_every < 1 || adapt_window < 0 || !(adapt_eps > 0.0)) throw InputError("config: bad adaptation settings");
    mgp.validate();
    base.validate();
  }
};

struct GibbsState {
  std::vector<Atom> atoms;            // K
  VectorXd J;                         // K
  MatrixXd M;                         // H x K
  MatrixXd Lambda;                    // g x H
  std::vector<std::vector<int>> c;    // cluster label per observation, 0-based
  VectorXd u;                         // g
  std::optional<VectorXd> theta;      // MGP column variables
  long iteration = 0;

  Eigen::Index K() const { return J.size(); }
  Eigen::Index H() const { return M.rows(); }
  Eigen::Index g() const { return Lambda.rows(); }

  MatrixXd Gamma() const { return Lambda * M; }

  /// T_j = sum_k (Lambda M)_jk J_k with Neumaier summation.
  VectorXd totals() const {
    const MatrixXd G = Gamma();
    VectorXd T(G.rows());
    for (Eigen::Index j = 0; j < G.rows(); ++j) {
      double s = 0.0, comp = 0.0;
      for (Eigen::Index k = 0; k < G.cols(); ++k) {
        const double x = G(j, k) * J[k];
        const double t = s + x;
        comp += std::abs(s) >= std::abs(x) ? (s - t) + x : (x - t) + s;
        s = t;
      }
      T[j] = s + comp;
    }
    return T;
  }

  void validate() const {
    const auto K_ = K();
    if (static_cast<Eigen::Index>(atoms.size()) != K_ || M.cols() != K_ || Lambda.cols() != M.rows() ||
        u.size() != Lambda.rows() || static_cast<Eigen::Index>(c.size()) != Lambda.rows())
      throw StateError("GibbsState: inconsistent dimensions");
    require_valid(atoms);
    for (Eigen::Index k = 0; k < K_; ++k)
      if (!(J[k] > 0.0 && J[k] < 1.0)) throw StateError("GibbsState: jump outside (0,1)");
    if (!(M.array() > 0.0).all() || !M.allFinite()) throw StateError("GibbsState: non-positive score");
    if (!(Lambda.array() > 0.0).all() || !Lambda.allFinite()) throw StateError("GibbsState: non-positive loading");
    if (!(u.array() > 0.0).all() || !u.allFinite()) throw StateError("GibbsState: non-positive auxiliary variable");
    for (const auto& cj : c)
      for (int k : cj)
        if (k < 0 || k >= K_) throw StateError("GibbsState: cluster label out of range");
    if (theta && (theta->size() != H() || !(theta->array() > 0.0).all())) throw StateError("GibbsState: bad MGP state");
  }
};

/// Per-group cluster occupation counts q_jk.
inline MatrixXd cluster_counts(const std::vector<std::vector<int>>& c, Eigen::Index K) {
  MatrixXd q = MatrixXd::Zero(static_cast<Eigen::Index>(c.size()), K);
  for (std::size_t j = 0; j < c.size(); ++j)
    for (int k : c[j]) q(static_cast<Eigen::Index>(j), k) += 1.0;
  return q;
}

// ---------------------------------------------------------------------------
// Log targets of the HMC blocks. Both act on log-parameters and include the
// Jacobian of the exponential map.

struct LikelihoodTerms {
  const MatrixXd& q;  // g x K counts
  const VectorXd& u;  // g
  const VectorXd& J;  // K
  double weight = 1.0;
};

namespace detail {

/// w sum_jk [q_jk log Gamma_jk - u_j Gamma_jk J_k] and its derivative in Gamma.
inline double likelihood_part(const MatrixXd& Gm, const LikelihoodTerms& t, MatrixXd* dG) {
  double s = 0.0;
  if (dG) dG->resize(Gm.rows(), Gm.cols());
  for (Eigen::Index k = 0; k < Gm.cols(); ++k)
    for (Eigen::Index j = 0; j < Gm.rows(); ++j) {
      const double G = Gm(j, k);
      const double qq = t.q(j, k);
      const double uj = t.u[j] * t.J[k];
      s += (qq > 0.0 ? qq * std::log(G) : 0.0) - uj * G;
      if (dG) (*dG)(j, k) = t.weight * (qq / G - uj);
    }
  return t.weight * s;
}

}  // namespace detail

/// log p(M | rest) on X = log M, up to a constant.
inline double scores_log_target(const MatrixXd& X, const MatrixXd& Lambda, const LikelihoodTerms& t, double phi,
                                MatrixXd* grad = nullptr) {
  const MatrixXd Mv = X.array().exp().matrix();
  MatrixXd dG;
  double lp = detail::likelihood_part(Lambda * Mv, t, grad ? &dG : nullptr);
  lp += (phi * X.array() - Mv.array()).sum();
  if (grad) *grad = ((Lambda.transpose() * dG).array() * Mv.array() + phi - Mv.array()).matrix();
  return lp;
}

/// Prior on Lambda as seen by the loadings block.
struct LoadingsPriorView {
  LoadingsPrior kind = LoadingsPrior::Mgp;
  const VectorXd* tau = nullptr;  // MGP: tau_h
  double nu = 6.0;
  const CarPrior* car = nullptr;  // CAR: prior on each log column
};

/// log p(Lambda | rest) on Y = log Lambda, up to a constant.
inline double loadings_log_target(const MatrixXd& Y, const MatrixXd& M, const LikelihoodTerms& t,
                                  const LoadingsPriorView& prior, MatrixXd* grad = nullptr) {
  const MatrixXd L = Y.array().exp().matrix();
  MatrixXd dG;
  double lp = detail::likelihood_part(L * M, t, grad ? &dG : nullptr);
  if (grad) *grad = ((dG * M.transpose()).array() * L.array()).matrix();
  if (prior.kind == LoadingsPrior::Mgp) {
    if (!prior.tau || prior.tau->size() != Y.cols()) throw StateError("loadings target: MGP tau missing");
    for (Eigen::Index h = 0; h < Y.cols(); ++h)
      for (Eigen::Index j = 0; j < Y.rows(); ++j) {
        lp += mgp_log_lambda_logpdf(Y(j, h), (*prior.tau)[h], prior.nu);
        if (grad) (*grad)(j, h) += mgp_log_lambda_grad(Y(j, h), (*prior.tau)[h], prior.nu);
      }
  } else {
    if (!prior.car || prior.car->g() != Y.rows()) throw StateError("loadings target: CAR prior missing");
    // The CAR law is placed on log Lambda directly, so no Jacobian term.
    for (Eigen::Index h = 0; h < Y.cols(); ++h) {
      lp += prior.car->quadratic_term(Y.col(h));
      if (grad) grad->col(h) += prior.car->gradient(Y.col(h));
    }
  }
  return lp;
}

/// log of the jump conditional on z = logit(J), including the Jacobian.
inline double jump_log_target(double z, double q_total, double rate, double phi, int K, double weight) {
  const double logJ = -std::log1p(std::exp(-z));
  const double log1mJ = -std::log1p(std::exp(z));
  return (weight * q_total + phi / K) * logJ + phi * log1mJ - weight * rate * std::exp(logJ);
}

// ---------------------------------------------------------------------------

struct ChainDraw {
  long iteration = 0;
  std::vector<Atom> atoms;
  VectorXd J;
  MatrixXd M;
  MatrixXd Lambda;
  double log_joint = 0.0;
};

struct ChainStats {
  double jump_accept = 0.0;
  double scores_accept = 0.0;
  double loadings_accept = 0.0;
  double scores_step = 0.0;
  double loadings_step = 0.0;
  double small_energy_error_frac = 0.0;  // |dH| < 0.5 after burn-in
  long divergences = 0;
  std::vector<int> H_trace;  // H after each adaptation event
};

struct ChainRecord {
  std::vector<ChainDraw> draws;
  ChainStats stats;
  int K = 0;
  Eigen::Index g = 0;

  int H() const { return draws.empty() ? 0 : static_cast<int>(draws.front().M.rows()); }
};

class GibbsSampler {
 public:
  GibbsSampler(const GroupedData& data, SamplerConfig cfg, std::uint64_t seed,
               std::optional<MatrixXd> adjacency = std::nullopt)
      : data_(data), cfg_(std::move(cfg)), rng_(seed) {
    data_.validate();
    cfg_.validate();
    if (cfg_.prior == LoadingsPrior::Car) {
      if (!adjacency) throw InputError("CAR prior requires an adjacency matrix");
      if (adjacency->rows() != data_.g()) throw InputError("adjacency size does not match the number of groups");
      car_.emplace(CarPrior::with_uniform_mean(*adjacency, cfg_.car_rho, cfg_.car_tau, cfg_.H));
    }
    scores_da_ = DualAveraging(cfg_.hmc_step0, cfg_.hmc_target);
    loadings_da_ = DualAveraging(cfg_.hmc_step0, cfg_.hmc_target);
    jump_log_step_ = VectorXd::Constant(cfg_.K, std::log(cfg_.jump_step0));
    initialize();
  }

  const GibbsState& state() const { return state_; }
  GibbsState& mutable_state() { return state_; }
  const SamplerConfig& config() const { return cfg_; }
  const std::optional<CarPrior>& car() const { return car_; }
  Rng& rng() { return rng_; }

  // -- individual steps ----------------------------------------------------

  void update_atoms() {
    const auto K = state_.K();
    std::vector<NigStats> stats(static_cast<std::size_t>(K));
    const double w = cfg_.likelihood_weight;
    for (Eigen::Index j = 0; j < data_.g(); ++j)
      for (std::size_t i = 0; i < data_.y[j].size(); ++i) stats[state_.c[j][i]].add(data_.y[j][i], w);
    for (Eigen::Index k = 0; k < K; ++k) state_.atoms[k] = nig_posterior_update(cfg_.base, stats[k]).sample(rng_);
  }

  /// Returns the fraction of accepted jump proposals.
  double update_jumps(bool adapt) {
    const MatrixXd Gm = state_.Gamma();
    const VectorXd rate = Gm.transpose() * state_.u;  // c_l = sum_j u_j Gamma_jl
    const VectorXd qk = q_.colwise().sum();
    int acc = 0;
    for (Eigen::Index l = 0; l < state_.K(); ++l) {
      const double J = state_.J[l];
      const double z = std::log(J) - std::log1p(-J);
      const double zp = z + std::exp(jump_log_step_[l]) * rng_.normal();
      bool ok = false;
      if (zp > -700.0 && zp < 36.0) {
        const double la = jump_log_target(zp, qk[l], rate[l], cfg_.phi, cfg_.K, cfg_.likelihood_weight) -
                          jump_log_target(z, qk[l], rate[l], cfg_.phi, cfg_.K, cfg_.likelihood_weight);
        if (std::log(rng_.uniform()) < la) {
          const double Jn = 1.0 / (1.0 + std::exp(-zp));
          if (Jn > 0.0 && Jn < 1.0) {
            state_.J[l] = Jn;
            ok = true;
          }
        }
      }
      acc += ok;
      if (adapt) {
        const double t = static_cast<double>(state_.iteration + 1);
        jump_log_step_[l] += ((ok ? 1.0 : 0.0) - cfg_.jump_target) / std::pow(t, 0.6);
        jump_log_step_[l] = std::clamp(jump_log_step_[l], -12.0, 4.0);
      }
    }
    return static_cast<double>(acc) / static_cast<double>(state_.K());
  }

  HmcResult update_scores_hmc(bool adapt) {
    const LikelihoodTerms t{q_, state_.u, state_.J, cfg_.likelihood_weight};
    const auto H = state_.H(), K = state_.K();
    auto f = [&](const VectorXd& x, VectorXd& g) {
      const Eigen::Map<const MatrixXd> X(x.data(), H, K);
      MatrixXd G;
      const double v = scores_log_target(X, state_.Lambda, t, cfg_.phi, &G);
      g = Eigen::Map<const VectorXd>(G.data(), G.size());
      return v;
    };
    VectorXd x = Eigen::Map<const VectorXd>(MatrixXd(state_.M.array().log()).data(), H * K);
    const HmcResult r = guarded_hmc(f, x, scores_da_, adapt);
    if (r.accepted) state_.M = Eigen::Map<const MatrixXd>(x.data(), H, K).array().exp().matrix();
    return r;
  }

  HmcResult update_loadings_hmc(bool adapt) {
    const LikelihoodTerms t{q_, state_.u, state_.J, cfg_.likelihood_weight};
    const auto g = state_.g(), H = state_.H();
    VectorXd tau;
    LoadingsPriorView pv;
    pv.kind = cfg_.prior;
    if (cfg_.prior == LoadingsPrior::Mgp) {
      tau = mgp_hyper().tau();
      pv.tau = &tau;
      pv.nu = cfg_.mgp.nu;
    } else {
      pv.car = &*car_;
    }
    auto f = [&](const VectorXd& y, VectorXd& gr) {
      const Eigen::Map<const MatrixXd> Y(y.data(), g, H);
      MatrixXd G;
      const double v = loadings_log_target(Y, state_.M, t, pv, &G);
      gr = Eigen::Map<const VectorXd>(G.data(), G.size());
      return v;
    };
    VectorXd y = Eigen::Map<const VectorXd>(MatrixXd(state_.Lambda.array().log()).data(), g * H);
    const HmcResult r = guarded_hmc(f, y, loadings_da_, adapt);
    if (r.accepted) state_.Lambda = Eigen::Map<const MatrixXd>(y.data(), g, H).array().exp().matrix();
    if (cfg_.prior == LoadingsPrior::Mgp) update_mgp_hyper();
    return r;
  }

  /// theta_l | Lambda, theta_{-l} is generalized inverse Gaussian; sampled
  /// exactly on the log scale.
  void update_mgp_hyper() {
    VectorXd& th = *state_.theta;
    const auto H = state_.H();
    const double g = static_cast<double>(state_.g());
    const double nu = cfg_.mgp.nu;
    const VectorXd S = state_.Lambda.array().inverse().colwise().sum().transpose();
    for (Eigen::Index l = 0; l < H; ++l) {
      // log tau_h without theta_l, for h >= l
      double beta = 0.0;
      double lt = 0.0;
      for (Eigen::Index h = 0; h < H; ++h) {
        if (h != l) lt += std::log(th[h]);
        if (h >= l) beta += S[h] * std::exp(-lt);
      }
      beta *= nu / 2.0;
      const double a = l == 0 ? cfg_.mgp.a1 : cfg_.mgp.a2;
      const LogGig f{a - g * nu * static_cast<double>(H - l) / 2.0, beta};
      th[l] = std::exp(sample_log_gig(f, rng_));
    }
  }

  void update_clusters() {
    const auto K = state_.K();
    const MatrixXd Gm = state_.Gamma();
    VectorXd lconst(K), prec(K);
    for (Eigen::Index k = 0; k < K; ++k) {
      lconst[k] = -0.5 * std::log(2.0 * std::numbers::pi * state_.atoms[k].sigma2);
      prec[k] = 1.0 / state_.atoms[k].sigma2;
    }
    VectorXd lp(K);
    for (Eigen::Index j = 0; j < data_.g(); ++j) {
      VectorXd lw(K);
      for (Eigen::Index k = 0; k < K; ++k) lw[k] = std::log(Gm(j, k)) + std::log(state_.J[k]) + lconst[k];
      for (std::size_t i = 0; i < data_.y[j].size(); ++i) {
        const double y = data_.y[j][i];
        double mx = -std::numeric_limits<double>::infinity();
        for (Eigen::Index k = 0; k < K; ++k) {
          const double d = y - state_.atoms[k].mu;
          lp[k] = lw[k] - 0.5 * d * d * prec[k];
          mx = std::max(mx, lp[k]);
        }
        if (!std::isfinite(mx))
          throw InputError("update_clusters: all cluster probabilities vanish for group " + std::to_string(j) +
                           ", observation " + std::to_string(i) + " (y = " + std::to_string(y) + ")");
        double tot = 0.0;
        for (Eigen::Index k = 0; k < K; ++k) tot += (lp[k] = std::exp(lp[k] - mx));
        double r = rng_.uniform() * tot;
        int pick = static_cast<int>(K) - 1;
        for (Eigen::Index k = 0; k < K; ++k) {
          r -= lp[k];
          if (r < 0.0) {
            pick = static_cast<int>(k);
            break;
          }
        }
        state_.c[j][i] = pick;
      }
    }
    q_ = cluster_counts(state_.c, K);
  }

  void update_aux() {
    const VectorXd T = state_.totals();
    for (Eigen::Index j = 0; j < state_.g(); ++j) {
      if (!(T[j] > 0.0) || !std::isfinite(T[j]))
        throw StateError("update_aux: non-positive total mass T_j for group " + std::to_string(j));
      state_.u[j] = rng_.gamma(static_cast<double>(data_.y[j].size()), T[j]);
    }
  }

  /// Drop empty columns of Lambda (and rows of M); append one prior column if
  /// none is empty. Returns the new H.
  int adapt_H(double eps) {
    if (cfg_.prior != LoadingsPrior::Mgp) throw StateError("adapt_H requires the MGP prior");
    const auto H = state_.H();
    const auto keep = nonempty_columns(state_.Lambda, eps);
    if (static_cast<Eigen::Index>(keep.size()) == H) {
      grow_one();
    } else {
      std::vector<Eigen::Index> cols = keep;
      if (cols.empty()) {
        log::warn("adapt_H: every column flagged empty; keeping the heaviest one");
        Eigen::Index best = 0;
        normalized_column_mass(state_.Lambda).maxCoeff(&best);
        cols.push_back(best);
      }
      MatrixXd L(state_.g(), static_cast<Eigen::Index>(cols.size()));
      MatrixXd M(static_cast<Eigen::Index>(cols.size()), state_.K());
      VectorXd th(static_cast<Eigen::Index>(cols.size()));
      for (std::size_t i = 0; i < cols.size(); ++i) {
        const auto ii = static_cast<Eigen::Index>(i);
        L.col(ii) = state_.Lambda.col(cols[i]);
        M.row(ii) = state_.M.row(cols[i]);
        th[ii] = (*state_.theta)[cols[i]];
      }
      state_.Lambda = std::move(L);
      state_.M = std::move(M);
      *state_.theta = std::move(th);
    }
    return static_cast<int>(state_.H());
  }

  /// sum_j lambda_jh / sum_k lambda_jk for each column.
  static VectorXd normalized_column_mass(const MatrixXd& L) {
    const VectorXd rs = L.rowwise().sum();
    return (rs.asDiagonal().inverse() * L).colwise().sum().transpose();
  }

  static std::vector<Eigen::Index> nonempty_columns(const MatrixXd& L, double eps) {
    const VectorXd cm = normalized_column_mass(L);
    const double bar = cm.mean();
    std::vector<Eigen::Index> keep;
    for (Eigen::Index h = 0; h < cm.size(); ++h)
      if (!(cm[h] < eps * bar)) keep.push_back(h);
    return keep;
  }

  MgpHyper mgp_hyper() const {
    if (!state_.theta) throw StateError("MGP state requested without the MGP prior");
    MgpHyper h{cfg_.mgp, *state_.theta, MatrixXd()};
    const VectorXd tau = h.tau();
    h.phi = (state_.Lambda * tau.asDiagonal()).array().inverse().matrix();
    return h;
  }

  /// log p(y, c, Lambda, M, J, theta*) with u integrated out, plus the MGP
  /// column variables when that prior is active.
  double log_joint() const {
    const auto K = state_.K();
    const MatrixXd Gm = state_.Gamma();
    const VectorXd T = state_.totals();
    double lp = 0.0;
    for (Eigen::Index j = 0; j < data_.g(); ++j) {
      lp -= static_cast<double>(data_.y[j].size()) * std::log(T[j]);
      for (std::size_t i = 0; i < data_.y[j].size(); ++i) {
        const int k = state_.c[j][i];
        const Atom& a = state_.atoms[k];
        lp += normal_logpdf(data_.y[j][i], a.mu, a.sigma2) + std::log(Gm(j, k) * state_.J[k]);
      }
    }
    for (Eigen::Index k = 0; k < K; ++k) lp += cfg_.base.log_density(state_.atoms[k]);
    lp += log_prior_jumps(state_.J, cfg_.phi, static_cast<int>(K));
    lp += log_prior_scores(state_.M, cfg_.phi);
    const MatrixXd Y = state_.Lambda.array().log().matrix();
    if (cfg_.prior == LoadingsPrior::Mgp) {
      const VectorXd& th = *state_.theta;
      MgpHyper hh{cfg_.mgp, th, MatrixXd()};
      const VectorXd tau = hh.tau();
      for (Eigen::Index h = 0; h < Y.cols(); ++h) {
        const double a = h == 0 ? cfg_.mgp.a1 : cfg_.mgp.a2;
        lp += (a - 1.0) * std::log(th[h]) - th[h] - std::lgamma(a);
        for (Eigen::Index j = 0; j < Y.rows(); ++j) lp += mgp_log_lambda_logpdf(Y(j, h), tau[h], cfg_.mgp.nu) - Y(j, h);
      }
    } else {
      for (Eigen::Index h = 0; h < Y.cols(); ++h) lp += car_->log_density(Y.col(h)) - Y.col(h).sum();
    }
    return lp;
  }

  /// One full sweep of the six steps (plus adaptation when scheduled).
  void sweep() {
    const long t = ++state_.iteration;
    const bool burn = t <= cfg_.burn_in;
    const double ja = update_atoms_and_jumps(burn);
    const HmcResult rm = update_scores_hmc(burn);
    const HmcResult rl = update_loadings_hmc(burn);
    update_clusters();
    update_aux();
    if (cfg_.prior == LoadingsPrior::Mgp && cfg_.adapt_H && t <= cfg_.adapt_window && t % cfg_.adapt_every == 0)
      stats_.H_trace.push_back(adapt_H(cfg_.adapt_eps));
    if (t == cfg_.burn_in) {
      scores_da_.freeze();
      loadings_da_.freeze();
    }
    // running statistics
    ++n_sweeps_;
    jump_acc_ += ja;
    scores_acc_ += rm.accepted;
    loadings_acc_ += rl.accepted;
    if (!burn) {
      ++n_post_;
      small_dh_ += std::abs(rm.energy_error) < 0.5;
    }
  }

  ChainRecord run() {
    ChainRecord rec;
    rec.K = cfg_.K;
    rec.g = data_.g();
    while (state_.iteration < cfg_.iterations) {
      sweep();
      const long t = state_.iteration;
      if (t > cfg_.burn_in && (t - cfg_.burn_in) % cfg_.thin == 0)
        rec.draws.push_back(ChainDraw{t, state_.atoms, state_.J, state_.M, state_.Lambda, log_joint()});
    }
    rec.stats = stats();
    return rec;
  }

  ChainStats stats() const {
    ChainStats s = stats_;
    const double n = std::max<long>(1, n_sweeps_);
    s.jump_accept = jump_acc_ / n;
    s.scores_accept = scores_acc_ / n;
    s.loadings_accept = loadings_acc_ / n;
    s.scores_step = scores_da_.step();
    s.loadings_step = loadings_da_.step();
    s.small_energy_error_frac = n_post_ > 0 ? static_cast<double>(small_dh_) / static_cast<double>(n_post_) : 0.0;
    return s;
  }

  const MatrixXd& counts() const { return q_; }

 private:
  double update_atoms_and_jumps(bool adapt) {
    update_atoms();
    return update_jumps(adapt);
  }

  template <class F>
  HmcResult guarded_hmc(F& f, VectorXd& x, DualAveraging& da, bool adapt) {
    HmcResult r = hmc_step(f, x, da.step(), cfg_.leapfrog, rng_);
    if (r.divergent) {
      ++stats_.divergences;
      if (stats_.divergences == 1)
        log::warn("HMC trajectory hit a non-finite density; move rejected (later ones only counted in stats)");
    }
    if (adapt) da.update(r.accept_prob);
    return r;
  }

  void grow_one() {
    const auto g = state_.g(), H = state_.H(), K = state_.K();
    VectorXd& th = *state_.theta;
    const double th_new = rng_.gamma(H == 0 ? cfg_.mgp.a1 : cfg_.mgp.a2, 1.0);
    const double log_tau_new = th.array().log().sum() + std::log(th_new);
    state_.Lambda.conservativeResize(g, H + 1);
    for (Eigen::Index j = 0; j < g; ++j) {
      const double ph = rng_.gamma(cfg_.mgp.nu / 2.0, cfg_.mgp.nu / 2.0);
      state_.Lambda(j, H) = std::exp(-std::log(ph) - log_tau_new);
    }
    state_.M.conservativeResize(H + 1, K);
    for (Eigen::Index k = 0; k < K; ++k) state_.M(H, k) = rng_.gamma(cfg_.phi, 1.0);
    th.conservativeResize(H + 1);
    th[H] = th_new;
  }

  void initialize() {
    const auto g = data_.g();
    const int K = cfg_.K, H = cfg_.H;
    const std::vector<double> all = data_.flat();
    double mean = 0.0, var = 0.0;
    for (double y : all) mean += y;
    mean /= static_cast<double>(all.size());
    for (double y : all) var += (y - mean) * (y - mean);
    var = all.size() > 1 ? var / static_cast<double>(all.size() - 1) : 1.0;
    if (!(var > 0.0)) var = 1.0;

    state_.atoms.resize(K);
    for (int k = 0; k < K; ++k) state_.atoms[k] = Atom{all[rng_.index(all.size())], var / 4.0};
    state_.J = VectorXd::Constant(K, 1.0 / (K + 1.0));
    state_.M = MatrixXd::Ones(H, K);
    if (cfg_.prior == LoadingsPrior::Mgp) {
      const MgpHyper hh = sample_mgp_hyper(cfg_.mgp, g, H, rng_);
      state_.theta = hh.theta;
      state_.Lambda = hh.lambda();
    } else {
      state_.Lambda = MatrixXd::Constant(g, H, 1.0 / H);
    }
    state_.c.assign(static_cast<std::size_t>(g), {});
    for (Eigen::Index j = 0; j < g; ++j) state_.c[j].assign(data_.y[j].size(), 0);
    state_.u = VectorXd::Ones(g);
    update_clusters();
    update_aux();
    state_.validate();
  }

  GroupedData data_;
  SamplerConfig cfg_;
  Rng rng_;
  std::optional<CarPrior> car_;
  GibbsState state_;
  MatrixXd q_;
  DualAveraging scores_da_, loadings_da_;
  VectorXd jump_log_step_;
  ChainStats stats_;
  long n_sweeps_ = 0, n_post_ = 0, small_dh_ = 0;
  double jump_acc_ = 0.0, scores_acc_ = 0.0, loadings_acc_ = 0.0;
};

inline ChainRecord run_chain(const GroupedData& data, const SamplerConfig& cfg, std::uint64_t seed,
                             std::optional<MatrixXd> adjacency = std::nullopt) {
  GibbsSampler s(data, cfg, seed, std::move(adjacency));
  return s.run();
}

}  // namespace nlmf
