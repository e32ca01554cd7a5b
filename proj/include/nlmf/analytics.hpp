#pragma once

// Prior moments and correlations of the latent measure factor model, each
// with a Monte Carlo counterpart, plus the prior expectation of p_j(A) and the
// jump-ratio study.
//
// Monte Carlo loops are split into fixed chunks with their own RNG substreams,
// so results depend on the seed only, never on the thread count.

#include <Eigen/Dense>
#include <boost/math/special_functions/beta.hpp>

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <thread>
#include <vector>

#include "nlmf/errors.hpp"
#include "nlmf/priors.hpp"
#include "nlmf/rng.hpp"

namespace nlmf {

enum class LoadingsKind { IidGamma, Mgp, Car };

struct PriorSpec {
  int H = 4;
  int K = 20;
  double phi = 1.0;
  LoadingsKind kind = LoadingsKind::IidGamma;
  double psi = 1.0;
  MgpParams mgp;
  std::shared_ptr<const CarPrior> car;  // required for Car
  int j = 0, l = 1;                     // the two groups compared (Car only)

  void validate() const {
    if (H < 1 || K < 1 || !(phi > 0.0)) throw InputError("PriorSpec: need H, K >= 1 and phi > 0");
    if (kind == LoadingsKind::IidGamma && !(psi > 0.0)) throw InputError("PriorSpec: psi must be positive");
    if (kind == LoadingsKind::Mgp) mgp.validate();
    if (kind == LoadingsKind::Car) {
      if (!car) throw InputError("PriorSpec: CAR loadings need a CarPrior");
      if (j < 0 || l < 0 || j >= car->g() || l >= car->g()) throw InputError("PriorSpec: group index out of range");
    }
  }
};

struct McEstimate {
  double mean = 0.0;
  double se = 0.0;
  long n = 0;
};

inline double z_score(double formula, const McEstimate& mc) {
  return mc.se > 0.0 ? (mc.mean - formula) / mc.se : (mc.mean == formula ? 0.0 : INFINITY);
}

// ---------------------------------------------------------------------------
// Closed forms

struct CormMoments {
  double mean;   // E[mu*_h(A)]
  double mixed;  // E[mu*_h(A) mu*_k(A)], h != k
};

/// Gamma-process marginals, as printed: alpha and (alpha + alpha^2) phi^2 B(1,phi)^2 3/2.
inline CormMoments corm_moments(double phi, double alpha_A) {
  if (!(phi > 0.0) || !(alpha_A >= 0.0)) throw InputError("corm_moments: need phi > 0, alpha >= 0");
  const double b = 1.0 / phi;  // B(1, phi)
  return {alpha_A, (alpha_A + alpha_A * alpha_A) * phi * phi * b * b * 1.5};
}

/// Exact moments of mu*_h(A) under the truncated prior with K atoms,
/// J ~ Beta(phi/K, phi), m ~ Ga(phi, 1), atoms in A with probability alpha.
struct TruncatedMoments {
  double mean;    // m_A
  double second;  // E[mu*_h(A)^2]
  double cross;   // E[mu*_h(A) mu*_k(A)], h != k

  double var() const { return second - mean * mean; }
  double cov() const { return cross - mean * mean; }  // c_A
};

inline TruncatedMoments truncated_corm_moments(double phi, int K, double alpha_A) {
  if (!(phi > 0.0) || K < 1 || !(alpha_A >= 0.0 && alpha_A <= 1.0))
    throw InputError("truncated_corm_moments: need phi > 0, K >= 1, alpha in [0,1]");
  const double a = phi / K, b = phi;
  const double ej = a / (a + b);
  const double ej2 = a * (a + 1.0) / ((a + b) * (a + b + 1.0));
  const double k = K;
  const double pairs = k * (k - 1.0) * alpha_A * alpha_A * phi * phi * ej * ej;
  return {k * alpha_A * phi * ej, k * alpha_A * phi * (phi + 1.0) * ej2 + pairs, k * alpha_A * phi * phi * ej2 + pairs};
}

/// Correlation of mu_j(A), mu_l(A) for iid Ga(psi,1) loadings, as printed:
/// (1 + m_A / ((Var + c_A (H-1)) psi))^{-1}.
inline double corr_iid_scores(int H, double psi, double m_A, double var_A, double c_A) {
  if (H < 1 || !(psi > 0.0)) throw InputError("corr_iid_scores: need H >= 1, psi > 0");
  const double den = (var_A + c_A * (H - 1)) * psi;
  if (!(den > 0.0)) throw DomainError("corr_iid_scores: nonpositive denominator");
  return 1.0 / (1.0 + m_A / den);
}

/// Same ratio with the numerator that the covariance and variance
/// expressions actually produce: E[mu*(A)^2] in place of m_A.
inline double corr_iid_scores_derived(int H, double psi, double second_A, double var_A, double c_A) {
  return corr_iid_scores(H, psi, second_A, var_A, c_A);
}

struct CovVar {
  double cov;
  double var;
  double corr() const { return cov / var; }
};

namespace detail {

inline CovVar mgp_cov_impl(double a1, double a2, double nu, int H, double second, double cross, double mean,
                           int third_offset) {
  if (!(a1 > 2.0 && a2 > 2.0 && nu > 4.0)) throw DomainError("mgp_cov_terms: needs a1 > 2, a2 > 2, nu > 4");
  if (H < 1) throw InputError("mgp_cov_terms: H >= 1");
  double s1 = 0.0, s2 = 0.0, s3 = 0.0;
  for (int h = 1; h <= H; ++h) {
    s1 += std::pow(a2 - 1.0, -h + 1) * std::pow(a2 - 2.0, -h + 1);
    for (int k = h + 1; k <= H; ++k) s2 += 2.0 * std::pow(a2 - 1.0, -k + 1) * std::pow(a2 - 2.0, -h + 1);
    for (int k = 1; k <= H; ++k) s3 += std::pow(a2 - 1.0, -h - k + third_offset);
  }
  const double f1 = 1.0 / ((a1 - 1.0) * (a1 - 2.0));
  const double r = nu / (nu - 2.0);
  const double common = (cross * s2 * f1 - mean * mean * s3 / ((a1 - 1.0) * (a1 - 1.0))) * r * r;
  return {second * s1 * f1 * r * r + common, second * s1 * f1 * nu * nu / ((nu - 2.0) * (nu - 4.0)) + common};
}

}  // namespace detail

/// Covariance and variance of mu_j(A) under MGP loadings, both expressions
/// evaluated as printed (third term exponent -h-k+1). `cross` is c_A + m_A^2.
inline CovVar mgp_cov_terms(double a1, double a2, double nu, int H, double second, double cross, double mean) {
  return detail::mgp_cov_impl(a1, a2, nu, H, second, cross, mean, 1);
}

/// As above with the third-term exponent -h-k+2 implied by
/// E[lambda_jh] = (nu/(nu-2)) (a1-1)^{-1} (a2-1)^{-(h-1)}.
inline CovVar mgp_cov_terms_derived(double a1, double a2, double nu, int H, double second, double cross,
                                    double mean) {
  return detail::mgp_cov_impl(a1, a2, nu, H, second, cross, mean, 2);
}

/// E[lambda_jh lambda_lk] under MGP, computed factor by factor from
/// inverse-gamma moments. h, k are 0-based.
inline double mgp_lambda_product_moment(const MgpParams& p, int h, int k, bool same_row) {
  if (!(p.a1 > 2.0 && p.a2 > 2.0 && p.nu > 4.0)) throw DomainError("mgp moments need a1 > 2, a2 > 2, nu > 4");
  auto inv1 = [&](int l) { return 1.0 / ((l == 0 ? p.a1 : p.a2) - 1.0); };
  auto inv2 = [&](int l) {
    const double a = l == 0 ? p.a1 : p.a2;
    return 1.0 / ((a - 1.0) * (a - 2.0));
  };
  double t = 1.0;
  for (int l = 0; l <= std::max(h, k); ++l) t *= l <= std::min(h, k) ? inv2(l) : inv1(l);
  const double r = p.nu / (p.nu - 2.0);
  const double f = same_row && h == k ? p.nu * p.nu / ((p.nu - 2.0) * (p.nu - 4.0)) : r * r;
  return t * f;
}

inline double mgp_lambda_mean_moment(const MgpParams& p, int h) {
  double t = p.nu / (p.nu - 2.0);
  for (int l = 0; l <= h; ++l) t /= (l == 0 ? p.a1 : p.a2) - 1.0;
  return t;
}

// ---------------------------------------------------------------------------
// Prior simulation

/// mu*_h(A) and mu*_h(Theta) for h = 1..H from one truncated prior draw.
struct CormDraw {
  VectorXd in_A;
  VectorXd total;
};

/// Jumps below this never reach a double-precision sum of O(1) masses.
inline constexpr double kNegligibleJump = 1e-40;

/// Survival of Beta(a, b) at kNegligibleJump, and the inverse of the survival
/// function; closed form for b = 1.
struct JumpLaw {
  double a, b, tail;
  JumpLaw(double a_, double b_) : a(a_), b(b_) {
    tail = b == 1.0 ? -std::expm1(a * std::log(kNegligibleJump)) : boost::math::ibetac(a, b, kNegligibleJump);
  }
  double from_survival(double s) const {
    return b == 1.0 ? std::exp(std::log1p(-s) / a) : boost::math::ibetac_inv(a, b, s);
  }
};

/// Only jumps above kNegligibleJump are generated: their positions come from
/// geometric gaps and their values from the Beta law truncated to the tail.
template <RandomSource R>
CormDraw sample_corm_masses(int H, int K, double phi, double alpha_A, R& rng, bool need_total = true) {
  CormDraw d{VectorXd::Zero(H), VectorXd::Zero(H)};
  const JumpLaw law(phi / K, phi);
  const double log_miss = std::log1p(-law.tail);
  long k = -1;
  for (;;) {
    if (law.tail < 1.0) {
      const double gap = std::floor(std::log(rng.uniform()) / log_miss);
      if (gap >= static_cast<double>(K)) break;
      k += 1 + static_cast<long>(gap);
    } else {
      ++k;
    }
    if (k >= K) break;
    const bool inA = alpha_A > 0.0 && rng.uniform() < alpha_A;
    if (!inA && !need_total) continue;
    const double J = std::max(law.from_survival(law.tail * rng.uniform()), kNegligibleJump);
    for (int h = 0; h < H; ++h) {
      const double w = rng.gamma(phi, 1.0) * J;
      d.total[h] += w;
      if (inA) d.in_A[h] += w;
    }
  }
  return d;
}

/// Two loadings rows (groups j and l) drawn jointly; MGP rows share theta.
template <RandomSource R>
MatrixXd sample_loadings_pair(const PriorSpec& s, R& rng) {
  MatrixXd L(2, s.H);
  switch (s.kind) {
    case LoadingsKind::IidGamma:
      for (int r = 0; r < 2; ++r)
        for (int h = 0; h < s.H; ++h) L(r, h) = rng.gamma(s.psi, 1.0);
      break;
    case LoadingsKind::Mgp: {
      double log_tau = 0.0;
      for (int h = 0; h < s.H; ++h) {
        log_tau += std::log(rng.gamma(h == 0 ? s.mgp.a1 : s.mgp.a2, 1.0));
        for (int r = 0; r < 2; ++r)
          L(r, h) = std::exp(-log_tau - std::log(rng.gamma(s.mgp.nu / 2.0, s.mgp.nu / 2.0)));
      }
      break;
    }
    case LoadingsKind::Car:
      for (int h = 0; h < s.H; ++h) {
        const VectorXd x = s.car->sample(rng);
        L(0, h) = std::exp(x[s.j]);
        L(1, h) = std::exp(x[s.l]);
      }
      break;
  }
  return L;
}

/// Runs body(chunk_rng, begin, end) over fixed chunks of [0, n) and returns
/// per-chunk results in chunk order.
template <class T, class Body>
std::vector<T> run_chunks(long n, long chunk, const Rng& rng, int threads, Body body) {
  if (n < 1 || chunk < 1) throw InputError("run_chunks: need n, chunk >= 1");
  const long nchunks = (n + chunk - 1) / chunk;
  std::vector<T> out(static_cast<std::size_t>(nchunks));
  auto work = [&](long c) {
    Rng r = rng.substream(static_cast<std::uint64_t>(c));
    out[c] = body(r, c * chunk, std::min(n, (c + 1) * chunk));
  };
  threads = std::max(1, std::min<int>(threads, static_cast<int>(nchunks)));
  if (threads == 1) {
    for (long c = 0; c < nchunks; ++c) work(c);
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < threads; ++t)
      pool.emplace_back([&, t] {
        for (long c = t; c < nchunks; c += threads) work(c);
      });
    for (auto& th : pool) th.join();
  }
  return out;
}

/// Running sums for a mean and its standard error.
struct MeanAcc {
  long n = 0;
  double sum = 0.0, sumsq = 0.0;
  void add(double x) {
    ++n;
    sum += x;
    sumsq += x * x;
  }
  void merge(const MeanAcc& o) {
    n += o.n;
    sum += o.sum;
    sumsq += o.sumsq;
  }
  McEstimate estimate() const {
    McEstimate e;
    e.n = n;
    e.mean = sum / n;
    const double var = n > 1 ? std::max(0.0, (sumsq - n * e.mean * e.mean) / (n - 1)) : 0.0;
    e.se = std::sqrt(var / n);
    return e;
  }
};

/// Prior mean of p_j(A) = mu_j(A) / mu_j(Theta).
inline McEstimate expectation_mc(const PriorSpec& s, double alpha_A, long n_draws, const Rng& rng, int threads = 1) {
  s.validate();
  if (!(alpha_A >= 0.0 && alpha_A <= 1.0)) throw InputError("expectation_mc: alpha must lie in [0,1]");
  auto parts = run_chunks<MeanAcc>(n_draws, 10000, rng, threads, [&](Rng& r, long b, long e) {
    MeanAcc acc;
    for (long i = b; i < e; ++i) {
      const CormDraw d = sample_corm_masses(s.H, s.K, s.phi, alpha_A, r);
      const VectorXd lam = sample_loadings_pair(s, r).row(0).transpose();
      const double tot = lam.dot(d.total);
      acc.add(tot > 0.0 ? lam.dot(d.in_A) / tot : 0.0);
    }
    return acc;
  });
  MeanAcc all;
  for (const auto& p : parts) all.merge(p);
  return all.estimate();
}

/// Sums needed for a correlation, mergeable across batches.
struct CorrAcc {
  double n = 0, sx = 0, sy = 0, sxx = 0, syy = 0, sxy = 0;
  void add(double x, double y) {
    n += 1;
    sx += x;
    sy += y;
    sxx += x * x;
    syy += y * y;
    sxy += x * y;
  }
  void merge(const CorrAcc& o, double sign = 1.0) {
    n += sign * o.n;
    sx += sign * o.sx;
    sy += sign * o.sy;
    sxx += sign * o.sxx;
    syy += sign * o.syy;
    sxy += sign * o.sxy;
  }
  double corr() const {
    const double mx = sx / n, my = sy / n;
    return (sxy / n - mx * my) / std::sqrt((sxx / n - mx * mx) * (syy / n - my * my));
  }
};

/// Estimate from equal batches with a delete-one-batch jackknife standard error.
template <class Acc, class Stat>
McEstimate batch_jackknife(const std::vector<Acc>& batches, Stat stat) {
  Acc all;
  for (const auto& b : batches) all.merge(b);
  McEstimate e;
  e.mean = stat(all);
  const double B = static_cast<double>(batches.size());
  std::vector<double> loo;
  double m = 0.0;
  for (const auto& b : batches) {
    Acc a = all;
    a.merge(b, -1.0);
    loo.push_back(stat(a));
    m += loo.back();
  }
  m /= B;
  double ss = 0.0;
  for (double v : loo) ss += (v - m) * (v - m);
  e.se = std::sqrt((B - 1.0) / B * ss);
  return e;
}

/// Monte Carlo correlation of mu_j(A) and mu_l(A) from raw prior draws.
inline McEstimate mc_correlation(const PriorSpec& s, double alpha_A, long n_draws, const Rng& rng, int threads = 1) {
  s.validate();
  const long chunk = std::max(1L, n_draws / 50);
  auto parts = run_chunks<CorrAcc>(n_draws, chunk, rng, threads, [&](Rng& r, long b, long e) {
    CorrAcc acc;
    for (long i = b; i < e; ++i) {
      const CormDraw d = sample_corm_masses(s.H, s.K, s.phi, alpha_A, r, false);
      const MatrixXd L = sample_loadings_pair(s, r);
      acc.add(L.row(0).dot(d.in_A), L.row(1).dot(d.in_A));
    }
    return acc;
  });
  auto out = batch_jackknife(parts, [](const CorrAcc& a) { return a.corr(); });
  out.n = n_draws;
  return out;
}

/// Moments of mu*(A) accumulated for the conditional (Rao-Blackwellized)
/// correlation: sum of mu_h, and of mu_h mu_k.
struct MomentAcc {
  double n = 0;
  VectorXd s1;
  MatrixXd s2;
  void add(const VectorXd& x) {
    if (s1.size() == 0) {
      s1 = VectorXd::Zero(x.size());
      s2 = MatrixXd::Zero(x.size(), x.size());
    }
    n += 1;
    s1 += x;
    s2 += x * x.transpose();
  }
  void merge(const MomentAcc& o, double sign = 1.0) {
    if (s1.size() == 0) {
      s1 = VectorXd::Zero(o.s1.size());
      s2 = MatrixXd::Zero(o.s1.size(), o.s1.size());
    }
    n += sign * o.n;
    s1 += sign * o.s1;
    s2 += sign * o.s2;
  }
};

/// Correlation under MGP loadings with the loadings integrated out exactly
/// (inverse-gamma moments per entry pair) and Monte Carlo over mu* only.
/// The loadings have heavy tails at the tested parameters, which makes raw
/// sample correlations unusable as an oracle.
inline McEstimate mgp_correlation_mc(const PriorSpec& s, double alpha_A, long n_draws, const Rng& rng,
                                     int threads = 1) {
  s.validate();
  if (s.kind != LoadingsKind::Mgp) throw InputError("mgp_correlation_mc: MGP spec required");
  const int H = s.H;
  MatrixXd Ecross(H, H), Esame(H, H);
  VectorXd Emean(H);
  for (int h = 0; h < H; ++h) {
    Emean[h] = mgp_lambda_mean_moment(s.mgp, h);
    for (int k = 0; k < H; ++k) {
      Ecross(h, k) = mgp_lambda_product_moment(s.mgp, h, k, false);
      Esame(h, k) = mgp_lambda_product_moment(s.mgp, h, k, true);
    }
  }
  const long chunk = std::max(1L, n_draws / 50);
  auto parts = run_chunks<MomentAcc>(n_draws, chunk, rng, threads, [&](Rng& r, long b, long e) {
    MomentAcc acc;
    for (long i = b; i < e; ++i) acc.add(sample_corm_masses(H, s.K, s.phi, alpha_A, r, false).in_A);
    return acc;
  });
  auto stat = [&](const MomentAcc& a) {
    const VectorXd m = a.s1 / a.n;
    const MatrixXd S = a.s2 / a.n;
    const double mm = Emean.dot(m);
    const double cov = (Ecross.array() * S.array()).sum() - mm * mm;
    const double var = (Esame.array() * S.array()).sum() - mm * mm;
    return cov / var;
  };
  auto out = batch_jackknife(parts, stat);
  out.n = n_draws;
  return out;
}

/// Check of the gamma-process mixed moment: formula value
/// against a truncated-prior Monte Carlo estimate (K atoms).
struct MixedMomentCheck {
  double formula;
  McEstimate mc;
  double z;
};

inline MixedMomentCheck mixed_moment_check(double phi, double alpha_A, int K, long n_draws, const Rng& rng,
                                           int threads = 1) {
  const double formula = corm_moments(phi, alpha_A).mixed;
  auto parts = run_chunks<MeanAcc>(n_draws, std::max(1L, n_draws / 50), rng, threads, [&](Rng& r, long b, long e) {
    MeanAcc acc;
    for (long i = b; i < e; ++i) {
      const CormDraw d = sample_corm_masses(2, K, phi, alpha_A, r, false);
      acc.add(d.in_A[0] * d.in_A[1]);
    }
    return acc;
  });
  MeanAcc all;
  for (const auto& p : parts) all.merge(p);
  MixedMomentCheck out{formula, all.estimate(), 0.0};
  out.z = z_score(formula, out.mc);
  return out;
}

// ---------------------------------------------------------------------------
// Jump ratio

struct JumpRatioRow {
  int H;
  McEstimate mean;     // of log r
  double variance;     // sample variance of log r
  double variance_se;  // from the fourth central moment
  double lo, hi;       // 95% interval for the variance
};

/// log r_jl^k = log (Lambda M)_jk - log (Lambda M)_lk for one atom k,
/// simulated for each H in the grid.
inline std::vector<JumpRatioRow> jump_ratio_study(const PriorSpec& base, const std::vector<int>& Hs, long n_draws,
                                                  const Rng& rng) {
  if (n_draws < 4) throw InputError("jump_ratio_study: need at least 4 draws");
  std::vector<JumpRatioRow> out;
  for (std::size_t g = 0; g < Hs.size(); ++g) {
    PriorSpec s = base;
    s.H = Hs[g];
    s.validate();
    Rng r = rng.substream(static_cast<std::uint64_t>(Hs[g]));
    std::vector<double> x(static_cast<std::size_t>(n_draws));
    for (auto& v : x) {
      const MatrixXd L = sample_loadings_pair(s, r);
      VectorXd m(s.H);
      for (int h = 0; h < s.H; ++h) m[h] = r.gamma(s.phi, 1.0);
      v = std::log(L.row(0).dot(m)) - std::log(L.row(1).dot(m));
    }
    const double n = static_cast<double>(n_draws);
    double mean = 0.0;
    for (double v : x) mean += v;
    mean /= n;
    double m2 = 0.0, m4 = 0.0;
    for (double v : x) {
      const double d = (v - mean) * (v - mean);
      m2 += d;
      m4 += d * d;
    }
    m2 /= n;
    m4 /= n;
    JumpRatioRow row;
    row.H = s.H;
    row.variance = m2 * n / (n - 1.0);
    row.mean = {mean, std::sqrt(row.variance / n), n_draws};
    row.variance_se = std::sqrt(std::max(0.0, (m4 - m2 * m2 * (n - 3.0) / (n - 1.0)) / n));
    row.lo = row.variance - 1.96 * row.variance_se;
    row.hi = row.variance + 1.96 * row.variance_se;
    out.push_back(row);
  }
  return out;
}

}  // namespace nlmf
