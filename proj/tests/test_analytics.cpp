#include <gtest/gtest.h>

#include <random>

#include "nlmf/analytics.hpp"

using namespace nlmf;

namespace {

/// Plain std::random simulation of mu*_h(A), independent of the library samplers.
struct StdSim {
  std::mt19937_64 eng;
  explicit StdSim(std::uint64_t s) : eng(s) {}
  double gamma(double shape) { return std::gamma_distribution<double>(shape, 1.0)(eng); }
  double beta(double a, double b) {
    // small a: use the log-gamma trick to keep Beta(a, b) draws away from zero underflow
    const double x = std::log(std::uniform_real_distribution<double>()(eng)) / a + std::log(gamma(a + 1));
    const double y = std::log(gamma(b));
    const double mx = std::max(x, y);
    return std::exp(x - mx) / (std::exp(x - mx) + std::exp(y - mx));
  }
  bool coin(double p) { return std::uniform_real_distribution<double>()(eng) < p; }
};

double sample_corr(const std::vector<double>& x, const std::vector<double>& y) {
  const double n = static_cast<double>(x.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) mx += x[i] / n, my += y[i] / n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  return sxy / std::sqrt(sxx * syy);
}

}  // namespace

TEST(CormMoments, PrintedValues) {
  EXPECT_DOUBLE_EQ(corm_moments(1.0, 0.5).mean, 0.5);
  EXPECT_DOUBLE_EQ(corm_moments(1.0, 0.5).mixed, 1.125);
}

TEST(CormMoments, TruncatedMomentsMatchSimulation) {
  const int K = 10, n = 400000;
  const double phi = 1.5, alpha = 0.4;
  StdSim s(1);
  double m = 0, sq = 0, cr = 0;
  for (int i = 0; i < n; ++i) {
    double a = 0, b = 0;
    for (int k = 0; k < K; ++k) {
      if (!s.coin(alpha)) continue;
      const double J = s.beta(phi / K, phi);
      a += J * s.gamma(phi);
      b += J * s.gamma(phi);
    }
    m += a / n;
    sq += a * a / n;
    cr += a * b / n;
  }
  const TruncatedMoments t = truncated_corm_moments(phi, K, alpha);
  EXPECT_NEAR(m, t.mean, 0.01 * t.mean);
  EXPECT_NEAR(sq, t.second, 0.03 * t.second);
  EXPECT_NEAR(cr, t.cross, 0.03 * t.cross);
}

TEST(SampleCormMasses, SameLawAsDirectSimulation) {
  // two-sample KS of mu*(A) and mu*(Theta) against naive per-atom Beta draws
  const int n = 20000, K = 50;
  auto ks = [](std::vector<double> a, std::vector<double> b) {
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    double d = 0;
    std::size_t i = 0, j = 0;
    while (i < a.size() && j < b.size()) {
      if (a[i] <= b[j]) ++i;
      else ++j;
      d = std::max(d, std::abs(static_cast<double>(i) / a.size() - static_cast<double>(j) / b.size()));
    }
    return d;
  };
  for (double phi : {1.0, 2.5}) {
    StdSim s(7);
    Rng r(8);
    std::vector<double> inA_lib, tot_lib, inA_ref, tot_ref;
    for (int i = 0; i < n; ++i) {
      const CormDraw d = sample_corm_masses(1, K, phi, 0.3, r);
      inA_lib.push_back(d.in_A[0]);
      tot_lib.push_back(d.total[0]);
      double a = 0, t = 0;
      for (int k = 0; k < K; ++k) {
        const bool in = s.coin(0.3);
        const double w = s.beta(phi / K, phi) * s.gamma(phi);
        t += w;
        if (in) a += w;
      }
      inA_ref.push_back(a);
      tot_ref.push_back(t);
    }
    const double crit = 1.95 * std::sqrt(2.0 / n);  // 0.1% level
    EXPECT_LT(ks(inA_lib, inA_ref), crit) << "phi " << phi;
    EXPECT_LT(ks(tot_lib, tot_ref), crit) << "phi " << phi;
  }
}

TEST(CorrIid, LimitsAndMonotonicity) {
  const TruncatedMoments t = truncated_corm_moments(1.0, 50, 0.5);
  EXPECT_NEAR(corr_iid_scores(4, 1e9, t.mean, t.var(), t.cov()), 1.0, 1e-6);
  for (int H : {1, 2, 4, 8, 16}) {
    const double a = corr_iid_scores(H, 1.0, t.mean, t.var(), t.cov());
    EXPECT_GT(a, 0.0);
    EXPECT_LT(a, 1.0);
    EXPECT_GT(corr_iid_scores(2 * H, 1.0, t.mean, t.var(), t.cov()), a);
    EXPECT_GT(corr_iid_scores(H, 2.0, t.mean, t.var(), t.cov()), a);
  }
}

TEST(CorrIid, DerivedFormulaMatchesSimulation) {
  // mu_j(A) = sum_h lambda_jh mu*_h(A) with lambda iid Ga(psi, 1)
  const int H = 4, K = 20, n = 200000;
  const double psi = 1.0, phi = 1.0, alpha = 0.5;
  StdSim s(2);
  std::vector<double> x(n), y(n);
  for (int i = 0; i < n; ++i) {
    VectorXd mu = VectorXd::Zero(H);
    for (int k = 0; k < K; ++k) {
      if (!s.coin(alpha)) continue;
      const double J = s.beta(phi / K, phi);
      for (int h = 0; h < H; ++h) mu[h] += J * s.gamma(phi);
    }
    for (int h = 0; h < H; ++h) {
      x[i] += s.gamma(psi) * mu[h];
      y[i] += s.gamma(psi) * mu[h];
    }
  }
  const double r = sample_corr(x, y);
  const TruncatedMoments t = truncated_corm_moments(phi, K, alpha);
  const double derived = corr_iid_scores_derived(H, psi, t.second, t.var(), t.cov());
  // delta-method SE of a sample correlation is at most (1 - r^2)/sqrt(n) for Gaussian data;
  // these variables are heavy tailed, so allow twice that
  EXPECT_NEAR(r, derived, 3 * 2 * (1 - r * r) / std::sqrt(n));
  // the printed numerator (m_A) is a different number at this point
  EXPECT_GT(std::abs(corr_iid_scores(H, psi, t.mean, t.var(), t.cov()) - derived), 0.01);
}

TEST(CorrIid, LibrarySimulatorAgreesWithDerivedFormula) {
  PriorSpec spec;
  spec.H = 4;
  spec.K = 20;
  spec.psi = 1.0;
  const McEstimate mc = mc_correlation(spec, 0.5, 200000, Rng(3));
  const TruncatedMoments t = truncated_corm_moments(1.0, 20, 0.5);
  EXPECT_LT(std::abs(z_score(corr_iid_scores_derived(4, 1.0, t.second, t.var(), t.cov()), mc)), 3.0);
}

TEST(MgpCov, CovBelowVarAndDomain) {
  const TruncatedMoments t = truncated_corm_moments(2.0, 50, 0.5);
  for (int H : {1, 4, 8, 16})
    for (double a2 : {2.5, 3.0, 5.0}) {
      const CovVar p = mgp_cov_terms(2.5, a2, 6.0, H, t.second, t.cross, t.mean);
      EXPECT_LT(p.cov, p.var);
      const CovVar d = mgp_cov_terms_derived(2.5, a2, 6.0, H, t.second, t.cross, t.mean);
      EXPECT_LT(d.cov, d.var);
    }
  EXPECT_THROW(mgp_cov_terms(2.0, 3.0, 6.0, 4, 1, 1, 1), DomainError);
  EXPECT_THROW(mgp_cov_terms(2.5, 3.0, 4.0, 4, 1, 1, 1), DomainError);
}

// Close to the moment boundary a2 -> 2 the loadings variance explodes and the
// correlation rises with a2 instead (0.654 -> 0.656 from 2.5 to 3 at H = 4).
TEST(MgpCov, LargerA2WeakensCorrelation) {
  const TruncatedMoments t = truncated_corm_moments(2.0, 50, 0.5);
  for (int H : {4, 8, 16}) {
    double prev = 2.0, prev_printed = 2.0;
    for (double a2 : {3.0, 4.0, 6.0, 10.0}) {
      const double cp = mgp_cov_terms(2.5, a2, 6.0, H, t.second, t.cross, t.mean).corr();
      EXPECT_LT(cp, prev_printed);
      prev_printed = cp;
      const double c = mgp_cov_terms_derived(2.5, a2, 6.0, H, t.second, t.cross, t.mean).corr();
      EXPECT_LT(c, prev) << "H " << H << " a2 " << a2;
      prev = c;
    }
  }
}

TEST(MgpCov, DerivedTermsEqualTheMomentExpansion) {
  // cov = sum_{h,k} E[l_jh l_lk] E[mu_h mu_k] - (sum_h E[l_h] m)^2, term by term
  MgpParams p{2.5, 3.0, 6.0};
  const TruncatedMoments t = truncated_corm_moments(2.0, 50, 0.5);
  for (int H : {1, 2, 4, 8}) {
    double cov = 0, var = 0, mm = 0;
    for (int h = 0; h < H; ++h) {
      mm += mgp_lambda_mean_moment(p, h) * t.mean;
      for (int k = 0; k < H; ++k) {
        const double S = h == k ? t.second : t.cross;
        cov += mgp_lambda_product_moment(p, h, k, false) * S;
        var += mgp_lambda_product_moment(p, h, k, true) * S;
      }
    }
    const CovVar d = mgp_cov_terms_derived(p.a1, p.a2, p.nu, H, t.second, t.cross, t.mean);
    EXPECT_NEAR(d.cov, cov - mm * mm, 1e-12 * std::abs(var));
    EXPECT_NEAR(d.var, var - mm * mm, 1e-12 * std::abs(var));
  }
}

TEST(MgpCov, LambdaMomentsMatchSimulation) {
  // light-tailed parameters so that second moments of products exist comfortably
  MgpParams p{6.0, 7.0, 20.0};
  const int n = 400000;
  StdSim s(4);
  double m1 = 0, same = 0, cross = 0, diag = 0;
  for (int i = 0; i < n; ++i) {
    const double t1 = s.gamma(p.a1), t2 = t1 * s.gamma(p.a2);
    auto lam = [&](double tau) { return 1.0 / (tau * s.gamma(p.nu / 2) / (p.nu / 2)); };
    const double a = lam(t1), b = lam(t2), d = lam(t1);
    m1 += b / n;
    same += a * b / n;   // same row, h = 0, k = 1
    cross += a * d / n;  // different rows, h = k = 0
    diag += a * a / n;   // same entry
  }
  EXPECT_NEAR(m1, mgp_lambda_mean_moment(p, 1), 0.01 * m1);
  EXPECT_NEAR(same, mgp_lambda_product_moment(p, 0, 1, true), 0.02 * same);
  EXPECT_NEAR(cross, mgp_lambda_product_moment(p, 0, 0, false), 0.02 * cross);
  EXPECT_NEAR(diag, mgp_lambda_product_moment(p, 0, 0, true), 0.02 * diag);
}

TEST(ExpectationMc, SymmetryAndComplement) {
  PriorSpec spec;
  spec.H = 3;
  const McEstimate z = expectation_mc(spec, 0.0, 5000, Rng(5));
  EXPECT_EQ(z.mean, 0.0);
  const McEstimate h = expectation_mc(spec, 0.5, 40000, Rng(6));
  EXPECT_LT(std::abs(h.mean - 0.5), 3 * h.se);
  const McEstimate a = expectation_mc(spec, 0.3, 40000, Rng(7)), b = expectation_mc(spec, 0.7, 40000, Rng(8));
  EXPECT_LT(std::abs(a.mean + b.mean - 1.0), 3 * std::hypot(a.se, b.se));
}

TEST(ExpectationMc, SameResultForAnyThreadCount) {
  PriorSpec spec;
  const McEstimate a = expectation_mc(spec, 0.4, 30000, Rng(9), 1), b = expectation_mc(spec, 0.4, 30000, Rng(9), 3);
  EXPECT_EQ(a.mean, b.mean);
  EXPECT_EQ(a.se, b.se);
}

TEST(JumpRatio, IidVarianceDecreasesAndMeanIsZero) {
  PriorSpec spec;
  const std::vector<int> Hs{1, 2, 4, 8, 16, 32};
  const auto rows = jump_ratio_study(spec, Hs, 20000, Rng(10));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    EXPECT_LT(std::abs(rows[i].mean.mean), 3.5 * rows[i].mean.se) << rows[i].H;
    if (i) {
      EXPECT_LT(rows[i].variance, rows[i - 1].variance);
    }
  }
  EXPECT_LT(rows.back().hi, rows.front().lo);
}

TEST(JumpRatio, IdenticalRowsGiveZero) {
  Rng r(11);
  const VectorXd lam = VectorXd::NullaryExpr(5, [&] { return r.gamma(1.0, 1.0); });
  const VectorXd m = VectorXd::NullaryExpr(5, [&] { return r.gamma(1.0, 1.0); });
  EXPECT_EQ(std::log(lam.dot(m)) - std::log(lam.dot(m)), 0.0);
}

TEST(JumpRatio, MgpDecaysSlowerThanIid) {
  PriorSpec iid, mgp;
  mgp.kind = LoadingsKind::Mgp;
  const std::vector<int> Hs{8, 32};
  const auto a = jump_ratio_study(iid, Hs, 20000, Rng(12)), b = jump_ratio_study(mgp, Hs, 20000, Rng(12));
  for (std::size_t i = 0; i < Hs.size(); ++i) EXPECT_GT(b[i].lo, a[i].hi) << Hs[i];
}
