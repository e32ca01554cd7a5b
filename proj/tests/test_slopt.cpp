#include <gtest/gtest.h>

#include "nlmf/rng.hpp"
#include "nlmf/slopt.hpp"
#include "oracles.hpp"

using namespace nlmf;

namespace {

MatrixXd random_sl(Rng& r, int H, double scale = 0.3) {
  MatrixXd A(H, H);
  for (auto& x : A.reshaped()) x = scale * r.normal();
  A.diagonal().array() -= A.trace() / H;
  return A.exp();
}

TruncatedCoRM random_corm(Rng& r, int H, int K) {
  std::vector<Atom> atoms;
  for (int k = 0; k < K; ++k) atoms.push_back({r.normal(0, 3), 0.3 + r.uniform()});
  VectorXd J(K);
  for (auto& x : J) x = 0.05 + 0.9 * r.uniform();
  MatrixXd M(H, K);
  for (auto& x : M.reshaped()) x = 0.1 + 2 * r.uniform();
  return TruncatedCoRM(atoms, J, M);
}

AlmProblem random_problem(Rng& r, int g, int H, int K) {
  const TruncatedCoRM c = random_corm(r, H, K);
  MatrixXd L(g, H);
  for (auto& x : L.reshaped()) x = 0.1 + r.uniform();
  return AlmProblem::from(c, LoadingsMatrix(L));
}

}  // namespace

// ---------------------------------------------------------------------------
// Loss

TEST(InterpLoss, SingleMeasureIsZero) {
  Rng r(1);
  const TruncatedCoRM c = random_corm(r, 1, 3);
  EXPECT_EQ(interp_loss(MatrixXd::Identity(1, 1), c), 0.0);
}

TEST(InterpLoss, FarApartMeasuresHaveNoOverlap) {
  // scores must be positive, so the cross weights are tiny rather than zero
  MatrixXd M(2, 2);
  M << 1, 1e-12, 1e-12, 1;
  const TruncatedCoRM c({{-50, 1}, {50, 1}}, VectorXd::Constant(2, 0.5), M);
  EXPECT_LT(interp_loss(MatrixXd::Identity(2, 2), c), 1e-10);
}

TEST(InterpLoss, GradientMatchesFd) {
  Rng r(2);
  for (int t = 0; t < 100; ++t) {
    const int H = 2 + static_cast<int>(r.index(4));
    const TruncatedCoRM c = random_corm(r, H, 2 + static_cast<int>(r.index(5)));
    const MatrixXd Q = random_sl(r, H);
    MatrixXd g;
    interp_loss(Q, c, &g);
    const MatrixXd fd = oracle::fd_gradient([&](const MatrixXd& X) { return interp_loss(X, c); }, Q);
    EXPECT_LT(oracle::rel_err(g, fd), 1e-5);
  }
}

TEST(InterpLoss, InvariantUnderRelabelling) {
  Rng r(3);
  for (int t = 0; t < 30; ++t) {
    const int H = 2 + static_cast<int>(r.index(4));
    const TruncatedCoRM c = random_corm(r, H, 4);
    const MatrixXd Q = random_sl(r, H);
    std::vector<int> p(H);
    std::iota(p.begin(), p.end(), 0);
    std::shuffle(p.begin(), p.end(), std::mt19937(t));
    MatrixXd P = MatrixXd::Zero(H, H);
    for (int i = 0; i < H; ++i) P(i, p[i]) = 1;
    EXPECT_NEAR(interp_loss(P * Q, c), interp_loss(Q, c), 1e-12 * std::max(1.0, interp_loss(Q, c)));
  }
}

// ---------------------------------------------------------------------------
// Algebra and exponential

TEST(ProjectSl, Examples) {
  EXPECT_EQ(project_sl(MatrixXd::Identity(3, 3)).norm(), 0.0);
  MatrixXd X(2, 2), want(2, 2);
  X << 1, 2, 0, -1;
  want << 2, 0, 2, -2;
  EXPECT_LT((project_sl(X) - want).norm(), 1e-15);
}

TEST(ProjectSl, TracelessAndLinear) {
  Rng r(4);
  for (int t = 0; t < 200; ++t) {
    const int H = 1 + static_cast<int>(r.index(7));
    MatrixXd X(H, H), Y(H, H);
    for (auto& x : X.reshaped()) x = r.normal(0, 1e3 * r.uniform());
    for (auto& x : Y.reshaped()) x = r.normal();
    for (auto mode : {SlProjection::GeneratorSum, SlProjection::Orthogonal}) {
      const MatrixXd P = project_sl(X, mode);
      EXPECT_LE(std::abs(P.trace()), 1e-12 * std::max(1.0, X.norm()));
      const double a = r.normal(), b = r.normal();
      EXPECT_LT((project_sl(a * X + b * Y, mode) - a * P - b * project_sl(Y, mode)).norm(),
                1e-12 * std::max(1.0, (a * X).norm()));
    }
  }
  EXPECT_THROW(project_sl(MatrixXd::Zero(2, 3)), InputError);
}

TEST(Expm, Examples) {
  EXPECT_LT((expm(MatrixXd::Zero(3, 3)) - MatrixXd::Identity(3, 3)).norm(), 1e-15);
  MatrixXd A = MatrixXd::Zero(2, 2);
  A(0, 0) = 1;
  A(1, 1) = -1;
  const MatrixXd E = expm(A);
  EXPECT_NEAR(E(0, 0), std::exp(1.0), 1e-14);
  EXPECT_NEAR(E(1, 1), std::exp(-1.0), 1e-14);
  EXPECT_NEAR(E.determinant(), 1.0, 1e-14);
}

TEST(Expm, InverseIdentity) {
  Rng r(5);
  for (int t = 0; t < 100; ++t) {
    const int H = 2 + static_cast<int>(r.index(5));
    MatrixXd A(H, H);
    for (auto& x : A.reshaped()) x = r.normal();
    A = project_sl(A, SlProjection::Orthogonal);
    EXPECT_LT((expm(A) * expm(-A) - MatrixXd::Identity(H, H)).norm(), 1e-9);
    EXPECT_NEAR(expm(A).determinant(), 1.0, 1e-9);
  }
}

// ---------------------------------------------------------------------------
// RATTLE

TEST(Rattle, ConstantObjectiveStaysPut) {
  Rng r(6);
  const MatrixXd Q0 = random_sl(r, 3);
  Objective f = [](const MatrixXd& Q, MatrixXd* g) {
    if (g) *g = MatrixXd::Zero(Q.rows(), Q.cols());
    return 1.0;
  };
  const RattleResult res = rattle_minimize(f, Q0, RattleConfig{}, 1e-8);
  EXPECT_EQ(res.iterations, 1);
  EXPECT_TRUE(res.converged);
  EXPECT_LT((res.Q - Q0).norm(), 1e-15);
}

TEST(Rattle, FindsDeterminantOneMinimizer) {
  MatrixXd D = MatrixXd::Zero(2, 2);
  D(0, 0) = 2;
  D(1, 1) = 0.5;
  Objective f = [&](const MatrixXd& Q, MatrixXd* g) {
    if (g) *g = 2 * (Q - D);
    return (Q - D).squaredNorm();
  };
  // grid oracle over diag(a, 1/a)
  double best_a = 0, best = INFINITY;
  for (int i = 1; i <= 400000; ++i) {
    const double a = 0.01 + i * 1e-5;
    const double v = (a - 2) * (a - 2) + (1 / a - 0.5) * (1 / a - 0.5);
    if (v < best) best = v, best_a = a;
  }
  RattleConfig cfg;
  cfg.max_iters = 100000;
  const RattleResult res = rattle_minimize(f, MatrixXd::Identity(2, 2), cfg, 1e-12);
  EXPECT_NEAR(res.Q(0, 0), best_a, 1e-4);
  EXPECT_NEAR(res.Q(1, 1), 1 / best_a, 1e-4);
  EXPECT_LT(std::abs(res.Q(0, 1)) + std::abs(res.Q(1, 0)), 1e-4);
  MatrixXd g;
  f(res.Q, &g);
  EXPECT_LT(algebra_direction(res.Q, g, SlProjection::GeneratorSum).norm(), 1e-4);
}

TEST(Rattle, DissipativeRegimeIsMonotone) {
  Rng r(7);
  for (int t = 0; t < 20; ++t) {
    const int H = 2 + static_cast<int>(r.index(3));
    const MatrixXd D = random_sl(r, H, 0.5);
    std::vector<double> vals;
    Objective f = [&](const MatrixXd& Q, MatrixXd* g) {
      if (g) *g = 2 * (Q - D);
      vals.push_back((Q - D).squaredNorm());
      return vals.back();
    };
    RattleConfig cfg;
    cfg.safeguard = false;  // every evaluation is then an iterate
    cfg.step = 1e-3;
    cfg.max_iters = 4000;
    rattle_minimize(f, MatrixXd::Identity(H, H), cfg, 0.0);
    for (std::size_t i = vals.size() / 2 + 1; i < vals.size(); ++i)
      ASSERT_LE(vals[i], vals[i - 1] + 1e-15) << "trial " << t << " iterate " << i;
  }
}

TEST(Rattle, IteratesStayOnTheGroup) {
  Rng r(8);
  for (int t = 0; t < 20; ++t) {
    const int H = 2 + static_cast<int>(r.index(5));
    const TruncatedCoRM c = random_corm(r, H, 6);
    Objective f = [&](const MatrixXd& Q, MatrixXd* g) {
      const double v = interp_loss(Q, c, g);
      EXPECT_LE(std::abs(Q.determinant() - 1), 1e-6);
      return v;
    };
    const RattleResult res = rattle_minimize(f, MatrixXd::Identity(H, H), RattleConfig{}, 1e-8);
    EXPECT_LE(res.max_det_dev, 1e-6);
  }
}

TEST(Rattle, SafeguardRecoversFromHugeStep) {
  Rng r(9);
  const TruncatedCoRM c = random_corm(r, 3, 6);
  RattleConfig cfg;
  cfg.step = 50.0;
  Objective f = [&](const MatrixXd& Q, MatrixXd* g) { return interp_loss(Q, c, g); };
  const RattleResult res = rattle_minimize(f, MatrixXd::Identity(3, 3), cfg, 1e-8);
  EXPECT_TRUE(std::isfinite(res.value));
  EXPECT_LE(res.value, interp_loss(MatrixXd::Identity(3, 3), c));
  EXPECT_LE(res.max_det_dev, cfg.det_tol);
  EXPECT_NEAR(res.Q.determinant(), 1.0, cfg.det_tol);
}

TEST(Rattle, DeterminantStaysAtOneOnIllConditionedRuns) {
  // large steps push iterates towards badly conditioned Q; accepted iterates
  // must still satisfy the determinant tolerance
  Rng r(12);
  for (int t = 0; t < 30; ++t) {
    const int H = 2 + static_cast<int>(r.index(4));
    const TruncatedCoRM c = random_corm(r, H, 8);
    RattleConfig cfg;
    cfg.step = 5.0;
    cfg.max_iters = 500;
    Objective f = [&](const MatrixXd& Q, MatrixXd* g) { return interp_loss(Q, c, g); };
    const RattleResult res = rattle_minimize(f, MatrixXd::Identity(H, H), cfg, 1e-10);
    EXPECT_LE(res.max_det_dev, cfg.det_tol);
    EXPECT_NEAR(res.Q.determinant(), 1.0, cfg.det_tol);
  }
}

TEST(Rattle, RejectsStartOffTheGroup) {
  Objective f = [](const MatrixXd&, MatrixXd*) { return 0.0; };
  EXPECT_THROW(rattle_minimize(f, 2 * MatrixXd::Identity(2, 2), RattleConfig{}, 1e-6), InputError);
}

// ---------------------------------------------------------------------------
// Augmented loss

TEST(AugmentedLoss, GradientMatchesFdBothForms) {
  Rng r(10);
  for (int t = 0; t < 100; ++t) {
    const int H = 2 + static_cast<int>(r.index(3));
    const AlmProblem p = random_problem(r, 3 + static_cast<int>(r.index(3)), H, 2 + static_cast<int>(r.index(4)));
    const MatrixXd Q = random_sl(r, H, 0.6);  // some constraints violated
    VectorXd gam(p.n_constraints());
    for (auto& x : gam) x = 20 * r.uniform();
    const double rho = 1 + 20 * r.uniform();
    for (auto form : {PenaltyForm::Hinge, PenaltyForm::Printed}) {
      MatrixXd g;
      augmented_loss(p, Q, rho, gam, form, &g);
      const MatrixXd fd = oracle::fd_gradient([&](const MatrixXd& X) { return augmented_loss(p, X, rho, gam, form); }, Q);
      EXPECT_LT(oracle::rel_err(g, fd), 1e-5);
    }
  }
}

TEST(AugmentedLoss, InactiveConstraintsContributeNothing) {
  Rng r(11);
  const AlmProblem p = random_problem(r, 4, 3, 5);
  const MatrixXd I = MatrixXd::Identity(3, 3);
  // at Q = I every c_j is strictly negative; gamma small enough keeps the hinge closed
  const VectorXd c = constraint_values(p, I);
  ASSERT_LT(c.maxCoeff(), 0.0);
  const double rho = 10;
  const VectorXd gam = (-c * rho * 0.5).cwiseMax(0.0);
  EXPECT_DOUBLE_EQ(augmented_loss(p, I, rho, gam), interp_loss_from_gram(p.C, I));
}

TEST(AugmentedLoss, PenaltyQuadraticInViolation) {
  // one group, one latent measure, one atom: c = (-lambda/q, -q m)
  AlmProblem p{MatrixXd::Ones(1, 1), MatrixXd::Ones(1, 1), MatrixXd::Ones(1, 1)};
  const VectorXd gam = VectorXd::Zero(2);
  // Q = -1 is outside SL(1) but the loss formula still applies: violations (1, 1)
  auto pen = [&](double q) { return augmented_loss(p, MatrixXd::Constant(1, 1, q), 4.0, gam); };
  EXPECT_NEAR(pen(-1.0), 0.5 * 4.0 * 2.0, 1e-12);
  EXPECT_NEAR(pen(-2.0), 0.5 * 4.0 * (0.25 + 4.0), 1e-12);
}

// ---------------------------------------------------------------------------
// ALM

TEST(Alm, SeparatedPositiveInstanceKeepsIdentity) {
  MatrixXd M(2, 2);
  M << 1, 1e-12, 1e-12, 1;
  const TruncatedCoRM c({{-50, 1}, {50, 1}}, VectorXd::Constant(2, 0.5), M);
  const LoadingsMatrix L(MatrixXd::Constant(3, 2, 0.7));
  const TransformResult res = alm_solve(c, L, AlmConfig{});
  ASSERT_TRUE(res.success());
  EXPECT_LT((res.Q - MatrixXd::Identity(2, 2)).norm(), 1e-2);
}

TEST(Alm, UndoesAKnownPositiveMixing) {
  // latent measures on disjoint far-apart atoms, then mixed by a positive R
  const std::vector<Atom> atoms{{-30, 1}, {-25, 1}, {25, 1}, {30, 1}};
  MatrixXd M0(2, 4);
  M0 << 1.0, 0.8, 0.0, 0.0, 0.0, 0.0, 1.2, 0.9;
  MatrixXd R(2, 2);
  R << 1.0, 0.4, 0.3, 1.0;
  R /= std::sqrt(R.determinant());
  // any positive Lambda works: Q = R^{-1} then gives Lambda R > 0 and Q M = M0 >= 0
  MatrixXd L(3, 2);
  L << 0.5, 0.2, 0.1, 0.9, 0.4, 0.4;
  const TruncatedCoRM c(atoms, VectorXd::Constant(4, 0.6), R * M0);
  const AlmProblem p = AlmProblem::from(c, LoadingsMatrix(L));
  const TransformResult res = alm_solve(p, AlmConfig{});
  ASSERT_TRUE(res.success());
  EXPECT_LE(res.loss, interp_loss_from_gram(p.C, R.inverse()) + 1e-6);
  EXPECT_LE(res.max_violation, 1e-6);
}

TEST(Alm, StatedDefaultsAreAccepted) {
  Rng r(12);
  AlmConfig cfg;
  cfg.rho = 10;
  cfg.gamma = 10;
  cfg.eps_star = 1e-6;
  cfg.eps = 1e-2;
  EXPECT_NO_THROW(cfg.validate());
  const AlmProblem p = random_problem(r, 5, 3, 6);
  const TransformResult res = alm_solve(p, cfg);
  EXPECT_TRUE(res.success());
  EXPECT_LE(res.loss, res.loss_identity);
}

TEST(Alm, SuccessImpliesFeasibleAndImproved) {
  Rng r(13);
  int ok = 0;
  for (int t = 0; t < 40; ++t) {
    const int H = 2 + static_cast<int>(r.index(3));
    const AlmProblem p = random_problem(r, 4 + static_cast<int>(r.index(5)), H, 4 + static_cast<int>(r.index(6)));
    const TransformResult res = alm_solve(p, AlmConfig{});
    EXPECT_LE(res.max_det_dev, 1e-6);
    if (!res.success()) {
      EXPECT_LT((res.Q - MatrixXd::Identity(H, H)).norm(), 1e-15);
      continue;
    }
    ++ok;
    EXPECT_GE((p.Lambda * res.Q.inverse()).minCoeff(), -1e-6);
    EXPECT_GE((res.Q * p.M).minCoeff(), -1e-6);
    EXPECT_LE(res.loss, res.loss_identity);
    EXPECT_NEAR(res.Q.determinant(), 1.0, 1e-6);
  }
  EXPECT_GE(ok, 38);
}

TEST(Alm, ConfigValidation) {
  AlmConfig cfg;
  cfg.eps = 1e-8;
  EXPECT_THROW(cfg.validate(), InputError);
  cfg = AlmConfig{};
  cfg.rattle.momentum = 1.0;
  EXPECT_THROW(cfg.validate(), InputError);
}
