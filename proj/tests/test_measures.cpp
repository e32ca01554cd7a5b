#include <gtest/gtest.h>

#include "nlmf/measures.hpp"
#include "nlmf/rng.hpp"
#include "oracles.hpp"

using namespace nlmf;

namespace {

std::vector<Atom> random_atoms(Rng& r, int K) {
  std::vector<Atom> a;
  for (int k = 0; k < K; ++k) a.push_back({r.normal(0.0, 2.0), 0.3 + r.uniform() * 1.5});
  return a;
}

}  // namespace

TEST(MixtureDensity, StandardNormalAtMode) {
  const std::vector<Atom> a{{0.0, 1.0}};
  EXPECT_NEAR(mixture_density(VectorXd::Ones(1), a, 0.0), 0.3989422804014327, 1e-15);
}

TEST(MixtureDensity, SingleComponentSelection) {
  const std::vector<Atom> a{{0.0, 1.0}, {-3.0, 2.0}, {2.0, 4.0}};
  VectorXd w = VectorXd::Zero(3);
  w[2] = 1.0;
  EXPECT_NEAR(mixture_density(w, a, 2.0), 1.0 / std::sqrt(8.0 * M_PI), 1e-15);
}

TEST(MixtureDensity, TwoComponentAgainstDirectSum) {
  const std::vector<Atom> a{{-1.0, 1.0}, {1.0, 1.0}};
  const double ref = 0.5 * oracle::npdf(0.0, -1.0, 1.0) + 0.5 * oracle::npdf(0.0, 1.0, 1.0);
  EXPECT_NEAR(mixture_density(VectorXd::Constant(2, 0.5), a, 0.0), ref, 1e-14);
  // the mixture integrates to its mass
  const double mass = oracle::simpson([&](double y) { return mixture_density(VectorXd::Constant(2, 0.5), a, y); },
                                      -15.0, 15.0, 300000);
  EXPECT_NEAR(mass, 1.0, 1e-10);
}

TEST(MixtureDensity, LinearInWeights) {
  Rng r(3);
  for (int t = 0; t < 20; ++t) {
    const auto a = random_atoms(r, 4);
    VectorXd w(4);
    for (auto& x : w) x = r.uniform();
    const double y = r.normal(), g = 0.1 + 5 * r.uniform();
    EXPECT_NEAR(mixture_density(g * w, a, y), g * mixture_density(w, a, y), 1e-13);
  }
}

TEST(MixtureDensity, Errors) {
  const std::vector<Atom> a{{0.0, 1.0}};
  EXPECT_THROW(mixture_density(VectorXd::Zero(1), a, 0.0), InputError);
  EXPECT_THROW(mixture_density(VectorXd::Ones(1), a, NAN), InputError);
  EXPECT_THROW(mixture_density(VectorXd::Constant(1, INFINITY), a, 0.0), InputError);
  EXPECT_THROW(mixture_density(VectorXd::Ones(2), a, 0.0), InputError);
}

TEST(GaussianInner, Examples) {
  EXPECT_NEAR(gaussian_l2_inner({0, 1}, {0, 1}), 1.0 / (2.0 * std::sqrt(M_PI)), 1e-15);
  const double q = oracle::simpson([](double y) { return oracle::npdf(y, 0, 1) * oracle::npdf(y, 3, 1); }, -20, 20);
  EXPECT_NEAR(gaussian_l2_inner({0, 1}, {3, 1}), q, 1e-8);
  EXPECT_NEAR(gaussian_l2_inner({0, 1}, {3, 1}), 0.029732, 1e-6);
}

TEST(GaussianInner, Symmetric) {
  Rng r(5);
  for (int t = 0; t < 50; ++t) {
    const auto a = random_atoms(r, 2);
    EXPECT_DOUBLE_EQ(gaussian_l2_inner(a[0], a[1]), gaussian_l2_inner(a[1], a[0]));
  }
}

TEST(GramMatrix, SingleAtom) {
  const TruncatedCoRM c({{0.0, 1.0}}, VectorXd::Constant(1, 0.999999), MatrixXd::Ones(1, 1));
  const MatrixXd G = gram_matrix(c, MatrixXd::Identity(1, 1));
  EXPECT_NEAR(G(0, 0), 0.999999 * 0.999999 / (2.0 * std::sqrt(M_PI)), 1e-15);
}

TEST(GramMatrix, MatchesQuadratureAndIsPsd) {
  Rng r(11);
  for (int t = 0; t < 100; ++t) {
    const int K = 1 + static_cast<int>(r.index(5)), H = 1 + static_cast<int>(r.index(3));
    const auto atoms = random_atoms(r, K);
    VectorXd J(K);
    for (auto& x : J) x = 0.05 + 0.9 * r.uniform();
    MatrixXd M(H, K);
    for (auto& x : M.reshaped()) x = 0.1 + 2 * r.uniform();
    MatrixXd Q = MatrixXd::Identity(H, H);
    for (auto& x : Q.reshaped()) x += 0.3 * r.normal();
    const TruncatedCoRM c(atoms, J, M);
    const MatrixXd G = gram_matrix(c, Q);
    const MatrixXd B = Q * M * J.asDiagonal();
    for (int i = 0; i < H; ++i)
      for (int j = 0; j < H; ++j) {
        auto gi = [&](double y, int row) {
          double s = 0.0;
          for (int k = 0; k < K; ++k) s += B(row, k) * oracle::npdf(y, atoms[k].mu, atoms[k].sigma2);
          return s;
        };
        const double q = oracle::simpson([&](double y) { return gi(y, i) * gi(y, j); }, -25, 25, 40000);
        EXPECT_NEAR(G(i, j), q, 1e-6 * std::max(1.0, std::abs(q)));
      }
    Eigen::SelfAdjointEigenSolver<MatrixXd> es(G);
    EXPECT_GE(es.eigenvalues().minCoeff(), -1e-10);
  }
}

TEST(GroupMeasure, TotalsPositive) {
  Rng r(2);
  const auto atoms = random_atoms(r, 4);
  const TruncatedCoRM c(atoms, VectorXd::Constant(4, 0.2), MatrixXd::Constant(2, 4, 0.5));
  const LoadingsMatrix L(MatrixXd::Constant(3, 2, 0.1));
  const GroupMeasureView v(L, c);
  EXPECT_TRUE((v.total_mass().array() > 0).all());
  EXPECT_NEAR(v.total_mass()[0], 0.1 * 2 * 0.5 * 0.2 * 4, 1e-15);
}

TEST(TypeInvariants, Rejected) {
  EXPECT_THROW(TruncatedCoRM({{0, 1}}, VectorXd::Constant(1, 1.0), MatrixXd::Ones(1, 1)), InputError);
  EXPECT_THROW(TruncatedCoRM({{0, -1}}, VectorXd::Constant(1, 0.5), MatrixXd::Ones(1, 1)), InputError);
  EXPECT_THROW(TruncatedCoRM({{0, 1}}, VectorXd::Constant(1, 0.5), MatrixXd::Zero(1, 1)), InputError);
  EXPECT_THROW(LoadingsMatrix(MatrixXd::Zero(2, 2)), InputError);
}

TEST(EvaluateOnGrid, Examples) {
  const std::vector<Atom> a{{0, 1}};
  VectorXd grid(3);
  grid << -1, 0, 1;
  const VectorXd v = evaluate_on_grid(VectorXd::Ones(1), a, grid);
  EXPECT_NEAR(v[0], 0.24197, 1e-5);
  EXPECT_NEAR(v[1], 0.39894, 1e-5);
  EXPECT_NEAR(v[2], 0.24197, 1e-5);
  EXPECT_THROW(evaluate_on_grid(VectorXd::Zero(1), a, grid), InputError);
  VectorXd bad(3);
  bad << 0, -1, 1;
  EXPECT_THROW(evaluate_on_grid(VectorXd::Ones(1), a, bad), InputError);
}

TEST(EvaluateOnGrid, RiemannSumIsTotalMass) {
  const std::vector<Atom> a{{-2, 0.5}, {3, 2}};
  VectorXd w(2);
  w << 0.7, 1.8;
  const VectorXd grid = equispaced(-20, 20, 4001);
  const VectorXd v = evaluate_on_grid(w, a, grid);
  EXPECT_NEAR(v.sum() * (grid[1] - grid[0]), 2.5, 1e-3);
}

TEST(DefaultGrid, SpansDataWithPadding) {
  const std::vector<double> y{0.0, 1.0, 2.0};
  const VectorXd g = default_grid(y);
  EXPECT_EQ(g.size(), 500);
  EXPECT_NEAR(g[0], -3.0, 1e-12);
  EXPECT_NEAR(g[499], 5.0, 1e-12);
}

TEST(Rng, SubstreamsAreReproducible) {
  Rng a(42), b(42);
  for (int i = 0; i < 10; ++i) EXPECT_EQ(a.bits(), b.bits());
  Rng s1 = a.substream(3), s2 = b.substream(3), s3 = a.substream(4);
  EXPECT_EQ(s1.bits(), s2.bits());
  EXPECT_NE(Rng(42).substream(3).bits(), s3.bits());
}

TEST(Rng, GammaAndBetaMoments) {
  Rng r(9);
  const int n = 200000;
  for (double shape : {0.05, 0.7, 3.0}) {
    double s = 0, ss = 0;
    for (int i = 0; i < n; ++i) {
      const double x = r.gamma(shape, 2.0);
      s += x;
      ss += x * x;
    }
    const double mean = s / n, var = ss / n - mean * mean;
    EXPECT_NEAR(mean, shape / 2.0, 4.0 * std::sqrt(shape / 4.0 / n)) << shape;
    EXPECT_NEAR(var, shape / 4.0, 4.0 * std::sqrt((2.0 + 6.0 / shape) / n) * shape / 4.0) << shape;
  }
  double s = 0;
  for (int i = 0; i < n; ++i) s += r.beta(2.0, 3.0);
  EXPECT_NEAR(s / n, 0.4, 4.0 * 0.2 / std::sqrt(n));
}
