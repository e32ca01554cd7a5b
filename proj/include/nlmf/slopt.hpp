#pragma once

// Post-processing over SL(H): the interpretability loss, positivity
// constraints, projection onto the traceless algebra, dissipative Lie RATTLE
// descent with exponential retraction, and the augmented Lagrangian outer loop.

#include <Eigen/Dense>
#include <Eigen/LU>
#include <unsupported/Eigen/MatrixFunctions>

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <string>

#include "nlmf/errors.hpp"
#include "nlmf/measures.hpp"

namespace nlmf {

// ---------------------------------------------------------------------------
// Interpretability loss

/// C = (M diag J) A (M diag J)^T, so that G(Q) = Q C Q^T.
inline MatrixXd latent_gram(const TruncatedCoRM& corm) {
  return gram_matrix(corm, MatrixXd::Identity(corm.H(), corm.H()));
}

/// sum_{i<j} G_ij^2 with G = Q C Q^T; gradient 2 G_off Q C.
inline double interp_loss_from_gram(const MatrixXd& C, const MatrixXd& Q, MatrixXd* grad = nullptr) {
  const MatrixXd QC = Q * C;
  MatrixXd G = QC * Q.transpose();
  G.diagonal().setZero();
  const double loss = 0.5 * G.squaredNorm();
  if (grad) *grad = 2.0 * G * QC;
  return loss;
}

inline double interp_loss(const MatrixXd& Q, const TruncatedCoRM& corm, MatrixXd* grad = nullptr) {
  if (Q.rows() != corm.H() || Q.cols() != corm.H()) throw InputError("interp_loss: Q must be H x H");
  return interp_loss_from_gram(latent_gram(corm), Q, grad);
}

// ---------------------------------------------------------------------------
// Lie algebra projection and exponential

enum class SlProjection {
  GeneratorSum,  // (X - diag X)^T + sum_l tr(X E_l) E_l
  Orthogonal     // X - tr(X)/H I
};

inline MatrixXd project_sl(const MatrixXd& X, SlProjection mode = SlProjection::GeneratorSum) {
  const auto H = X.rows();
  if (X.cols() != H) throw InputError("project_sl: X must be square");
  if (!X.allFinite()) throw InputError("project_sl: X must be finite");
  if (mode == SlProjection::Orthogonal) {
    MatrixXd out = X;
    out.diagonal().array() -= X.trace() / static_cast<double>(H);
    return out;
  }
  MatrixXd out = X.transpose();
  // E_l = diag(..., +1 at l, -1 at l+1, ...), coefficient t_l = X_ll - X_{l+1,l+1}
  double prev = 0.0;
  double sum = 0.0, comp = 0.0;
  for (Eigen::Index i = 0; i < H; ++i) {
    const double t = i + 1 < H ? X(i, i) - X(i + 1, i + 1) : 0.0;
    double d = t - prev;
    prev = t;
    if (i + 1 == H) d = -(sum + comp);  // exact trace zero
    out(i, i) = d;
    const double s2 = sum + d;
    comp += std::abs(sum) >= std::abs(d) ? (sum - s2) + d : (d - s2) + sum;
    sum = s2;
  }
  return out;
}

inline MatrixXd expm(const MatrixXd& A) {
  if (A.rows() != A.cols() || !A.allFinite()) throw InputError("expm: argument must be square and finite");
  MatrixXd E = A.exp();
  if (!E.allFinite()) throw DomainError("expm: overflow");
  return E;
}

// ---------------------------------------------------------------------------
// Lie RATTLE

struct RattleConfig {
  double step = 1e-2;  // upper bound; the safeguard halves it on ascent
  double momentum = 0.9;
  long max_iters = 5000;
  bool safeguard = true;
  SlProjection projection = SlProjection::GeneratorSum;
  // a move whose determinant is still this far from 1 after renormalization
  // (Q too ill-conditioned to represent) counts as leaving the group
  double det_tol = 1e-9;

  void validate() const {
    if (!(det_tol > 0.0)) throw InputError("RattleConfig: det_tol must be positive");
    if (!(step > 0.0)) throw InputError("RattleConfig: step must be positive");
    if (!(momentum > 0.0 && momentum < 1.0)) throw InputError("RattleConfig: momentum must lie in (0,1)");
    if (max_iters < 1) throw InputError("RattleConfig: max_iters must be >= 1");
  }
};

using Objective = std::function<double(const MatrixXd&, MatrixXd*)>;

struct RattleResult {
  MatrixXd Q;
  double value = 0.0;
  long iterations = 0;
  bool converged = false;
  double max_det_dev = 0.0;  // max |det Q - 1| over the start and every accepted iterate
};

/// Algebra direction at Q: projection of the transposed Euclidean gradient
/// pulled back to the identity, i.e. Pi(d_Q f . Q).
inline MatrixXd algebra_direction(const MatrixXd& Q, const MatrixXd& grad, SlProjection mode) {
  if (mode == SlProjection::Orthogonal) return project_sl(Q.transpose() * grad, mode);
  return project_sl(grad.transpose() * Q, mode);
}

/// With the safeguard on, a step that raises the objective (or leaves the
/// domain) is rejected: momentum is reset to zero and the step size halved.
/// Accepted steps let the step size recover geometrically up to cfg.step.
/// A trial move shorter than eps counts as convergence whether or not it was
/// accepted.
inline RattleResult rattle_minimize(const Objective& f, const MatrixXd& Q0, const RattleConfig& cfg, double eps) {
  cfg.validate();
  const auto H = Q0.rows();
  const double det0 = Q0.determinant();
  if (!(std::abs(det0 - 1.0) <= 1e-6)) throw InputError("rattle_minimize: starting point is not in SL(H)");
  const double chi = std::cosh(-std::log(cfg.momentum));
  RattleResult res;
  MatrixXd Q = Q0;
  MatrixXd P = MatrixXd::Zero(H, H);
  MatrixXd grad, grad_n;
  double val = f(Q, &grad);
  if (!std::isfinite(val)) throw StateError("rattle_minimize: non-finite objective at the start");
  res.Q = Q;
  res.value = val;
  res.max_det_dev = std::abs(det0 - 1.0);
  double s = cfg.step;
  for (long it = 1; it <= cfg.max_iters; ++it) {
    res.iterations = it;
    MatrixXd Pn = cfg.momentum * (P - s * algebra_direction(Q, grad, cfg.projection));
    const MatrixXd A = chi * Pn;
    bool ok = A.allFinite();
    MatrixXd Qn;
    double vn = std::numeric_limits<double>::infinity(), det = 0.0;
    if (ok) {
      Qn = Q * A.exp();
      det = Qn.determinant();
      ok = det > 0.0 && std::isfinite(det) && Qn.allFinite();
      if (ok && std::abs(det - 1.0) > 1e-12) {
        Qn /= std::pow(det, 1.0 / static_cast<double>(H));
        det = Qn.determinant();
        ok = std::abs(det - 1.0) <= cfg.det_tol;
      }
      if (ok) {
        try {
          vn = f(Qn, &grad_n);
        } catch (const DomainError&) {
          ok = false;
        }
        ok = ok && std::isfinite(vn) && grad_n.allFinite();
      }
    }
    const double diff = ok ? (Qn - Q).norm() : std::numeric_limits<double>::infinity();
    if (!ok || (cfg.safeguard && vn > val)) {
      if (!cfg.safeguard) break;
      if (diff <= eps) {
        res.converged = true;
        break;
      }
      P.setZero();
      s *= 0.5;
      if (s < cfg.step * 1e-30) break;
      continue;
    }
    P = cfg.momentum * (Pn - s * algebra_direction(Qn, grad_n, cfg.projection));
    res.max_det_dev = std::max(res.max_det_dev, std::abs(det - 1.0));
    Q = std::move(Qn);
    grad.swap(grad_n);
    val = vn;
    if (cfg.safeguard) s = std::min(cfg.step, 1.1 * s);
    if (val < res.value) {
      res.value = val;
      res.Q = Q;
    }
    if (diff <= eps) {
      res.converged = true;
      res.Q = Q;
      res.value = val;
      break;
    }
  }
  return res;
}

// ---------------------------------------------------------------------------
// Constraints and augmented loss

enum class PenaltyForm {
  Hinge,   // (rho/2) sum max(0, gamma/rho + c)^2
  Printed  // (rho/2) sum max(0, (gamma/rho) c)
};

struct AlmProblem {
  MatrixXd C;       // H x H latent Gram matrix
  MatrixXd Lambda;  // g x H
  MatrixXd M;       // H x K (scores, unweighted by jumps)

  static AlmProblem from(const TruncatedCoRM& corm, const LoadingsMatrix& lambda) {
    if (lambda.H() != corm.H()) throw InputError("AlmProblem: H mismatch");
    return AlmProblem{latent_gram(corm), lambda.matrix(), corm.scores()};
  }

  Eigen::Index H() const { return C.rows(); }
  Eigen::Index n_constraints() const { return Lambda.rows() * H() + H() * M.cols(); }
};

inline MatrixXd checked_inverse(const MatrixXd& Q) {
  Eigen::PartialPivLU<MatrixXd> lu(Q);
  const double det = lu.determinant();
  if (!(std::abs(det) > 0.0) || !std::isfinite(det)) throw DomainError("singular transformation matrix");
  MatrixXd inv = lu.inverse();
  if (!inv.allFinite()) throw DomainError("singular transformation matrix");
  return inv;
}

/// Stacked constraint values: vec(-Lambda Q^{-1}) then vec(-Q M), column-major.
inline VectorXd constraint_values(const AlmProblem& p, const MatrixXd& Q) {
  const MatrixXd c1 = -p.Lambda * checked_inverse(Q);
  const MatrixXd c2 = -Q * p.M;
  VectorXd c(c1.size() + c2.size());
  c << Eigen::Map<const VectorXd>(c1.data(), c1.size()), Eigen::Map<const VectorXd>(c2.data(), c2.size());
  return c;
}

inline double max_violation(const AlmProblem& p, const MatrixXd& Q) {
  return std::max(0.0, constraint_values(p, Q).maxCoeff());
}

inline double augmented_loss(const AlmProblem& p, const MatrixXd& Q, double rho, const VectorXd& gamma,
                             PenaltyForm form = PenaltyForm::Hinge, MatrixXd* grad = nullptr) {
  if (gamma.size() != p.n_constraints()) throw InputError("augmented_loss: multiplier length mismatch");
  const MatrixXd Qi = checked_inverse(Q);
  const MatrixXd LQi = p.Lambda * Qi;
  const auto g = p.Lambda.rows(), H = p.H(), K = p.M.cols();
  const Eigen::Map<const MatrixXd> g1(gamma.data(), g, H);
  const Eigen::Map<const MatrixXd> g2(gamma.data() + g * H, H, K);
  const MatrixXd c1 = -LQi;
  const MatrixXd c2 = -Q * p.M;
  double val = interp_loss_from_gram(p.C, Q, grad);
  // W1, W2 are d(penalty)/d(c) elementwise
  MatrixXd W1, W2;
  if (form == PenaltyForm::Hinge) {
    const MatrixXd R1 = (g1.array() / rho + c1.array()).max(0.0).matrix();
    const MatrixXd R2 = (g2.array() / rho + c2.array()).max(0.0).matrix();
    val += 0.5 * rho * (R1.squaredNorm() + R2.squaredNorm());
    W1 = rho * R1;
    W2 = rho * R2;
  } else {
    const MatrixXd a1 = (g1.array() * c1.array()).max(0.0).matrix();
    const MatrixXd a2 = (g2.array() * c2.array()).max(0.0).matrix();
    val += 0.5 * (a1.sum() + a2.sum());
    W1 = (g1.array() * c1.array() > 0.0).select(0.5 * g1.array(), 0.0).matrix();
    W2 = (g2.array() * c2.array() > 0.0).select(0.5 * g2.array(), 0.0).matrix();
  }
  if (grad) {
    // d c1 = Lambda Q^{-1} dQ Q^{-1};  d c2 = -dQ M
    *grad += Qi.transpose() * p.Lambda.transpose() * W1 * Qi.transpose() - W2 * p.M.transpose();
  }
  return val;
}

// ---------------------------------------------------------------------------
// Augmented Lagrangian driver

struct AlmConfig {
  double rho = 10.0;
  double gamma = 0.0;  // initial multiplier for every constraint
  double eps_star = 1e-6;
  double eps = 1e-2;
  double rho_factor = 1.0 / 0.9;
  int max_outer = 200;
  RattleConfig rattle;
  PenaltyForm penalty = PenaltyForm::Hinge;
  bool warm_start = true;        // unconstrained solve before the constrained loop
  double feasibility_tol = 1e-6;
  bool normalize_loss = true;    // optimize L(Q) / L(I) so step sizes do not depend on the mass scale

  void validate() const {
    if (!(rho > 0.0) || !(gamma >= 0.0)) throw InputError("AlmConfig: rho > 0 and gamma >= 0 required");
    if (!(eps_star > 0.0) || !(eps >= eps_star)) throw InputError("AlmConfig: need eps >= eps_star > 0");
    if (!(rho_factor > 0.0) || max_outer < 1) throw InputError("AlmConfig: bad rho_factor or max_outer");
    rattle.validate();
  }
};

struct AlmState {
  double rho;
  VectorXd gamma;
  double eps;
  double eps_star;
};

enum class AlmStatus { Converged, Restarted, Failed };

inline const char* to_string(AlmStatus s) {
  switch (s) {
    case AlmStatus::Converged: return "converged";
    case AlmStatus::Restarted: return "restarted";
    case AlmStatus::Failed: return "failed";
  }
  return "?";
}

struct TransformResult {
  MatrixXd Q;
  double loss = 0.0;
  double loss_identity = 0.0;
  double max_violation = 0.0;
  AlmStatus status = AlmStatus::Failed;
  int outer_iterations = 0;
  long inner_iterations = 0;
  double max_det_dev = 0.0;
  std::vector<int> perm;  // filled by alignment

  bool success() const { return status != AlmStatus::Failed; }
};

namespace detail {

struct AlmRun {
  MatrixXd Q;
  int outer = 0;
  long inner = 0;
  double max_det_dev = 0.0;
};

inline AlmRun alm_loop(const AlmProblem& p, const AlmConfig& cfg, const MatrixXd& Q0) {
  AlmRun run;
  AlmState st{cfg.rho, VectorXd::Constant(p.n_constraints(), cfg.gamma), cfg.eps, cfg.eps_star};
  MatrixXd Q = Q0;
  for (int outer = 1; outer <= cfg.max_outer; ++outer) {
    run.outer = outer;
    const MatrixXd Qprev = Q;
    const double rho = st.rho;
    const VectorXd gam = st.gamma;
    Objective f = [&](const MatrixXd& X, MatrixXd* g) { return augmented_loss(p, X, rho, gam, cfg.penalty, g); };
    const RattleResult r = rattle_minimize(f, Q, cfg.rattle, st.eps);
    run.inner += r.iterations;
    run.max_det_dev = std::max(run.max_det_dev, r.max_det_dev);
    Q = r.Q;
    st.gamma = (st.gamma + st.rho * constraint_values(p, Q)).cwiseMax(0.0);
    st.rho *= cfg.rho_factor;
    st.eps = std::max(st.eps_star, 0.9 * st.eps);
    // stationarity alone is not enough: keep going until the iterate is feasible
    if (st.eps <= st.eps_star && (Q - Qprev).norm() <= st.eps && max_violation(p, Q) <= cfg.feasibility_tol) break;
  }
  run.Q = Q;
  return run;
}

}  // namespace detail

/// Solve min L(Q) over SL(H) subject to Lambda Q^{-1} >= 0 and Q M >= 0.
/// Success requires violation <= feasibility_tol and L(Q) <= L(I). On failure
/// from the warm start the loop is retried from the identity; if that also
/// fails the identity (always feasible) is returned with status Failed.
inline TransformResult alm_solve(const AlmProblem& orig, const AlmConfig& cfg,
                                 std::optional<MatrixXd> start = std::nullopt) {
  cfg.validate();
  const auto H = orig.H();
  const MatrixXd I = MatrixXd::Identity(H, H);
  TransformResult out;
  out.loss_identity = interp_loss_from_gram(orig.C, I);
  // a positive rescaling of the loss leaves the constrained minimizers unchanged
  AlmProblem p = orig;
  if (cfg.normalize_loss && out.loss_identity > 0.0) p.C /= out.loss_identity;

  auto accept = [&](const MatrixXd& Q) {
    return max_violation(p, Q) <= cfg.feasibility_tol && interp_loss_from_gram(orig.C, Q) <= out.loss_identity;
  };

  MatrixXd Q0 = start ? *start : I;
  if (cfg.warm_start) {
    Objective f = [&](const MatrixXd& X, MatrixXd* g) { return interp_loss_from_gram(p.C, X, g); };
    const RattleResult r = rattle_minimize(f, Q0, cfg.rattle, cfg.eps);
    out.inner_iterations += r.iterations;
    out.max_det_dev = std::max(out.max_det_dev, r.max_det_dev);
    Q0 = r.Q;
  }
  detail::AlmRun run = detail::alm_loop(p, cfg, Q0);
  out.outer_iterations = run.outer;
  out.inner_iterations += run.inner;
  out.max_det_dev = std::max(out.max_det_dev, run.max_det_dev);
  out.status = AlmStatus::Converged;
  if (!accept(run.Q)) {
    run = detail::alm_loop(p, cfg, I);
    out.outer_iterations += run.outer;
    out.inner_iterations += run.inner;
    out.max_det_dev = std::max(out.max_det_dev, run.max_det_dev);
    out.status = AlmStatus::Restarted;
    if (!accept(run.Q)) {
      out.status = AlmStatus::Failed;
      run.Q = I;
    }
  }
  out.Q = run.Q;
  out.loss = interp_loss_from_gram(orig.C, out.Q);
  out.max_violation = max_violation(p, out.Q);
  return out;
}

inline TransformResult alm_solve(const TruncatedCoRM& corm, const LoadingsMatrix& lambda, const AlmConfig& cfg,
                                 std::optional<MatrixXd> start = std::nullopt) {
  return alm_solve(AlmProblem::from(corm, lambda), cfg, std::move(start));
}

}  // namespace nlmf
