#pragma once

// Label alignment of post-processed draws against a template draw.

#include <Eigen/Dense>

#include <cmath>
#include <span>
#include <vector>

#include "nlmf/assignment.hpp"
#include "nlmf/errors.hpp"
#include "nlmf/gibbs.hpp"
#include "nlmf/measures.hpp"
#include "nlmf/slopt.hpp"
#include "nlmf/transport.hpp"

namespace nlmf {

/// Probability measure sum_k w_k delta_{atoms[k]}.
struct LatentMeasure {
  VectorXd weights;
  std::vector<Atom> atoms;
};

inline LatentMeasure normalize_measure(const Eigen::Ref<const VectorXd>& w, std::span<const Atom> atoms) {
  if (static_cast<std::size_t>(w.size()) != atoms.size()) throw InputError("normalize_measure: size mismatch");
  const double mass = w.sum();
  if (!(mass > 0.0) || !std::isfinite(mass)) throw InputError("normalize_measure: measure has no positive mass");
  return LatentMeasure{w / mass, std::vector<Atom>(atoms.begin(), atoms.end())};
}

/// Rows of Q M diag(J), normalized.
inline std::vector<LatentMeasure> transformed_measures(const ChainDraw& d, const MatrixXd& Q) {
  if (Q.rows() != d.M.rows() || Q.cols() != d.M.rows()) throw InputError("transformed_measures: Q must be H x H");
  const MatrixXd B = Q * d.M * d.J.asDiagonal();
  std::vector<LatentMeasure> out;
  out.reserve(B.rows());
  for (Eigen::Index h = 0; h < B.rows(); ++h) out.push_back(normalize_measure(B.row(h).transpose(), d.atoms));
  return out;
}

struct Template {
  std::size_t draw = 0;
  std::vector<LatentMeasure> measures;
};

/// Draw with the largest recorded log joint (lowest index on ties), transformed by its Q.
inline Template select_template(const ChainRecord& chain, std::span<const TransformResult> transforms) {
  if (chain.draws.empty()) throw InputError("select_template: empty chain");
  if (transforms.size() != chain.draws.size()) throw InputError("select_template: one transform per draw required");
  std::size_t best = 0;
  for (std::size_t l = 1; l < chain.draws.size(); ++l)
    if (chain.draws[l].log_joint > chain.draws[best].log_joint) best = l;
  return Template{best, transformed_measures(chain.draws[best], transforms[best].Q)};
}

inline double l2_inner(const LatentMeasure& a, const LatentMeasure& b) {
  return a.weights.dot(kernel_cross(a.atoms, b.atoms) * b.weights);
}

/// L2 distance between the two mixture densities.
inline double l2_dissimilarity(const LatentMeasure& a, const LatentMeasure& b) {
  for (const auto* m : {&a, &b})
    if (!(m->weights.sum() > 0.0)) throw InputError("l2_dissimilarity: measure has no positive mass");
  const double d2 = l2_inner(a, a) - 2.0 * l2_inner(a, b) + l2_inner(b, b);
  return std::sqrt(std::max(0.0, d2));
}

/// Optimal transport cost between the atom weights under the ground cost
/// (mu_h - mu_k)^2 + (sigma_h - sigma_k)^2, i.e. squared W2 between the kernels.
inline double ls_wasserstein_dissimilarity(const LatentMeasure& a, const LatentMeasure& b) {
  const double ma = a.weights.sum(), mb = b.weights.sum();
  if (!(ma > 0.0) || !(mb > 0.0)) throw InputError("ls_wasserstein_dissimilarity: measure has no positive mass");
  if ((a.weights.array() < 0.0).any() || (b.weights.array() < 0.0).any())
    throw InputError("ls_wasserstein_dissimilarity: weights must be nonnegative");
  MatrixXd C(a.atoms.size(), b.atoms.size());
  for (std::size_t i = 0; i < a.atoms.size(); ++i)
    for (std::size_t k = 0; k < b.atoms.size(); ++k) {
      const double dm = a.atoms[i].mu - b.atoms[k].mu;
      const double ds = std::sqrt(a.atoms[i].sigma2) - std::sqrt(b.atoms[k].sigma2);
      C(i, k) = dm * dm + ds * ds;
    }
  return solve_transport(a.weights / ma, b.weights / mb, C).cost;
}

enum class AlignMetric { L2, LSW };

inline MatrixXd dissimilarity_matrix(std::span<const LatentMeasure> tmpl, std::span<const LatentMeasure> draw,
                                     AlignMetric metric = AlignMetric::L2) {
  if (tmpl.size() != draw.size()) throw InputError("alignment: template and draw must have the same H");
  const auto H = static_cast<Eigen::Index>(tmpl.size());
  MatrixXd D(H, H);
  for (Eigen::Index h = 0; h < H; ++h)
    for (Eigen::Index k = 0; k < H; ++k)
      D(h, k) = metric == AlignMetric::L2 ? l2_dissimilarity(tmpl[h], draw[k])
                                          : ls_wasserstein_dissimilarity(tmpl[h], draw[k]);
  return D;
}

/// perm[h] = index of the draw measure matched to template measure h.
inline std::vector<int> align_draw(std::span<const LatentMeasure> draw, const Template& tmpl,
                                   AlignMetric metric = AlignMetric::L2) {
  return solve_assignment(dissimilarity_matrix(tmpl.measures, draw, metric)).col_of_row;
}

inline double alignment_cost(const MatrixXd& D, const std::vector<int>& perm) {
  double c = 0.0;
  for (std::size_t h = 0; h < perm.size(); ++h) c += D(static_cast<Eigen::Index>(h), perm[h]);
  return c;
}

/// Aligned quantities of one draw: P Q M diag(J) and Lambda Q^{-1} P^T.
struct AlignedDraw {
  MatrixXd weights;  // H x K
  MatrixXd loadings; // g x H
  std::vector<Atom> atoms;
};

inline AlignedDraw apply_alignment(const ChainDraw& d, const MatrixXd& Q, const std::vector<int>& perm) {
  const MatrixXd P = permutation_matrix(perm);
  if (P.rows() != Q.rows()) throw InputError("apply_alignment: permutation size mismatch");
  Eigen::PartialPivLU<MatrixXd> lu(Q);
  const MatrixXd Qi = lu.inverse();
  if (!Qi.allFinite()) throw DomainError("apply_alignment: singular transformation");
  {
    Eigen::JacobiSVD<MatrixXd> svd(Q);
    const auto& sv = svd.singularValues();
    if (sv[0] > 1e10 * sv[sv.size() - 1]) log::warn("apply_alignment: transformation condition number above 1e10");
  }
  return AlignedDraw{P * Q * d.M * d.J.asDiagonal(), d.Lambda * Qi * P.transpose(), d.atoms};
}

}  // namespace nlmf
