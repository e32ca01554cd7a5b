#pragma once

// Synthetic grouped data: Dirichlet-weighted three-component mixtures, and a
// square lattice with spatially varying weights plus its rook adjacency.

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "nlmf/gibbs.hpp"
#include "nlmf/measures.hpp"
#include "nlmf/priors.hpp"
#include "nlmf/rng.hpp"

namespace nlmf {

/// Per-group mixture weights over a common list of components.
struct TrueMixture {
  std::vector<Atom> components;
  MatrixXd weights;  // g x components

  VectorXd density(Eigen::Index j, const Eigen::Ref<const VectorXd>& grid) const {
    return evaluate_on_grid(weights.row(j).transpose(), components, grid);
  }
};

struct SyntheticData {
  GroupedData data;
  TrueMixture truth;
  std::vector<Edge> edges;  // empty unless spatial
};

namespace detail {

template <RandomSource R>
void draw_groups(SyntheticData& out, int n, R& rng) {
  const auto g = out.truth.weights.rows();
  const auto C = out.truth.weights.cols();
  out.data.y.assign(static_cast<std::size_t>(g), {});
  out.data.labels.clear();
  for (Eigen::Index j = 0; j < g; ++j) {
    out.data.labels.push_back(std::to_string(j));
    auto& yj = out.data.y[j];
    yj.reserve(n);
    for (int i = 0; i < n; ++i) {
      double r = rng.uniform();
      Eigen::Index c = C - 1;
      for (Eigen::Index k = 0; k < C; ++k) {
        r -= out.truth.weights(j, k);
        if (r < 0.0) {
          c = k;
          break;
        }
      }
      const Atom& a = out.truth.components[c];
      yj.push_back(a.mu + std::sqrt(a.sigma2) * rng.normal());
    }
  }
}

}  // namespace detail

/// w_j ~ Dirichlet(1,1,1); y_ji ~ w_j1 N(-2,2) + w_j2 N(0,2) + w_j3 N(2,2).
template <RandomSource R>
SyntheticData generate_dirichlet_mix(int g, int n, R& rng) {
  if (g < 1 || n < 1) throw InputError("generate_dirichlet_mix: g and n must be >= 1");
  SyntheticData out;
  out.truth.components = {Atom{-2.0, 2.0}, Atom{0.0, 2.0}, Atom{2.0, 2.0}};
  out.truth.weights.resize(g, 3);
  for (int j = 0; j < g; ++j) {
    std::array<double, 3> e{};
    double s = 0.0;
    for (auto& x : e) s += (x = -std::log(rng.uniform()));
    for (int k = 0; k < 3; ++k) out.truth.weights(j, k) = e[k] / s;
  }
  detail::draw_groups(out, n, rng);
  return out;
}

/// Lattice weights at coordinates (x, y) around center (cx, cy).
inline std::array<double, 3> lattice_weights(double x, double y, double cx, double cy) {
  const double w1 = 3.0 * (x - cx) + 3.0 * (y - cy);
  const double w2 = -w1;
  // divide through by the largest term to avoid overflow
  const double m = std::max({w1, w2, 0.0});
  const double e1 = std::exp(w1 - m), e2 = std::exp(w2 - m), e3 = std::exp(-m);
  const double s = e1 + e2 + e3;
  return {e1 / s, e2 / s, e3 / s};
}

/// Sites {0..q} x {0..q}, indexed j = x * (q+1) + y; means -5, 0, 5, unit variances.
template <RandomSource R>
SyntheticData generate_spatial_lattice(int q, int n, R& rng) {
  if (q < 1 || n < 1) throw InputError("generate_spatial_lattice: q and n must be >= 1");
  const int side = q + 1;
  const int g = side * side;
  const double c = q / 2.0;
  SyntheticData out;
  out.truth.components = {Atom{-5.0, 1.0}, Atom{0.0, 1.0}, Atom{5.0, 1.0}};
  out.truth.weights.resize(g, 3);
  for (int x = 0; x < side; ++x)
    for (int y = 0; y < side; ++y) {
      const auto w = lattice_weights(x, y, c, c);
      for (int k = 0; k < 3; ++k) out.truth.weights(x * side + y, k) = w[k];
    }
  for (int x = 0; x < side; ++x)
    for (int y = 0; y < side; ++y) {
      const int j = x * side + y;
      if (x > 0) out.edges.emplace_back(j, j - side);
      if (x + 1 < side) out.edges.emplace_back(j, j + side);
      if (y > 0) out.edges.emplace_back(j, j - 1);
      if (y + 1 < side) out.edges.emplace_back(j, j + 1);
    }
  detail::draw_groups(out, n, rng);
  return out;
}

}  // namespace nlmf
