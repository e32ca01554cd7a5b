#pragma once

// Exact discrete optimal transport between two weight vectors with equal
// totals, solved by the transportation form of the network simplex: the basis
// is a spanning tree over the m + n supply/demand nodes, node potentials give
// reduced costs, and Bland's smallest-index rule keeps degenerate pivots from
// cycling.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "nlmf/errors.hpp"

namespace nlmf {

struct TransportPlan {
  Eigen::MatrixXd flow;  // m x n
  double cost = 0.0;
  int pivots = 0;
};

namespace detail {

struct TreeEdge {
  int i, j;  // row node i, column node j
};

// Path of basic cells from row node `ri` to column node `cj` in the basis tree.
inline std::vector<int> tree_path(const std::vector<TreeEdge>& basis, int m, int n, int ri, int cj) {
  const int N = m + n;
  std::vector<std::vector<std::pair<int, int>>> adj(N);  // (neighbor, basis index)
  for (int e = 0; e < static_cast<int>(basis.size()); ++e) {
    adj[basis[e].i].push_back({m + basis[e].j, e});
    adj[m + basis[e].j].push_back({basis[e].i, e});
  }
  std::vector<int> via(N, -1), prev(N, -1);
  std::vector<int> stack{ri};
  std::vector<char> seen(N, 0);
  seen[ri] = 1;
  while (!stack.empty()) {
    const int a = stack.back();
    stack.pop_back();
    for (auto [b, e] : adj[a]) {
      if (seen[b]) continue;
      seen[b] = 1;
      prev[b] = a;
      via[b] = e;
      stack.push_back(b);
    }
  }
  const int target = m + cj;
  if (!seen[target]) throw StateError("transport: basis is not a spanning tree");
  std::vector<int> path;
  for (int x = target; x != ri; x = prev[x]) path.push_back(via[x]);
  std::reverse(path.begin(), path.end());  // path[0] touches ri
  return path;
}

}  // namespace detail

/// min <C, F> over F >= 0 with row sums a and column sums b (sum a = sum b).
inline TransportPlan solve_transport(const Eigen::VectorXd& a, const Eigen::VectorXd& b, const Eigen::MatrixXd& C) {
  const int m = static_cast<int>(a.size()), n = static_cast<int>(b.size());
  if (m == 0 || n == 0) throw InputError("solve_transport: empty marginals");
  if (C.rows() != m || C.cols() != n) throw InputError("solve_transport: cost shape mismatch");
  if (!C.allFinite() || !a.allFinite() || !b.allFinite()) throw InputError("solve_transport: non-finite input");
  if ((a.array() < 0.0).any() || (b.array() < 0.0).any()) throw InputError("solve_transport: negative mass");
  const double sa = a.sum(), sb = b.sum();
  if (std::abs(sa - sb) > 1e-9 * std::max(1.0, std::max(sa, sb)))
    throw InputError("solve_transport: marginals must have equal totals");

  TransportPlan out;
  out.flow = Eigen::MatrixXd::Zero(m, n);
  // north-west corner start; keeps a zero-flow cell when both sides empty at once
  std::vector<detail::TreeEdge> basis;
  {
    Eigen::VectorXd ra = a, rb = b;
    rb[n - 1] += sa - sb;  // absorb rounding in the last column
    int i = 0, j = 0;
    while (i < m && j < n) {
      const double f = std::min(ra[i], rb[j]);
      out.flow(i, j) = f;
      basis.push_back({i, j});
      ra[i] -= f;
      rb[j] -= f;
      if (i == m - 1 && j == n - 1) break;
      if (j == n - 1 || (i < m - 1 && ra[i] <= rb[j])) {
        ++i;
      } else {
        ++j;
      }
    }
  }

  const double scale = std::max(1.0, C.cwiseAbs().maxCoeff());
  const double tol = 1e-12 * scale;
  const int max_pivots = 50 * (m + n) * (m + n) + 1000;
  std::vector<double> u(m), v(n);
  std::vector<char> in_basis(static_cast<std::size_t>(m) * n, 0);
  for (;;) {
    std::fill(in_basis.begin(), in_basis.end(), 0);
    for (const auto& e : basis) in_basis[e.i * n + e.j] = 1;
    // potentials u_i + v_j = C_ij on the tree, rooted at row 0
    {
      std::vector<char> ku(m, 0), kv(n, 0);
      u[0] = 0.0;
      ku[0] = 1;
      bool progress = true;
      while (progress) {
        progress = false;
        for (const auto& e : basis) {
          if (ku[e.i] && !kv[e.j]) {
            v[e.j] = C(e.i, e.j) - u[e.i];
            kv[e.j] = 1;
            progress = true;
          } else if (!ku[e.i] && kv[e.j]) {
            u[e.i] = C(e.i, e.j) - v[e.j];
            ku[e.i] = 1;
            progress = true;
          }
        }
      }
    }
    // Bland: first non-basic cell with negative reduced cost
    int ei = -1, ej = -1;
    for (int i = 0; i < m && ei < 0; ++i)
      for (int j = 0; j < n; ++j) {
        if (in_basis[i * n + j]) continue;
        if (C(i, j) - u[i] - v[j] < -tol) {
          ei = i;
          ej = j;
          break;
        }
      }
    if (ei < 0) break;
    if (++out.pivots > max_pivots) throw StateError("solve_transport: pivot limit reached");

    const std::vector<int> path = detail::tree_path(basis, m, n, ei, ej);
    // cycle: entering cell +, then path cells alternate -, +, ... starting at ei
    int leave = -1;
    double theta = std::numeric_limits<double>::infinity();
    for (std::size_t t = 0; t < path.size(); t += 2) {
      const auto& e = basis[path[t]];
      const double f = out.flow(e.i, e.j);
      const int idx = e.i * n + e.j;
      if (f < theta || (f == theta && idx < basis[leave].i * n + basis[leave].j)) {
        theta = f;
        leave = path[t];
      }
    }
    for (std::size_t t = 0; t < path.size(); ++t) {
      const auto& e = basis[path[t]];
      out.flow(e.i, e.j) += (t % 2 == 0 ? -theta : theta);
    }
    out.flow(ei, ej) = theta;
    out.flow(basis[leave].i, basis[leave].j) = 0.0;
    basis[leave] = {ei, ej};
  }
  out.flow = out.flow.cwiseMax(0.0);
  out.cost = (out.flow.array() * C.array()).sum();
  return out;
}

}  // namespace nlmf
