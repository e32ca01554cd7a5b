#pragma once

// Linear assignment on a square cost matrix (Hungarian method with row and
// column potentials, O(n^3)).

#include <Eigen/Dense>

#include <limits>
#include <vector>

#include "nlmf/errors.hpp"

namespace nlmf {

struct Assignment {
  std::vector<int> col_of_row;  // row h is matched to column col_of_row[h]
  double cost = 0.0;
};

inline Assignment solve_assignment(const Eigen::MatrixXd& cost) {
  const int n = static_cast<int>(cost.rows());
  if (cost.cols() != n) throw InputError("solve_assignment: cost matrix must be square");
  if (!cost.allFinite()) throw InputError("solve_assignment: cost matrix must be finite");
  Assignment out;
  if (n == 0) return out;
  constexpr double inf = std::numeric_limits<double>::infinity();
  // 1-based arrays; column 0 is a virtual start column.
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0), minv(n + 1);
  std::vector<int> p(n + 1, 0), way(n + 1, 0);
  std::vector<char> used(n + 1);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::fill(minv.begin(), minv.end(), inf);
    std::fill(used.begin(), used.end(), 0);
    do {
      used[j0] = 1;
      const int i0 = p[j0];
      double delta = inf;
      int j1 = 0;
      for (int j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  out.col_of_row.assign(n, -1);
  for (int j = 1; j <= n; ++j) out.col_of_row[p[j] - 1] = j - 1;
  for (int i = 0; i < n; ++i) out.cost += cost(i, out.col_of_row[i]);
  return out;
}

inline bool is_permutation(const std::vector<int>& perm) {
  std::vector<char> seen(perm.size(), 0);
  for (int k : perm) {
    if (k < 0 || static_cast<std::size_t>(k) >= perm.size() || seen[k]) return false;
    seen[k] = 1;
  }
  return true;
}

/// P with P(h, perm[h]) = 1.
inline Eigen::MatrixXd permutation_matrix(const std::vector<int>& perm) {
  if (!is_permutation(perm)) throw InputError("permutation_matrix: not a permutation");
  const auto n = static_cast<Eigen::Index>(perm.size());
  Eigen::MatrixXd P = Eigen::MatrixXd::Zero(n, n);
  for (Eigen::Index h = 0; h < n; ++h) P(h, perm[h]) = 1.0;
  return P;
}

}  // namespace nlmf
