#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

#include "prvr/matrix.hpp"

namespace prvr {

/// Query -> clip assignment: every row assigned to exactly one column,
/// columns used at most once.
struct AssignmentPlan {
  Matrix assignment;         // M_q x M_c binary
  std::vector<int> columns;  // column chosen per row
  double total_profit = 0.0;
};

namespace detail {

inline double plan_profit(const Matrix& pi, const std::vector<int>& cols) {
  double s = 0.0;
  for (int i = 0; i < pi.rows; ++i) s += pi.at(i, cols[i]);
  return s;
}

inline AssignmentPlan make_plan(const Matrix& pi, std::vector<int> cols) {
  AssignmentPlan plan;
  plan.assignment = Matrix(pi.rows, pi.cols);
  for (int i = 0; i < pi.rows; ++i) plan.assignment.at(i, cols[i]) = 1.0;
  plan.total_profit = plan_profit(pi, cols);
  plan.columns = std::move(cols);
  return plan;
}

}  // namespace detail

/// Maximum-profit injective row -> column assignment via the Hungarian
/// algorithm (potentials / augmenting paths, O(n^3)). The rectangular case is
/// padded to square with a profit strictly below min(pi) - 1; dummy rows are
/// discarded afterwards. Ties during the augmenting search break toward the
/// lowest column index, so the returned plan is deterministic.
inline AssignmentPlan solve_max_assignment(const Matrix& pi) {
  const int mq = pi.rows, mc = pi.cols;
  if (mq < 1 || mc < 1) throw std::invalid_argument("solve_max_assignment: empty profit matrix");
  if (mq > mc) throw std::invalid_argument("solve_max_assignment: infeasible, more rows than columns");
  if (!pi.all_finite()) throw std::invalid_argument("solve_max_assignment: non-finite profit");

  double lo = pi.data[0];
  for (double v : pi.data) lo = std::min(lo, v);
  const double pad = lo - 2.0;

  const int n = mc;  // square size
  auto profit = [&](int i, int j) { return i < mq ? pi.at(i, j) : pad; };

  const double kInf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0), minv(n + 1);
  std::vector<int> p(n + 1, 0), way(n + 1, 0);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::fill(minv.begin(), minv.end(), kInf);
    std::vector<char> used(n + 1, 0);
    do {
      used[j0] = 1;
      const int i0 = p[j0];
      int j1 = -1;
      double delta = kInf;
      for (int j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = -profit(i0 - 1, j - 1) - u[i0] - v[j];
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
    } while (j0);
  }

  std::vector<int> cols(mq, -1);
  for (int j = 1; j <= n; ++j)
    if (p[j] >= 1 && p[j] <= mq) cols[p[j] - 1] = j - 1;
  return detail::make_plan(pi, std::move(cols));
}

/// Exhaustive oracle over all injective row -> column maps. Guarded to tiny
/// instances; intended for verifying the solver.
inline AssignmentPlan brute_force_assignment(const Matrix& pi) {
  const int mq = pi.rows, mc = pi.cols;
  if (mq < 1 || mc < 1) throw std::invalid_argument("brute_force_assignment: empty profit matrix");
  if (mq > mc) throw std::invalid_argument("brute_force_assignment: infeasible");
  if (mq > 6 || mc > 8) throw std::invalid_argument("brute_force_assignment: size guard exceeded");
  if (!pi.all_finite()) throw std::invalid_argument("brute_force_assignment: non-finite profit");

  std::vector<int> cols(mq, -1), best;
  double best_profit = -std::numeric_limits<double>::infinity();
  const auto recurse = [&](auto&& self, int row, unsigned usedmask) -> void {
    if (row == mq) {
      const double total = detail::plan_profit(pi, cols);
      if (total > best_profit) {
        best_profit = total;
        best = cols;
      }
      return;
    }
    for (int j = 0; j < mc; ++j) {
      if (usedmask & (1u << j)) continue;
      cols[row] = j;
      self(self, row + 1, usedmask | (1u << j));
    }
  };
  recurse(recurse, 0, 0u);
  return detail::make_plan(pi, std::move(best));
}

}  // namespace prvr
