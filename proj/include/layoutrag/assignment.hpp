#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "layoutrag/error.hpp"

namespace layoutrag {

/// Rows are query elements, columns candidate elements.
using WeightMatrix = Eigen::MatrixXd;

struct Assignment {
  std::vector<std::pair<std::size_t, std::size_t>> pairs;  // (row, col), ascending by row
  double total = 0.0;
};

struct AssignmentOptions {
  // Return the lexicographically smallest pair list among optimal assignments.
  // Costs extra alternating-path searches; metrics over large groups turn it off.
  bool canonical = true;
  double tie_tolerance = 1e-10;
};

namespace detail {

/// Kuhn-Munkres with potentials (minimization) for rows <= columns; every
/// row is assigned.
/// Returns col_of_row plus the dual potentials, which certify optimality:
/// u[i] + v[j] <= cost(i,j), with equality on every optimal edge.
struct HungarianResult {
  std::vector<std::size_t> col_of_row;
  std::vector<double> u, v;
};

inline HungarianResult hungarian_min(const Eigen::MatrixXd& cost) {
  const std::size_t n = static_cast<std::size_t>(cost.rows());
  const std::size_t m = static_cast<std::size_t>(cost.cols());
  const double inf = std::numeric_limits<double>::infinity();
  // 1-based with a virtual column 0.
  std::vector<double> u(n + 1, 0.0), v(m + 1, 0.0);
  std::vector<std::size_t> row_of(m + 1, 0), way(m + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    row_of[0] = i;
    std::size_t j0 = 0;
    std::vector<double> minv(m + 1, inf);
    std::vector<char> used(m + 1, 0);
    do {
      used[j0] = 1;
      const std::size_t i0 = row_of[j0];
      double delta = inf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= m; ++j) {
        if (used[j]) continue;
        const double cur = cost(static_cast<Eigen::Index>(i0 - 1), static_cast<Eigen::Index>(j - 1)) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= m; ++j) {
        if (used[j]) {
          u[row_of[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (row_of[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      row_of[j0] = row_of[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  HungarianResult r;
  r.col_of_row.assign(n, 0);
  for (std::size_t j = 1; j <= m; ++j) {
    if (row_of[j] != 0) r.col_of_row[row_of[j] - 1] = j - 1;
  }
  r.u.assign(u.begin() + 1, u.end());
  r.v.assign(v.begin() + 1, v.end());
  return r;
}

/// Moves an optimal perfect matching to the lexicographically smallest one
/// among matchings that use only tight edges.
class CanonicalMatcher {
 public:
  CanonicalMatcher(const Eigen::MatrixXd& cost, HungarianResult h, double tol)
      : n_(static_cast<std::size_t>(cost.rows())),
        col_of_(std::move(h.col_of_row)),
        row_of_(n_),
        fixed_(n_, 0),
        tight_(n_, std::vector<char>(n_, 0)) {
    for (std::size_t i = 0; i < n_; ++i) {
      row_of_[col_of_[i]] = i;
      for (std::size_t j = 0; j < n_; ++j) {
        const double reduced = cost(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) - h.u[i] - h.v[j];
        tight_[i][j] = std::abs(reduced) <= tol;
      }
    }
  }

  /// `preferred(i)` lists the columns row i should take if possible, best first.
  template <typename Preferred>
  std::vector<std::size_t> run(std::size_t rows_to_fix, Preferred preferred) {
    for (std::size_t i = 0; i < rows_to_fix; ++i) {
      const std::vector<std::size_t> cols = preferred(i);
      for (std::size_t j : cols) {
        if (col_of_[i] == j) break;
        if (!tight_[i][j] || fixed_[row_of_[j]]) continue;
        if (reroute(i, j)) break;
      }
      // A row left on a non-preferred column reports as unmatched no matter
      // which such column it holds, so it stays free to move for later rows.
      fixed_[i] = std::find(cols.begin(), cols.end(), col_of_[i]) != cols.end();
    }
    return col_of_;
  }

 private:
  // Gives column j to row i by finding an alternating path from j's owner
  // back to i's current column through tight edges among unfixed rows.
  bool reroute(std::size_t i, std::size_t j) {
    const std::size_t target = col_of_[i];
    std::vector<char> seen(n_, 0);
    std::vector<std::pair<std::size_t, std::size_t>> path;  // (row, new col)
    seen[j] = 1;
    if (!search(row_of_[j], i, target, seen, path)) return false;
    for (auto [r, c] : path) {
      col_of_[r] = c;
      row_of_[c] = r;
    }
    col_of_[i] = j;
    row_of_[j] = i;
    return true;
  }

  bool search(std::size_t row, std::size_t skip, std::size_t target, std::vector<char>& seen,
              std::vector<std::pair<std::size_t, std::size_t>>& path) {
    for (std::size_t c = 0; c < n_; ++c) {
      if (seen[c] || !tight_[row][c]) continue;
      seen[c] = 1;
      if (c == target) {
        path.emplace_back(row, c);
        return true;
      }
      const std::size_t next = row_of_[c];
      if (next == skip || fixed_[next]) continue;
      path.emplace_back(row, c);
      if (search(next, skip, target, seen, path)) return true;
      path.pop_back();
    }
    return false;
  }

  std::size_t n_;
  std::vector<std::size_t> col_of_;
  std::vector<std::size_t> row_of_;
  std::vector<char> fixed_;
  std::vector<std::vector<char>> tight_;
};

}  // namespace detail

/// Maximum-weight one-to-one partial assignment. Rectangular inputs are
/// zero-padded to square for the canonical solve and solved directly
/// otherwise; only pairs with positive weight are reported.
inline Assignment max_weight_assignment(const WeightMatrix& w, const AssignmentOptions& opts = {}) {
  const auto m = static_cast<std::size_t>(w.rows());
  const auto n = static_cast<std::size_t>(w.cols());
  if (m == 0 || n == 0) return {};
  if (!w.allFinite()) throw UsageError("weight matrix has non-finite entries");
  if (!opts.canonical) {
    const bool flip = m > n;
    const Eigen::MatrixXd cost = flip ? Eigen::MatrixXd(-w.transpose().cwiseMax(0.0)) : Eigen::MatrixXd(-w.cwiseMax(0.0));
    const auto h = detail::hungarian_min(cost);
    Assignment a;
    for (std::size_t r = 0; r < h.col_of_row.size(); ++r) {
      const std::size_t i = flip ? h.col_of_row[r] : r;
      const std::size_t j = flip ? r : h.col_of_row[r];
      const double wij = w(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
      if (wij > 0) {
        a.pairs.emplace_back(i, j);
        a.total += wij;
      }
    }
    std::sort(a.pairs.begin(), a.pairs.end());
    return a;
  }
  const std::size_t s = std::max(m, n);
  Eigen::MatrixXd weights = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(s));
  weights.topLeftCorner(w.rows(), w.cols()) = w.cwiseMax(0.0);
  const Eigen::MatrixXd cost = -weights;
  auto h = detail::hungarian_min(cost);
  std::vector<std::size_t> col_of = h.col_of_row;
  if (opts.canonical) {
    const double scale = std::max(1.0, weights.maxCoeff());
    detail::CanonicalMatcher cm(cost, std::move(h), opts.tie_tolerance * scale);
    col_of = cm.run(m, [&](std::size_t i) {
      std::vector<std::size_t> cols;
      for (std::size_t j = 0; j < n; ++j) {
        if (weights(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) > 0) cols.push_back(j);
      }
      return cols;
    });
  }
  Assignment a;
  for (std::size_t i = 0; i < m; ++i) {
    const std::size_t j = col_of[i];
    if (j >= n) continue;
    const double wij = weights(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
    if (wij > 0) {
      a.pairs.emplace_back(i, j);
      a.total += wij;
    }
  }
  return a;
}

}  // namespace layoutrag
