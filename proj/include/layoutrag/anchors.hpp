#pragma once

#include <cmath>
#include <limits>

#include <Eigen/Dense>

#include "layoutrag/layout.hpp"

// Edge and center anchors shared by the alignment regularizer and metric.
namespace layoutrag {

namespace detail {

inline constexpr int kAnchors = 6;

/// Anchor a of a (cx, cy, w, h) row: left, center-x, right, top, center-y, bottom.
inline double anchor(const Eigen::MatrixXd& g, Eigen::Index i, int a) {
  switch (a) {
    case 0: return g(i, 0) - g(i, 2) / 2;
    case 1: return g(i, 0);
    case 2: return g(i, 0) + g(i, 2) / 2;
    case 3: return g(i, 1) - g(i, 3) / 2;
    case 4: return g(i, 1);
    default: return g(i, 1) + g(i, 3) / 2;
  }
}

/// d anchor / d (cx, cy, w, h)
inline void add_anchor_grad(Eigen::MatrixXd& grad, Eigen::Index i, int a, double s) {
  const int axis = a < 3 ? 0 : 1;
  const int pos = a % 3;
  grad(i, axis) += s;
  if (pos == 0) grad(i, axis + 2) -= s / 2;
  if (pos == 2) grad(i, axis + 2) += s / 2;
}

struct NearestAnchor {
  double dist = 0;
  Eigen::Index j = -1;
  int a = 0;
};

inline NearestAnchor nearest_anchor(const Eigen::MatrixXd& g, Eigen::Index i) {
  NearestAnchor best{std::numeric_limits<double>::infinity(), -1, 0};
  for (Eigen::Index j = 0; j < g.rows(); ++j) {
    if (j == i) continue;
    for (int a = 0; a < kAnchors; ++a) {
      const double d = std::abs(anchor(g, i, a) - anchor(g, j, a));
      if (d < best.dist) best = {d, j, a};
    }
  }
  return best;
}

}  // namespace detail

/// Mean over elements of the distance to the nearest same-kind anchor of any
/// other element; 0 for a single element. `geometry` is N x 4 (cx, cy, w, h).
inline double align_reg(const Eigen::MatrixXd& geometry) {
  const Eigen::Index n = geometry.rows();
  if (n <= 1) return 0.0;
  double total = 0;
  for (Eigen::Index i = 0; i < n; ++i) total += detail::nearest_anchor(geometry, i).dist;
  return total / static_cast<double>(n);
}

/// N x 4 matrix of (cx, cy, w, h) rows.
inline Eigen::MatrixXd geometry_matrix(const Layout& l) {
  Eigen::MatrixXd g(static_cast<Eigen::Index>(l.size()), 4);
  for (std::size_t i = 0; i < l.size(); ++i) {
    const BBox& b = l.elements[i].bbox;
    g.row(static_cast<Eigen::Index>(i)) << b.cx, b.cy, b.w, b.h;
  }
  return g;
}

}  // namespace layoutrag
