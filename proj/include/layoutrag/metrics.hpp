#pragma once

#include <cmath>
#include <map>
#include <span>
#include <vector>

#include <Eigen/Dense>
#include "json.hpp"

#include "layoutrag/anchors.hpp"
#include "layoutrag/assignment.hpp"
#include "layoutrag/error.hpp"
#include "layoutrag/index.hpp"
#include "layoutrag/layout.hpp"
#include "layoutrag/similarity.hpp"

namespace layoutrag {

/// Mean nearest same-anchor distance per layout, averaged over layouts, x100.
inline double alignment(std::span<const Layout> layouts) {
  if (layouts.empty()) throw DataError("alignment of an empty collection");
  double total = 0;
  for (const auto& l : layouts) total += align_reg(geometry_matrix(l));
  return 100.0 * total / static_cast<double>(layouts.size());
}

/// Pairwise intersection area over total element area for one layout.
inline double overlap(const Layout& l) {
  double inter = 0, area = 0;
  for (std::size_t i = 0; i < l.size(); ++i) {
    area += l.elements[i].bbox.area();
    for (std::size_t j = i + 1; j < l.size(); ++j) inter += intersection_area(l.elements[i].bbox, l.elements[j].bbox);
  }
  if (!(area > 0)) throw DataError("layout has zero total area");
  return inter / area;
}

inline double overlap(std::span<const Layout> layouts) {
  if (layouts.empty()) throw DataError("overlap of an empty collection");
  double total = 0;
  for (const auto& l : layouts) total += overlap(l);
  return total / static_cast<double>(layouts.size());
}

/// Within each category multiset shared by both collections, the best
/// one-to-one matching of generated to real layouts under Full similarity;
/// summed and divided by the number of generated layouts.
inline double max_iou(std::span<const Layout> generated, std::span<const Layout> references,
                      std::size_t num_categories) {
  if (generated.empty() || references.empty()) throw DataError("max_iou needs non-empty collections");
  std::map<CountKey, std::pair<std::vector<std::size_t>, std::vector<std::size_t>>> groups;
  for (std::size_t i = 0; i < generated.size(); ++i) groups[count_key(generated[i], num_categories)].first.push_back(i);
  for (std::size_t j = 0; j < references.size(); ++j) {
    auto it = groups.find(count_key(references[j], num_categories));
    if (it != groups.end()) it->second.second.push_back(j);
  }
  double total = 0;
  for (const auto& [key, members] : groups) {
    const auto& [gen, ref] = members;
    if (ref.empty()) continue;
    WeightMatrix w(static_cast<Eigen::Index>(gen.size()), static_cast<Eigen::Index>(ref.size()));
    for (std::size_t a = 0; a < gen.size(); ++a) {
      for (std::size_t b = 0; b < ref.size(); ++b) {
        w(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) =
            layout_similarity(generated[gen[a]], references[ref[b]], GeometryMode::Full);
      }
    }
    total += max_weight_assignment(w, {.canonical = false}).total;
  }
  return std::clamp(total / static_cast<double>(generated.size()), 0.0, 1.0);
}

/// Handcrafted per-layout features: normalized count vector, mean and std of
/// cx, cy, w, h, overlap, alignment / 100.
inline Eigen::VectorXd layout_features(const Layout& l, std::size_t num_categories) {
  const auto nc = static_cast<Eigen::Index>(num_categories);
  Eigen::VectorXd f = Eigen::VectorXd::Zero(nc + 10);
  const double n = static_cast<double>(l.size());
  for (const auto& e : l.elements) f(static_cast<Eigen::Index>(e.category)) += 1.0 / n;
  const Eigen::MatrixXd g = geometry_matrix(l);
  const Eigen::RowVectorXd mean = g.colwise().mean();
  const Eigen::RowVectorXd sd = ((g.rowwise() - mean).array().square().colwise().mean()).sqrt();
  f.segment(nc, 4) = mean.transpose();
  f.segment(nc + 4, 4) = sd.transpose();
  f(nc + 8) = overlap(l);
  f(nc + 9) = align_reg(g);
  return f;
}

namespace detail {

inline Eigen::MatrixXd sqrt_psd(const Eigen::MatrixXd& m) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (m + m.transpose()));
  const Eigen::VectorXd ev = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

struct Gaussian {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;
};

inline Gaussian fit_features(std::span<const Layout> layouts, std::size_t num_categories) {
  const auto n = static_cast<Eigen::Index>(layouts.size());
  Eigen::MatrixXd x(n, static_cast<Eigen::Index>(num_categories) + 10);
  for (Eigen::Index i = 0; i < n; ++i) x.row(i) = layout_features(layouts[static_cast<std::size_t>(i)], num_categories);
  Gaussian g;
  g.mean = x.colwise().mean().transpose();
  const Eigen::MatrixXd centered = x.rowwise() - g.mean.transpose();
  g.cov = centered.transpose() * centered / static_cast<double>(n - 1);
  // Always jittered: feature covariances are routinely singular (constant counts).
  g.cov.diagonal().array() += 1e-6;
  return g;
}

}  // namespace detail

/// Frechet distance between Gaussians fitted to handcrafted layout features.
/// A stand-in for FID; the two are not comparable.
inline double proxy_frechet(std::span<const Layout> generated, std::span<const Layout> references,
                            std::size_t num_categories) {
  if (generated.size() < 2 || references.size() < 2) {
    throw DataError("proxy_frechet needs at least two layouts per collection");
  }
  const auto a = detail::fit_features(generated, num_categories);
  const auto b = detail::fit_features(references, num_categories);
  // tr((S1 S2)^1/2) computed from the symmetric form S1^1/2 S2 S1^1/2.
  const Eigen::MatrixXd s1 = detail::sqrt_psd(a.cov);
  const Eigen::MatrixXd cross = detail::sqrt_psd(s1 * b.cov * s1);
  const double d = (a.mean - b.mean).squaredNorm() + a.cov.trace() + b.cov.trace() - 2.0 * cross.trace();
  return std::max(0.0, d);
}

struct MetricsReport {
  double alignment = 0;
  double overlap = 0;
  double miou = 0;
  double proxy_fd = 0;
  std::size_t n_layouts = 0;
};

inline MetricsReport compute_metrics(std::span<const Layout> generated, std::span<const Layout> references,
                                     std::size_t num_categories) {
  MetricsReport r;
  r.alignment = alignment(generated);
  r.overlap = overlap(generated);
  r.miou = max_iou(generated, references, num_categories);
  r.proxy_fd = proxy_frechet(generated, references, num_categories);
  r.n_layouts = generated.size();
  return r;
}

inline nlohmann::json to_json(const MetricsReport& r) {
  return {{"alignment", r.alignment},
          {"overlap", r.overlap},
          {"miou", r.miou},
          {"proxy_fd", r.proxy_fd},
          {"n_layouts", r.n_layouts}};
}

}  // namespace layoutrag
