#pragma once

#include <algorithm>
#include <optional>
#include <span>
#include <string_view>
#include <utility>
#include <vector>

#include "layoutrag/assignment.hpp"
#include "layoutrag/error.hpp"
#include "layoutrag/layout.hpp"

namespace layoutrag {

/// Which geometric attributes take part in element weights.
///   Full     - IoU of the two boxes (needs position and size)
///   SizeOnly - IoU of the two size rectangles placed on a common center
///   TypeOnly - 1 for every same-category pair
enum class GeometryMode { Full, SizeOnly, TypeOnly };

inline std::string_view mode_name(GeometryMode m) {
  switch (m) {
    case GeometryMode::Full: return "full";
    case GeometryMode::SizeOnly: return "size";
    case GeometryMode::TypeOnly: return "type";
  }
  return "?";
}

inline std::optional<GeometryMode> parse_mode(std::string_view s) {
  if (s == "full") return GeometryMode::Full;
  if (s == "size") return GeometryMode::SizeOnly;
  if (s == "type") return GeometryMode::TypeOnly;
  return std::nullopt;
}

/// Geometry mode used to compare a task's conditions against templates.
inline GeometryMode mode_for_task(Task t) {
  switch (t) {
    case Task::CStoP: return GeometryMode::SizeOnly;
    case Task::Completion: return GeometryMode::Full;
    case Task::UCond:
    case Task::CtoSP: return GeometryMode::TypeOnly;
  }
  return GeometryMode::TypeOnly;
}

inline double iou(const BBox& a, const BBox& b) {
  const double inter = intersection_area(a, b);
  if (inter <= 0) return 0.0;
  // Areas from the same corner arithmetic as the intersection, so iou(a, a) == 1 exactly.
  const double area_a = (a.x2() - a.x1()) * (a.y2() - a.y1());
  const double area_b = (b.x2() - b.x1()) * (b.y2() - b.y1());
  return inter / (area_a + area_b - inter);
}

inline double size_iou(double w1, double h1, double w2, double h2) {
  const double inter = std::min(w1, w2) * std::min(h1, h2);
  return inter / (w1 * h1 + w2 * h2 - inter);
}

/// Weight between a query slot and a candidate element.
inline double pair_weight(const Slot& q, const Element& e, GeometryMode mode) {
  if (!q.category) throw DataError("similarity query slot has no category");
  if (*q.category != e.category) return 0.0;
  switch (mode) {
    case GeometryMode::TypeOnly:
      return 1.0;
    case GeometryMode::SizeOnly:
      if (!q.size) throw DataError("size-only similarity needs slot sizes");
      return size_iou(q.size->w, q.size->h, e.bbox.w, e.bbox.h);
    case GeometryMode::Full:
      if (!q.size || !q.position) throw DataError("full similarity needs slot sizes and positions");
      return iou({q.position->cx, q.position->cy, q.size->w, q.size->h}, e.bbox);
  }
  return 0.0;
}

inline double pair_weight(const Element& a, const Element& b, GeometryMode mode) {
  return pair_weight(known_slot(a), b, mode);
}

/// Known slots of a condition, with their slot indices.
inline std::vector<std::pair<std::size_t, const Slot*>> known_slot_refs(const Condition& q) {
  std::vector<std::pair<std::size_t, const Slot*>> out;
  for (std::size_t i = 0; i < q.slots.size(); ++i) {
    if (!q.slots[i].unknown()) out.emplace_back(i, &q.slots[i]);
  }
  return out;
}

/// Rows: known slots of `q` in slot order. Columns: elements of `c`.
inline WeightMatrix weight_matrix(const Condition& q, const Layout& c, GeometryMode mode) {
  const auto known = known_slot_refs(q);
  WeightMatrix w(static_cast<Eigen::Index>(known.size()), static_cast<Eigen::Index>(c.size()));
  for (std::size_t i = 0; i < known.size(); ++i) {
    for (std::size_t j = 0; j < c.size(); ++j) {
      w(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = pair_weight(*known[i].second, c.elements[j], mode);
    }
  }
  return w;
}

/// Optimal-assignment similarity normalized by max(known slots, |c|), in [0,1].
inline double layout_similarity(const Condition& q, const Layout& c, GeometryMode mode,
                                const AssignmentOptions& opts = {.canonical = false}) {
  const WeightMatrix w = weight_matrix(q, c, mode);
  const auto denom = static_cast<double>(std::max<Eigen::Index>(w.rows(), w.cols()));
  if (denom == 0 || w.rows() == 0 || w.cols() == 0) return 0.0;
  return std::clamp(max_weight_assignment(w, opts).total / denom, 0.0, 1.0);
}

inline Condition as_condition(const Layout& l) {
  Condition c;
  c.slots.reserve(l.size());
  for (const auto& e : l.elements) c.slots.push_back(known_slot(e));
  return c;
}

inline double layout_similarity(const Layout& q, const Layout& c, GeometryMode mode) {
  return layout_similarity(as_condition(q), c, mode);
}

struct ScoredCandidate {
  LayoutId id = 0;
  double score = 0.0;
  friend bool operator==(const ScoredCandidate&, const ScoredCandidate&) = default;
};

inline std::vector<ScoredCandidate> score_candidates(const Condition& q, std::span<const LayoutId> ids,
                                                     const Dataset& db, GeometryMode mode,
                                                     std::optional<LayoutId> exclude_id = std::nullopt) {
  std::vector<ScoredCandidate> out;
  out.reserve(ids.size());
  for (LayoutId id : ids) {
    if (exclude_id && id == *exclude_id) continue;
    out.push_back({id, layout_similarity(q, db.at(id), mode)});
  }
  return out;
}

/// Descending by score; equal scores appear in a seeded random order.
inline std::vector<ScoredCandidate> rank_scored(std::vector<ScoredCandidate> scored, std::size_t k, Rng& rng) {
  if (k == 0) throw UsageError("k must be at least 1");
  for (std::size_t i = scored.size(); i > 1; --i) {
    std::uniform_int_distribution<std::size_t> pick(0, i - 1);
    std::swap(scored[i - 1], scored[pick(rng)]);
  }
  std::stable_sort(scored.begin(), scored.end(),
                   [](const ScoredCandidate& a, const ScoredCandidate& b) { return a.score > b.score; });
  if (scored.size() > k) scored.resize(k);
  return scored;
}

inline std::vector<ScoredCandidate> rank_candidates(const Condition& q, std::span<const LayoutId> ids,
                                                    const Dataset& db, GeometryMode mode, std::size_t k,
                                                    Rng& rng, std::optional<LayoutId> exclude_id = std::nullopt) {
  return rank_scored(score_candidates(q, ids, db, mode, exclude_id), k, rng);
}

}  // namespace layoutrag
