#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "layoutrag/error.hpp"

namespace layoutrag {

inline constexpr double kMinBoxSize = 1e-4;
inline constexpr std::size_t kMaxElements = 20;
inline constexpr std::size_t kGeometryChannels = 4;
// Per-slot flags appended to the network input: category, size, position known.
inline constexpr std::size_t kMaskChannels = 3;

using CategoryId = std::uint32_t;
using LayoutId = std::uint32_t;
using Rng = std::mt19937_64;

/// Mixes a base seed with a stream number (splitmix64 finalizer) so that
/// per-sample generators are independent and reproducible.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Axis-aligned box in center/size form, normalized to the unit canvas.
struct BBox {
  double cx = 0.5;
  double cy = 0.5;
  double w = kMinBoxSize;
  double h = kMinBoxSize;

  double x1() const { return cx - w / 2; }
  double y1() const { return cy - h / 2; }
  double x2() const { return cx + w / 2; }
  double y2() const { return cy + h / 2; }
  double area() const { return w * h; }

  static BBox from_corners(double x1, double y1, double x2, double y2) {
    return {(x1 + x2) / 2, (y1 + y2) / 2, x2 - x1, y2 - y1};
  }

  bool finite() const {
    return std::isfinite(cx) && std::isfinite(cy) && std::isfinite(w) && std::isfinite(h);
  }

  friend bool operator==(const BBox&, const BBox&) = default;
};

namespace detail {
inline double clamp_or(double v, double lo, double hi, double fallback) {
  return std::isfinite(v) ? std::clamp(v, lo, hi) : fallback;
}
}  // namespace detail

/// Centers into [0,1], sizes into [kMinBoxSize, 1]. Non-finite fields fall
/// back to the canvas center / minimum size. Idempotent.
inline BBox clamp_bbox(const BBox& b) {
  return {detail::clamp_or(b.cx, 0.0, 1.0, 0.5), detail::clamp_or(b.cy, 0.0, 1.0, 0.5),
          detail::clamp_or(b.w, kMinBoxSize, 1.0, kMinBoxSize),
          detail::clamp_or(b.h, kMinBoxSize, 1.0, kMinBoxSize)};
}

inline double intersection_area(const BBox& a, const BBox& b) {
  const double iw = std::min(a.x2(), b.x2()) - std::max(a.x1(), b.x1());
  const double ih = std::min(a.y2(), b.y2()) - std::max(a.y1(), b.y1());
  if (iw <= 0 || ih <= 0) return 0.0;
  return iw * ih;
}

struct Element {
  CategoryId category = 0;
  BBox bbox;

  friend bool operator==(const Element&, const Element&) = default;
};

struct Layout {
  std::vector<Element> elements;
  std::string name;  // source identifier, not used for retrieval

  std::size_t size() const { return elements.size(); }
  bool empty() const { return elements.empty(); }

  friend bool operator==(const Layout& a, const Layout& b) { return a.elements == b.elements; }
};

using Dataset = std::vector<Layout>;

class CategorySchema {
 public:
  CategorySchema() = default;

  explicit CategorySchema(std::vector<std::string> names) : names_(std::move(names)) {
    if (names_.empty()) throw DataError("category schema must contain at least one name");
    for (std::size_t i = 0; i < names_.size(); ++i) {
      if (!lookup_.emplace(names_[i], static_cast<CategoryId>(i)).second) {
        throw DataError("duplicate category name '" + names_[i] + "'");
      }
    }
  }

  /// Schema with generated names "c0".."c{n-1}".
  static CategorySchema anonymous(std::size_t n) {
    std::vector<std::string> names;
    for (std::size_t i = 0; i < n; ++i) names.push_back("c" + std::to_string(i));
    return CategorySchema(std::move(names));
  }

  std::size_t size() const { return names_.size(); }
  const std::string& name(CategoryId id) const { return names_.at(id); }
  const std::vector<std::string>& names() const { return names_; }

  std::optional<CategoryId> find(std::string_view name) const {
    auto it = lookup_.find(std::string(name));
    if (it == lookup_.end()) return std::nullopt;
    return it->second;
  }

  friend bool operator==(const CategorySchema& a, const CategorySchema& b) {
    return a.names_ == b.names_;
  }

 private:
  std::vector<std::string> names_;
  std::unordered_map<std::string, CategoryId> lookup_;
};

inline bool is_valid_layout(const Layout& l, std::size_t num_categories) {
  if (l.empty() || l.size() > kMaxElements) return false;
  for (const auto& e : l.elements) {
    if (e.category >= num_categories || !e.bbox.finite()) return false;
    if (e.bbox.w <= 0 || e.bbox.h <= 0) return false;
  }
  return true;
}

// ---------------------------------------------------------------------------
// Conditions

struct Size2 {
  double w = 0;
  double h = 0;
  friend bool operator==(const Size2&, const Size2&) = default;
};

struct Point2 {
  double cx = 0;
  double cy = 0;
  friend bool operator==(const Point2&, const Point2&) = default;
};

/// One element slot of a partial layout specification.
struct Slot {
  std::optional<CategoryId> category;
  std::optional<Size2> size;
  std::optional<Point2> position;

  bool fully_known() const { return category && size && position; }
  bool unknown() const { return !category && !size && !position; }

  friend bool operator==(const Slot&, const Slot&) = default;
};

struct Condition {
  std::vector<Slot> slots;

  std::size_t n_elements() const { return slots.size(); }

  std::size_t known_slots() const {
    return static_cast<std::size_t>(
        std::count_if(slots.begin(), slots.end(), [](const Slot& s) { return !s.unknown(); }));
  }

  friend bool operator==(const Condition&, const Condition&) = default;
};

enum class Task { UCond, CtoSP, CStoP, Completion };

inline std::string_view task_name(Task t) {
  switch (t) {
    case Task::UCond: return "ucond";
    case Task::CtoSP: return "c";
    case Task::CStoP: return "cs";
    case Task::Completion: return "completion";
  }
  return "?";
}

inline std::optional<Task> parse_task(std::string_view s) {
  if (s == "ucond") return Task::UCond;
  if (s == "c") return Task::CtoSP;
  if (s == "cs") return Task::CStoP;
  if (s == "completion") return Task::Completion;
  return std::nullopt;
}

inline Slot known_slot(const Element& e) {
  return {e.category, Size2{e.bbox.w, e.bbox.h}, Point2{e.bbox.cx, e.bbox.cy}};
}

/// Fully specifies ceil(fraction * N) randomly chosen elements of `l`.
inline Condition sample_completion_condition(const Layout& l, double fraction, Rng& rng) {
  if (l.empty()) throw DataError("cannot derive a completion condition from an empty layout");
  if (!(fraction > 0.0 && fraction < 1.0)) throw UsageError("completion fraction must lie in (0,1)");
  const std::size_t n = l.size();
  // Round away float noise before the ceiling so that 0.2 * 10 yields 2, not 3.
  const double raw = fraction * static_cast<double>(n);
  const auto known = static_cast<std::size_t>(std::ceil(raw - 1e-9));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t i = n - 1; i > 0; --i) {
    std::uniform_int_distribution<std::size_t> pick(0, i);
    std::swap(order[i], order[pick(rng)]);
  }
  Condition c;
  c.slots.resize(n);
  for (std::size_t k = 0; k < std::max<std::size_t>(known, 1); ++k) {
    c.slots[order[k]] = known_slot(l.elements[order[k]]);
  }
  return c;
}

/// Condition of the given task derived from a complete layout.
inline Condition make_condition(Task task, const Layout& l, Rng& rng, double completion_fraction = 0.2) {
  Condition c;
  c.slots.resize(l.size());
  switch (task) {
    case Task::UCond:
      break;
    case Task::CtoSP:
      for (std::size_t i = 0; i < l.size(); ++i) c.slots[i].category = l.elements[i].category;
      break;
    case Task::CStoP:
      for (std::size_t i = 0; i < l.size(); ++i) {
        c.slots[i].category = l.elements[i].category;
        c.slots[i].size = Size2{l.elements[i].bbox.w, l.elements[i].bbox.h};
      }
      break;
    case Task::Completion:
      return sample_completion_condition(l, completion_fraction, rng);
  }
  return c;
}

/// Throws DataError when `c` does not have the shape `task` requires.
inline void validate_condition(Task task, const Condition& c, std::size_t num_categories) {
  if (c.slots.empty() || c.slots.size() > kMaxElements) {
    throw DataError("condition must have between 1 and 20 element slots");
  }
  for (std::size_t i = 0; i < c.slots.size(); ++i) {
    const Slot& s = c.slots[i];
    const std::string where = "slot " + std::to_string(i) + ": ";
    if (s.category && *s.category >= num_categories) throw DataError(where + "unknown category id");
    if (s.size && !(s.size->w > 0 && s.size->w <= 1 && s.size->h > 0 && s.size->h <= 1)) {
      throw DataError(where + "size outside (0,1]");
    }
    if (s.position && !(s.position->cx >= 0 && s.position->cx <= 1 && s.position->cy >= 0 &&
                        s.position->cy <= 1)) {
      throw DataError(where + "position outside [0,1]");
    }
    bool ok = false;
    switch (task) {
      case Task::UCond: ok = s.unknown(); break;
      case Task::CtoSP: ok = s.category && !s.size && !s.position; break;
      case Task::CStoP: ok = s.category && s.size && !s.position; break;
      case Task::Completion: ok = s.fully_known() || s.unknown(); break;
    }
    if (!ok) {
      throw DataError(where + "attributes inconsistent with task '" + std::string(task_name(task)) + "'");
    }
  }
}

/// Task implied by the attribute pattern of a condition (mixed patterns map to Completion).
inline Task infer_task(const Condition& c) {
  const auto all = [&](auto pred) { return std::all_of(c.slots.begin(), c.slots.end(), pred); };
  if (all([](const Slot& s) { return s.unknown(); })) return Task::UCond;
  if (all([](const Slot& s) { return s.category && !s.size && !s.position; })) return Task::CtoSP;
  if (all([](const Slot& s) { return s.category && s.size && !s.position; })) return Task::CStoP;
  return Task::Completion;
}

// ---------------------------------------------------------------------------
// Continuous encoding: one row per element, one-hot category then (cx, cy, w, h).

using LayoutEncoding = Eigen::MatrixXd;

inline LayoutEncoding encode_layout(const Layout& l, std::size_t num_categories) {
  const auto n = static_cast<Eigen::Index>(l.size());
  const auto nc = static_cast<Eigen::Index>(num_categories);
  LayoutEncoding m = LayoutEncoding::Zero(n, nc + 4);
  for (Eigen::Index i = 0; i < n; ++i) {
    const Element& e = l.elements[static_cast<std::size_t>(i)];
    m(i, static_cast<Eigen::Index>(e.category)) = 1.0;
    m(i, nc + 0) = e.bbox.cx;
    m(i, nc + 1) = e.bbox.cy;
    m(i, nc + 2) = e.bbox.w;
    m(i, nc + 3) = e.bbox.h;
  }
  return m;
}

inline Layout decode_layout(const LayoutEncoding& m, std::size_t num_categories) {
  const auto nc = static_cast<Eigen::Index>(num_categories);
  Layout l;
  l.elements.reserve(static_cast<std::size_t>(m.rows()));
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    Eigen::Index best = 0;
    for (Eigen::Index c = 1; c < nc; ++c) {
      if (m(i, c) > m(i, best)) best = c;  // strict: ties keep the lowest id
    }
    const BBox raw{m(i, nc + 0), m(i, nc + 1), m(i, nc + 2), m(i, nc + 3)};
    l.elements.push_back({static_cast<CategoryId>(best), clamp_bbox(raw)});
  }
  return l;
}

/// Channels of the encoding pinned by a condition, and their values.
struct ConditionChannels {
  LayoutEncoding values;  // N x (C+4), zero where unknown
  Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic> known;  // N x (C+4)
  Eigen::MatrixXd flags;  // N x 3 attribute-known flags

  /// Overwrites the pinned channels of `x` with their condition values.
  void clamp(LayoutEncoding& x) const { x = known.select(values, x); }
};

inline ConditionChannels condition_channels(const Condition& c, std::size_t num_categories) {
  const auto n = static_cast<Eigen::Index>(c.slots.size());
  const auto nc = static_cast<Eigen::Index>(num_categories);
  ConditionChannels out;
  out.values = LayoutEncoding::Zero(n, nc + 4);
  out.known.setConstant(n, nc + 4, false);
  out.flags = Eigen::MatrixXd::Zero(n, kMaskChannels);
  for (Eigen::Index i = 0; i < n; ++i) {
    const Slot& s = c.slots[static_cast<std::size_t>(i)];
    if (s.category) {
      out.values(i, static_cast<Eigen::Index>(*s.category)) = 1.0;
      out.known.row(i).head(nc).setConstant(true);
      out.flags(i, 0) = 1.0;
    }
    if (s.size) {
      out.values(i, nc + 2) = s.size->w;
      out.values(i, nc + 3) = s.size->h;
      out.known(i, nc + 2) = out.known(i, nc + 3) = true;
      out.flags(i, 1) = 1.0;
    }
    if (s.position) {
      out.values(i, nc + 0) = s.position->cx;
      out.values(i, nc + 1) = s.position->cy;
      out.known(i, nc + 0) = out.known(i, nc + 1) = true;
      out.flags(i, 2) = 1.0;
    }
  }
  return out;
}

/// True when slot `s` is satisfied exactly by element `e`.
inline bool satisfies(const Element& e, const Slot& s) {
  if (s.category && e.category != *s.category) return false;
  if (s.size && (e.bbox.w != s.size->w || e.bbox.h != s.size->h)) return false;
  if (s.position && (e.bbox.cx != s.position->cx || e.bbox.cy != s.position->cy)) return false;
  return true;
}

/// Slot i is checked against element i.
inline bool satisfies(const Layout& l, const Condition& c) {
  if (l.size() < c.slots.size()) return false;
  for (std::size_t i = 0; i < c.slots.size(); ++i) {
    if (!satisfies(l.elements[i], c.slots[i])) return false;
  }
  return true;
}

}  // namespace layoutrag
