#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "layoutrag/assignment.hpp"
#include "layoutrag/error.hpp"
#include "layoutrag/flow.hpp"
#include "layoutrag/index.hpp"
#include "layoutrag/layout.hpp"
#include "layoutrag/metrics.hpp"
#include "layoutrag/model.hpp"
#include "layoutrag/similarity.hpp"

namespace layoutrag {

// Generation was requested but no trained model is loaded.
class NoModelError : public UsageError {
 public:
  using UsageError::UsageError;
};

struct TaskSpec {
  Task task = Task::UCond;
  Condition condition;
  std::size_t n_samples = 1;
};

struct RetrievalPolicy {
  std::size_t k = 64;  // candidates to score; larger candidate sets are subsampled
  double tau_reuse = 0.95;
  double tau_ref = 0.05;
  std::optional<double> sim_cap;  // drop candidates scoring above this
  std::optional<LayoutId> exclude_id;

  void validate() const {
    if (k == 0) throw UsageError("k must be at least 1");
    if (!(tau_ref >= 0 && tau_ref <= tau_reuse && tau_reuse <= 1)) {
      throw UsageError("thresholds must satisfy 0 <= tau_ref <= tau_reuse <= 1");
    }
    if (sim_cap && !(*sim_cap >= 0 && *sim_cap <= 1)) throw UsageError("sim_cap must lie in [0,1]");
  }
};

struct Retrieval {
  std::vector<ScoredCandidate> ranked;  // descending by score
  std::size_t qualified = 0;            // ids passing the index query (after exclude_id)
};

/// Collects candidates from the index and ranks them in the task's geometry
/// mode. UCond draws k random ids; CtoSP/CStoP use the exact count key;
/// Completion uses a lower-bound query on the known slots' categories.
inline Retrieval retrieve(const LayoutIndex& index, const Dataset& db, Task task, const Condition& cond,
                          const RetrievalPolicy& policy, Rng& rng) {
  policy.validate();
  if (index.num_layouts() != db.size()) throw UsageError("index and database sizes differ");
  const std::size_t nc = index.num_categories();
  validate_condition(task, cond, nc);
  std::vector<LayoutId> ids;
  switch (task) {
    case Task::UCond:
      ids.resize(db.size());
      for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = static_cast<LayoutId>(i);
      break;
    case Task::CtoSP:
    case Task::CStoP:
      ids = index.query_exact(count_key(cond, nc));
      break;
    case Task::Completion:
      ids = index.query_lower_bound(count_key(cond, nc));
      break;
  }
  if (policy.exclude_id) std::erase(ids, *policy.exclude_id);

  Retrieval r;
  r.qualified = ids.size();
  if (ids.size() > policy.k) {
    // Partial Fisher-Yates: a seeded uniform k-subset, kept in id order.
    for (std::size_t i = 0; i < policy.k; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, ids.size() - 1);
      std::swap(ids[i], ids[pick(rng)]);
    }
    ids.resize(policy.k);
    std::sort(ids.begin(), ids.end());
  }
  const GeometryMode mode = mode_for_task(task);
  std::vector<ScoredCandidate> scored;
  scored.reserve(ids.size());
  for (LayoutId id : ids) {
    const double s = task == Task::UCond ? 0.0 : layout_similarity(cond, db.at(id), mode);
    if (policy.sim_cap && s > *policy.sim_cap) continue;
    scored.push_back({id, s});
  }
  if (!scored.empty()) {
    const std::size_t n = scored.size();
    r.ranked = rank_scored(std::move(scored), n, rng);
  }
  return r;
}

enum class DecisionKind { Reuse, Guide, Base };

inline std::string_view decision_name(DecisionKind k) {
  switch (k) {
    case DecisionKind::Reuse: return "reuse";
    case DecisionKind::Guide: return "guide";
    case DecisionKind::Base: return "base";
  }
  return "?";
}

struct Decision {
  DecisionKind kind = DecisionKind::Base;
  std::optional<LayoutId> template_id;
  double score = 0.0;
  friend bool operator==(const Decision&, const Decision&) = default;
};

inline Decision decide(std::span<const ScoredCandidate> ranked, const RetrievalPolicy& policy) {
  if (ranked.empty()) return {};
  const ScoredCandidate& top = ranked.front();
  if (top.score >= policy.tau_reuse) return {DecisionKind::Reuse, top.id, top.score};
  if (top.score >= policy.tau_ref) return {DecisionKind::Guide, top.id, top.score};
  return {DecisionKind::Base, std::nullopt, top.score};
}

/// Per-category median element size of a database, used when an element has
/// to be invented.
class SizePrior {
 public:
  SizePrior() = default;
  SizePrior(const Dataset& db, std::size_t num_categories) : median_(num_categories) {
    std::vector<std::vector<double>> ws(num_categories), hs(num_categories);
    std::vector<double> all_w, all_h;
    for (const auto& l : db) {
      for (const auto& e : l.elements) {
        if (e.category >= num_categories) throw DataError("category id outside the schema");
        ws[e.category].push_back(e.bbox.w);
        hs[e.category].push_back(e.bbox.h);
        all_w.push_back(e.bbox.w);
        all_h.push_back(e.bbox.h);
      }
    }
    fallback_ = all_w.empty() ? Size2{0.25, 0.25} : Size2{median(all_w), median(all_h)};
    for (std::size_t c = 0; c < num_categories; ++c) {
      median_[c] = ws[c].empty() ? fallback_ : Size2{median(ws[c]), median(hs[c])};
    }
  }

  Size2 size(CategoryId c) const { return c < median_.size() ? median_[c] : fallback_; }

  /// Lower median for even counts, so the value is always an observed size.
  static double median(std::vector<double> v) {
    const auto mid = v.begin() + static_cast<std::ptrdiff_t>((v.size() - 1) / 2);
    std::nth_element(v.begin(), mid, v.end());
    return *mid;
  }

 private:
  std::vector<Size2> median_;
  Size2 fallback_{0.25, 0.25};
};

/// Center of the 4x4 grid cell where a box of size `s` overlaps the existing
/// elements least; ties go to the first cell in row-major order.
inline Point2 lowest_overlap_cell(const std::vector<Element>& existing, Size2 s) {
  Point2 best{0.125, 0.125};
  double best_overlap = std::numeric_limits<double>::infinity();
  for (int r = 0; r < 4; ++r) {
    for (int c = 0; c < 4; ++c) {
      const Point2 p{0.125 + 0.25 * c, 0.125 + 0.25 * r};
      double o = 0;
      for (const auto& e : existing) o += intersection_area(BBox{p.cx, p.cy, s.w, s.h}, e.bbox);
      if (o < best_overlap) {
        best_overlap = o;
        best = p;
      }
    }
  }
  return best;
}

namespace detail {

inline Element overwrite(Element e, const Slot& s) {
  if (s.category) e.category = *s.category;
  if (s.size) {
    e.bbox.w = s.size->w;
    e.bbox.h = s.size->h;
  }
  if (s.position) {
    e.bbox.cx = s.position->cx;
    e.bbox.cy = s.position->cy;
  }
  return e;
}

}  // namespace detail

/// Adapts a retrieved template to a condition. Known slots are matched to
/// template elements by optimal assignment in `mode`; matched elements take
/// the slot's conditioned attributes and move to the slot's index. Unknown
/// slots take the remaining template elements in order; leftovers are
/// appended. Slots with nothing to take get a new element: the slot's
/// attributes where known, the prior's median size and the lowest-overlap
/// grid cell otherwise (category: the template's first leftover category, or
/// the most common template category).
inline Layout apply_modification(const Layout& tmpl, const Condition& cond, GeometryMode mode,
                                 const SizePrior& prior) {
  const auto known = known_slot_refs(cond);
  std::vector<std::optional<std::size_t>> element_of_slot(cond.slots.size());
  std::vector<char> used(tmpl.size(), 0);
  if (!known.empty() && !tmpl.empty()) {
    const Assignment a = max_weight_assignment(weight_matrix(cond, tmpl, mode));
    for (const auto& [row, col] : a.pairs) {
      element_of_slot[known[row].first] = col;
      used[col] = 1;
    }
  }
  std::vector<std::size_t> leftovers;
  for (std::size_t j = 0; j < tmpl.size(); ++j) {
    if (!used[j]) leftovers.push_back(j);
  }
  std::size_t next_leftover = 0;
  for (std::size_t i = 0; i < cond.slots.size(); ++i) {
    if (cond.slots[i].unknown() && next_leftover < leftovers.size()) element_of_slot[i] = leftovers[next_leftover++];
  }

  CategoryId common = 0;
  if (!tmpl.empty()) {
    std::vector<std::size_t> counts;
    for (const auto& e : tmpl.elements) {
      if (e.category >= counts.size()) counts.resize(e.category + 1, 0);
      ++counts[e.category];
    }
    common = static_cast<CategoryId>(std::max_element(counts.begin(), counts.end()) - counts.begin());
  }

  Layout out;
  out.name = tmpl.name;
  std::vector<Element> placed;
  for (std::size_t i = 0; i < cond.slots.size(); ++i) {
    if (element_of_slot[i]) placed.push_back(tmpl.elements[*element_of_slot[i]]);
  }
  for (std::size_t j = next_leftover; j < leftovers.size(); ++j) placed.push_back(tmpl.elements[leftovers[j]]);

  for (std::size_t i = 0; i < cond.slots.size(); ++i) {
    const Slot& s = cond.slots[i];
    if (element_of_slot[i]) {
      out.elements.push_back(detail::overwrite(tmpl.elements[*element_of_slot[i]], s));
      continue;
    }
    Element e;
    e.category = s.category.value_or(common);
    const Size2 size = s.size.value_or(prior.size(e.category));
    const Point2 pos = s.position.value_or(lowest_overlap_cell(placed, size));
    e.bbox = BBox{pos.cx, pos.cy, size.w, size.h};
    if (!s.size || !s.position) {
      const BBox clamped = clamp_bbox(e.bbox);
      if (!s.size) e.bbox.w = clamped.w, e.bbox.h = clamped.h;
      if (!s.position) e.bbox.cx = clamped.cx, e.bbox.cy = clamped.cy;
    }
    placed.push_back(e);
    out.elements.push_back(e);
  }
  for (std::size_t j = next_leftover; j < leftovers.size(); ++j) out.elements.push_back(tmpl.elements[leftovers[j]]);
  if (out.size() > kMaxElements) throw DataError("modified template would exceed 20 elements");
  return out;
}

struct Provenance {
  Task task = Task::UCond;
  Decision decision;
  std::uint64_t seed = 0;
};

struct GenerationResult {
  std::vector<Layout> layouts;
  std::vector<Provenance> provenance;
};

/// Everything generation reads; all of it is immutable during a request.
struct PipelineContext {
  const LayoutIndex* index = nullptr;
  const Dataset* db = nullptr;
  const VectorFieldNet* net = nullptr;  // may be null: retrieval-only
  SizePrior prior;
};

inline PipelineContext make_context(const LayoutIndex& index, const Dataset& db, const VectorFieldNet* net) {
  return {&index, &db, net, SizePrior(db, index.num_categories())};
}

/// Element count for a UCond request, drawn from the database's empirical
/// distribution.
inline std::size_t draw_element_count(const Dataset& db, Rng& rng) {
  if (db.empty()) throw DataError("cannot draw an element count from an empty database");
  std::uniform_int_distribution<std::size_t> pick(0, db.size() - 1);
  return db[pick(rng)].size();
}

/// One output per sample: retrieve, decide, then reuse the modified template
/// or sample with/without it as reference. Each sample uses its own seed
/// derived from (seed, sample index); retrieval and the sampler noise use
/// separate streams, so base-only runs see the same noise.
inline GenerationResult generate(const PipelineContext& ctx, const TaskSpec& spec, const RetrievalPolicy& policy,
                                 std::uint64_t seed, bool base_only = false) {
  if (!ctx.index || !ctx.db) throw UsageError("pipeline context has no index or database");
  const std::size_t nc = ctx.index->num_categories();
  if (ctx.net && ctx.net->config().num_categories != nc) {
    throw UsageError("model and index disagree on the number of categories");
  }
  validate_condition(spec.task, spec.condition, nc);
  GenerationResult out;
  for (std::size_t s = 0; s < spec.n_samples; ++s) {
    const std::uint64_t sample_seed = derive_seed(seed, s);
    Rng retrieval_rng(derive_seed(sample_seed, 1));
    Rng sampler_rng(derive_seed(sample_seed, 2));
    Decision d;
    if (!base_only) d = decide(retrieve(*ctx.index, *ctx.db, spec.task, spec.condition, policy, retrieval_rng).ranked, policy);

    Layout l;
    if (d.kind == DecisionKind::Reuse) {
      l = apply_modification(ctx.db->at(*d.template_id), spec.condition, mode_for_task(spec.task), ctx.prior);
    } else {
      if (!ctx.net) throw NoModelError("generation needs a trained model (no checkpoint loaded)");
      const Layout* ref = d.kind == DecisionKind::Guide ? &ctx.db->at(*d.template_id) : nullptr;
      l = sample_layout(*ctx.net, spec.condition, ref, sampler_rng);
    }
    out.layouts.push_back(std::move(l));
    out.provenance.push_back({spec.task, d, sample_seed});
  }
  return out;
}

/// Training-time reference source: the same retrieval and thresholds as
/// inference, excluding the sample itself.
inline ReferenceProvider make_reference_provider(const LayoutIndex& index, const Dataset& db,
                                                 RetrievalPolicy policy) {
  return [&index, &db, policy](const Condition& cond, Task task, LayoutId self, Rng& rng) mutable {
    policy.exclude_id = self;
    const Decision d = decide(retrieve(index, db, task, cond, policy, rng).ranked, policy);
    return d.kind == DecisionKind::Base ? std::nullopt : d.template_id;
  };
}

struct EvaluationOptions {
  std::uint64_t seed = 0;
  bool exclude_self = false;  // test layouts are database layouts with the same ids
  bool base_only = false;
  double completion_fraction = 0.2;
};

/// The condition evaluation derives from test layout i.
inline Condition evaluation_condition(const Layout& l, std::size_t i, Task task, const EvaluationOptions& opts) {
  Rng rng(derive_seed(opts.seed, 1000003 + i));
  return make_condition(task, l, rng, opts.completion_fraction);
}

struct RetrievalStats {
  std::vector<char> retrievable;      // per test condition: non-empty candidate set
  double retrievable_fraction = 0;
  double many_candidates_fraction = 0;  // at least 20 candidates
};

inline RetrievalStats retrieval_statistics(const LayoutIndex& index, const Dataset& db, const Dataset& test, Task task,
                                           const RetrievalPolicy& policy, const EvaluationOptions& opts) {
  if (test.empty()) throw DataError("empty test set");
  RetrievalStats st;
  std::size_t retrievable = 0, many = 0;
  for (std::size_t i = 0; i < test.size(); ++i) {
    RetrievalPolicy p = policy;
    if (opts.exclude_self) p.exclude_id = static_cast<LayoutId>(i);
    Rng rng(derive_seed(opts.seed, 2000003 + i));
    const Retrieval r = retrieve(index, db, task, evaluation_condition(test[i], i, task, opts), p, rng);
    st.retrievable.push_back(r.qualified > 0 ? 1 : 0);
    retrievable += r.qualified > 0 ? 1 : 0;
    many += r.qualified >= 20 ? 1 : 0;
  }
  const auto n = static_cast<double>(test.size());
  st.retrievable_fraction = static_cast<double>(retrievable) / n;
  st.many_candidates_fraction = static_cast<double>(many) / n;
  return st;
}

struct EvaluationReport {
  MetricsReport metrics;
  std::optional<MetricsReport> retrievable_metrics;  // over conditions with candidates
  std::size_t n_conditions = 0;
  double retrievable_fraction = 0;
  double many_candidates_fraction = 0;
  std::size_t reuse = 0, guide = 0, base = 0;
  std::vector<Layout> generated;
};

/// Derives one condition per test layout, generates one layout for it and
/// compares the collection with the test set.
inline EvaluationReport evaluate(const PipelineContext& ctx, const Dataset& test, Task task,
                                 const RetrievalPolicy& policy, const EvaluationOptions& opts) {
  if (!ctx.index || !ctx.db) throw UsageError("pipeline context has no index or database");
  const RetrievalStats st = retrieval_statistics(*ctx.index, *ctx.db, test, task, policy, opts);
  const std::size_t nc = ctx.index->num_categories();
  EvaluationReport rep;
  rep.n_conditions = test.size();
  rep.retrievable_fraction = st.retrievable_fraction;
  rep.many_candidates_fraction = st.many_candidates_fraction;
  std::vector<Layout> gen_retrievable, test_retrievable;
  for (std::size_t i = 0; i < test.size(); ++i) {
    const TaskSpec spec{task, evaluation_condition(test[i], i, task, opts), 1};
    RetrievalPolicy p = policy;
    if (opts.exclude_self) p.exclude_id = static_cast<LayoutId>(i);
    GenerationResult g = generate(ctx, spec, p, derive_seed(opts.seed, i), opts.base_only);
    switch (g.provenance.front().decision.kind) {
      case DecisionKind::Reuse: ++rep.reuse; break;
      case DecisionKind::Guide: ++rep.guide; break;
      case DecisionKind::Base: ++rep.base; break;
    }
    if (st.retrievable[i]) {
      gen_retrievable.push_back(g.layouts.front());
      test_retrievable.push_back(test[i]);
    }
    rep.generated.push_back(std::move(g.layouts.front()));
  }
  if (rep.generated.size() >= 2) rep.metrics = compute_metrics(rep.generated, test, nc);
  if (gen_retrievable.size() >= 2) rep.retrievable_metrics = compute_metrics(gen_retrievable, test_retrievable, nc);
  return rep;
}

}  // namespace layoutrag
