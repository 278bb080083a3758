#pragma once

#include <string>

#include "json.hpp"
#include "layoutrag/dataset.hpp"
#include "layoutrag/error.hpp"
#include "layoutrag/layout.hpp"
#include "layoutrag/pipeline.hpp"

// JSON forms shared by the CLI and the HTTP service.
//   slot:      {"category": "text", "size": [w, h], "position": [cx, cy]}  (any key may be absent)
//   condition: {"slots": [slot, ...]}  or a bare array of slots
namespace layoutrag {

namespace detail {

inline std::pair<double, double> number_pair(const nlohmann::json& v, const char* what) {
  if (!v.is_array() || v.size() != 2 || !v[0].is_number() || !v[1].is_number()) {
    throw DataError(std::string(what) + " must be an array of two numbers");
  }
  const double a = v[0].get<double>(), b = v[1].get<double>();
  if (!std::isfinite(a) || !std::isfinite(b)) throw DataError(std::string(what) + " is not finite");
  return {a, b};
}

}  // namespace detail

inline Slot slot_from_json(const nlohmann::json& j, const CategorySchema& schema) {
  if (!j.is_object()) throw DataError("slot must be an object");
  Slot s;
  if (auto it = j.find("category"); it != j.end() && !it->is_null()) s.category = detail::parse_category(*it, schema);
  if (auto it = j.find("size"); it != j.end() && !it->is_null()) {
    const auto [w, h] = detail::number_pair(*it, "size");
    s.size = Size2{w, h};
  }
  if (auto it = j.find("position"); it != j.end() && !it->is_null()) {
    const auto [cx, cy] = detail::number_pair(*it, "position");
    s.position = Point2{cx, cy};
  }
  return s;
}

inline nlohmann::json slot_to_json(const Slot& s, const CategorySchema& schema) {
  nlohmann::json j = nlohmann::json::object();
  if (s.category) j["category"] = schema.name(*s.category);
  if (s.size) j["size"] = {s.size->w, s.size->h};
  if (s.position) j["position"] = {s.position->cx, s.position->cy};
  return j;
}

inline Condition condition_from_json(const nlohmann::json& j, const CategorySchema& schema) {
  const nlohmann::json* slots = &j;
  if (j.is_object()) {
    auto it = j.find("slots");
    if (it == j.end()) throw DataError("condition object needs a 'slots' array");
    slots = &*it;
  }
  if (!slots->is_array()) throw DataError("condition slots must be an array");
  Condition c;
  for (const auto& s : *slots) c.slots.push_back(slot_from_json(s, schema));
  return c;
}

inline nlohmann::json condition_to_json(const Condition& c, const CategorySchema& schema) {
  nlohmann::json slots = nlohmann::json::array();
  for (const auto& s : c.slots) slots.push_back(slot_to_json(s, schema));
  return {{"slots", std::move(slots)}};
}

inline Layout layout_from_json(const nlohmann::json& j, const CategorySchema& schema) {
  try {
    return parse_layout_record(j, schema);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed layout: ") + e.what());
  }
}

inline nlohmann::json provenance_to_json(const Provenance& p) {
  nlohmann::json j{{"task", task_name(p.task)},
                   {"decision", decision_name(p.decision.kind)},
                   {"template_id", nullptr},
                   {"similarity", p.decision.score},
                   {"seed", p.seed}};
  if (p.decision.template_id) j["template_id"] = *p.decision.template_id;
  return j;
}

/// Applies the keys present in `j` (k, tau_reuse, tau_ref, sim_cap) to `p`.
inline RetrievalPolicy apply_policy_overrides(RetrievalPolicy p, const nlohmann::json& j) {
  if (j.is_null()) return p;
  if (!j.is_object()) throw DataError("policy overrides must be an object");
  try {
    if (j.contains("k")) p.k = j.at("k").get<std::size_t>();
    if (j.contains("tau_reuse")) p.tau_reuse = j.at("tau_reuse").get<double>();
    if (j.contains("tau_ref")) p.tau_ref = j.at("tau_ref").get<double>();
    if (j.contains("sim_cap")) {
      p.sim_cap = j.at("sim_cap").is_null() ? std::nullopt : std::optional<double>(j.at("sim_cap").get<double>());
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("bad policy override: ") + e.what());
  }
  try {
    p.validate();
  } catch (const UsageError& e) {
    throw DataError(e.what());
  }
  return p;
}

}  // namespace layoutrag
