#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "layoutrag/error.hpp"
#include "layoutrag/layout.hpp"

namespace layoutrag {

struct LoadReport {
  std::size_t accepted = 0;
  std::size_t skipped = 0;
  std::vector<std::string> warnings;  // one per skipped record
};

struct LoadedDataset {
  CategorySchema schema;
  Dataset layouts;
  LoadReport report;
};

namespace detail {

inline nlohmann::json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open '" + path.string() + "'");
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw DataError("'" + path.string() + "' is not valid JSON: " + e.what());
  }
}

inline CategoryId parse_category(const nlohmann::json& v, const CategorySchema& schema) {
  if (v.is_string()) {
    auto id = schema.find(v.get<std::string>());
    if (!id) throw DataError("unknown category '" + v.get<std::string>() + "'");
    return *id;
  }
  if (v.is_number_integer()) {
    const auto id = v.get<long long>();
    if (id < 0 || static_cast<std::size_t>(id) >= schema.size()) {
      throw DataError("category id " + std::to_string(id) + " out of range");
    }
    return static_cast<CategoryId>(id);
  }
  throw DataError("category must be a name or an integer id");
}

inline double number_field(const nlohmann::json& obj, const char* key) {
  auto it = obj.find(key);
  if (it == obj.end() || !it->is_number()) throw DataError(std::string("missing numeric field '") + key + "'");
  const double v = it->get<double>();
  if (!std::isfinite(v)) throw DataError(std::string("non-finite value in '") + key + "'");
  return v;
}

}  // namespace detail

/// Parses one layout record; throws DataError describing why a record is unusable.
inline Layout parse_layout_record(const nlohmann::json& rec, const CategorySchema& schema) {
  if (!rec.is_object()) throw DataError("layout record is not an object");
  Layout l;
  if (auto it = rec.find("id"); it != rec.end()) {
    l.name = it->is_string() ? it->get<std::string>() : it->dump();
  }
  double canvas_w = 1.0;
  double canvas_h = 1.0;
  const bool has_canvas = rec.contains("canvas");
  if (has_canvas) {
    canvas_w = detail::number_field(rec["canvas"], "w");
    canvas_h = detail::number_field(rec["canvas"], "h");
    if (canvas_w <= 0 || canvas_h <= 0) throw DataError("canvas dimensions must be positive");
  }
  auto els = rec.find("elements");
  if (els == rec.end() || !els->is_array()) throw DataError("missing 'elements' array");
  if (els->empty()) throw DataError("layout has no elements");
  if (els->size() > kMaxElements) {
    throw DataError("layout has " + std::to_string(els->size()) + " elements (limit 20)");
  }
  for (const auto& e : *els) {
    if (!e.is_object() || !e.contains("category")) throw DataError("element without category");
    Element el;
    el.category = detail::parse_category(e["category"], schema);
    el.bbox = {detail::number_field(e, "cx") / canvas_w, detail::number_field(e, "cy") / canvas_h,
               detail::number_field(e, "w") / canvas_w, detail::number_field(e, "h") / canvas_h};
    const BBox& b = el.bbox;
    if (b.cx < 0 || b.cx > 1 || b.cy < 0 || b.cy > 1 || b.w <= 0 || b.w > 1 || b.h <= 0 || b.h > 1) {
      throw DataError("element geometry outside the unit canvas");
    }
    el.bbox = clamp_bbox(el.bbox);
    l.elements.push_back(el);
  }
  return l;
}

/// Loads a dataset file. Bad records are skipped and reported; the call
/// fails only when the file is unusable or no layout survives.
inline LoadedDataset load_dataset(const std::filesystem::path& path, bool warn = false) {
  const nlohmann::json doc = detail::read_json_file(path);
  if (!doc.is_object() || !doc.contains("schema") || !doc["schema"].is_array()) {
    throw DataError("'" + path.string() + "' lacks a 'schema' array");
  }
  if (!doc.contains("layouts") || !doc["layouts"].is_array()) {
    throw DataError("'" + path.string() + "' lacks a 'layouts' array");
  }
  LoadedDataset out;
  try {
    out.schema = CategorySchema(doc["schema"].get<std::vector<std::string>>());
  } catch (const nlohmann::json::exception&) {
    throw DataError("schema entries must be strings");
  }
  std::size_t index = 0;
  for (const auto& rec : doc["layouts"]) {
    try {
      out.layouts.push_back(parse_layout_record(rec, out.schema));
      ++out.report.accepted;
    } catch (const DataError& e) {
      ++out.report.skipped;
      out.report.warnings.push_back("record " + std::to_string(index) + ": " + e.what());
      if (warn) std::cerr << "warning: " << out.report.warnings.back() << '\n';
    }
    ++index;
  }
  if (out.layouts.empty()) throw DataError("'" + path.string() + "' contains no valid layouts");
  return out;
}

inline nlohmann::json layout_to_json(const Layout& l, const CategorySchema& schema) {
  nlohmann::json els = nlohmann::json::array();
  for (const auto& e : l.elements) {
    els.push_back({{"category", schema.name(e.category)},
                   {"cx", e.bbox.cx},
                   {"cy", e.bbox.cy},
                   {"w", e.bbox.w},
                   {"h", e.bbox.h}});
  }
  nlohmann::json j{{"elements", std::move(els)}};
  if (!l.name.empty()) j["id"] = l.name;
  return j;
}

inline nlohmann::json dataset_to_json(const CategorySchema& schema, const Dataset& layouts) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& l : layouts) arr.push_back(layout_to_json(l, schema));
  return {{"schema", schema.names()}, {"layouts", std::move(arr)}};
}

inline void save_dataset(const std::filesystem::path& path, const CategorySchema& schema,
                         const Dataset& layouts) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write '" + path.string() + "'");
  // nlohmann emits shortest round-trip decimals, so coordinates survive exactly
  out << dataset_to_json(schema, layouts).dump(1) << '\n';
}

// ---------------------------------------------------------------------------
// Native-format adapters. Both emit records in the dataset schema above.

/// PubLayNet (COCO-style) annotations: `images`, `annotations` with pixel
/// `bbox` = [x, y, w, h], and `categories`.
inline nlohmann::json convert_publaynet(const nlohmann::json& coco) {
  std::map<long long, std::string> cat_names;
  std::vector<std::string> schema;
  for (const auto& c : coco.at("categories")) {
    cat_names[c.at("id").get<long long>()] = c.at("name").get<std::string>();
  }
  for (const auto& [id, name] : cat_names) schema.push_back(name);

  std::map<long long, nlohmann::json> layouts;
  for (const auto& img : coco.at("images")) {
    const long long id = img.at("id").get<long long>();
    layouts[id] = {{"id", img.value("file_name", std::to_string(id))},
                   {"canvas", {{"w", img.at("width")}, {"h", img.at("height")}}},
                   {"elements", nlohmann::json::array()}};
  }
  for (const auto& ann : coco.at("annotations")) {
    auto it = layouts.find(ann.at("image_id").get<long long>());
    if (it == layouts.end()) continue;
    const auto& bb = ann.at("bbox");
    const double x = bb.at(0), y = bb.at(1), w = bb.at(2), h = bb.at(3);
    it->second["elements"].push_back({{"category", cat_names.at(ann.at("category_id").get<long long>())},
                                      {"cx", x + w / 2},
                                      {"cy", y + h / 2},
                                      {"w", w},
                                      {"h", h}});
  }
  nlohmann::json out{{"schema", schema}, {"layouts", nlohmann::json::array()}};
  for (auto& [id, l] : layouts) out["layouts"].push_back(std::move(l));
  return out;
}

inline const std::vector<std::string>& rico_categories() {
  static const std::vector<std::string> names{
      "Text",          "Image",        "Icon",       "Text Button",  "List Item",
      "Input",         "Background Image", "Card",   "Web View",     "Radio Button",
      "Drawer",        "Checkbox",     "Advertisement", "Modal",     "Pager Indicator",
      "Slider",        "On/Off Switch", "Button Bar", "Toolbar",     "Number Stepper",
      "Multi-Tab",     "Date Picker",  "Map View",   "Video",        "Bottom Navigation"};
  return names;
}

namespace detail {
inline void collect_rico(const nlohmann::json& node, nlohmann::json& elements) {
  if (node.contains("componentLabel") && node.contains("bounds")) {
    const auto& b = node["bounds"];
    const double x1 = b.at(0), y1 = b.at(1), x2 = b.at(2), y2 = b.at(3);
    if (x2 > x1 && y2 > y1) {
      elements.push_back({{"category", node["componentLabel"]},
                          {"cx", (x1 + x2) / 2},
                          {"cy", (y1 + y2) / 2},
                          {"w", x2 - x1},
                          {"h", y2 - y1}});
    }
  }
  if (auto it = node.find("children"); it != node.end() && it->is_array()) {
    for (const auto& child : *it) collect_rico(child, elements);
  }
}
}  // namespace detail

/// RICO semantic annotation hierarchies (one JSON object per screen, pixel
/// `bounds` = [x1, y1, x2, y2] on a 1440x2560 canvas).
inline nlohmann::json convert_rico(const std::vector<std::pair<std::string, nlohmann::json>>& screens) {
  nlohmann::json out{{"schema", rico_categories()}, {"layouts", nlohmann::json::array()}};
  for (const auto& [name, screen] : screens) {
    nlohmann::json elements = nlohmann::json::array();
    detail::collect_rico(screen, elements);
    out["layouts"].push_back(
        {{"id", name}, {"canvas", {{"w", 1440}, {"h", 2560}}}, {"elements", std::move(elements)}});
  }
  return out;
}

}  // namespace layoutrag
