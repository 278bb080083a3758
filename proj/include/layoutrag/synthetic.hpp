#pragma once

#include <array>
#include <random>
#include <string>
#include <vector>

#include "layoutrag/layout.hpp"

// Synthetic layout generators used by tests, benchmarks and the CLI demo data.
namespace layoutrag::synthetic {

struct RandomLayoutSpec {
  std::size_t num_categories = 5;
  std::size_t min_elements = 1;
  std::size_t max_elements = 10;
  double min_size = 0.02;
  double max_size = 0.5;
};

inline Layout random_layout(Rng& rng, const RandomLayoutSpec& spec = {}) {
  std::uniform_int_distribution<std::size_t> count(spec.min_elements, spec.max_elements);
  std::uniform_int_distribution<CategoryId> cat(0, static_cast<CategoryId>(spec.num_categories - 1));
  std::uniform_real_distribution<double> pos(0.05, 0.95);
  std::uniform_real_distribution<double> size(spec.min_size, spec.max_size);
  Layout l;
  const std::size_t n = count(rng);
  for (std::size_t i = 0; i < n; ++i) {
    // evaluation order of braced initializers is left to right
    Element e{cat(rng), BBox{pos(rng), pos(rng), size(rng), size(rng)}};
    e.bbox = clamp_bbox(e.bbox);
    l.elements.push_back(e);
  }
  return l;
}

inline Dataset random_dataset(Rng& rng, std::size_t count, const RandomLayoutSpec& spec = {}) {
  Dataset db;
  db.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    db.push_back(random_layout(rng, spec));
    db.back().name = "r" + std::to_string(i);
  }
  return db;
}

inline CategorySchema document_schema() {
  return CategorySchema({"text", "title", "image", "list", "table"});
}

/// Eight structural document templates over the five document categories.
/// Each template has a distinct count key.
inline const std::vector<Layout>& grid_templates() {
  static const std::vector<Layout> templates = [] {
    const auto L = [](std::initializer_list<Element> els) { return Layout{std::vector<Element>(els), {}}; };
    constexpr CategoryId text = 0, title = 1, image = 2, list = 3, table = 4;
    return std::vector<Layout>{
        L({{title, {0.50, 0.08, 0.80, 0.06}}, {text, {0.50, 0.30, 0.80, 0.30}}, {image, {0.50, 0.70, 0.80, 0.35}}}),
        L({{title, {0.50, 0.06, 0.90, 0.05}},
           {text, {0.27, 0.35, 0.42, 0.50}},
           {text, {0.73, 0.35, 0.42, 0.50}},
           {image, {0.50, 0.80, 0.90, 0.25}}}),
        L({{image, {0.50, 0.20, 0.90, 0.30}}, {text, {0.50, 0.50, 0.90, 0.20}}, {list, {0.50, 0.80, 0.90, 0.30}}}),
        L({{table, {0.50, 0.30, 0.90, 0.40}}, {text, {0.50, 0.65, 0.90, 0.15}}, {text, {0.50, 0.85, 0.90, 0.15}}}),
        L({{title, {0.50, 0.07, 0.80, 0.06}},
           {image, {0.27, 0.35, 0.40, 0.35}},
           {image, {0.73, 0.35, 0.40, 0.35}},
           {image, {0.27, 0.75, 0.40, 0.35}},
           {image, {0.73, 0.75, 0.40, 0.35}}}),
        L({{title, {0.50, 0.08, 0.60, 0.08}},
           {text, {0.50, 0.30, 0.90, 0.15}},
           {text, {0.50, 0.52, 0.90, 0.15}},
           {text, {0.50, 0.74, 0.90, 0.15}}}),
        L({{list, {0.15, 0.50, 0.25, 0.90}},
           {title, {0.62, 0.10, 0.70, 0.08}},
           {text, {0.62, 0.45, 0.70, 0.50}},
           {image, {0.62, 0.85, 0.70, 0.20}}}),
        L({{title, {0.50, 0.06, 0.90, 0.06}},
           {table, {0.50, 0.35, 0.90, 0.45}},
           {list, {0.27, 0.80, 0.42, 0.30}},
           {list, {0.73, 0.80, 0.42, 0.30}}}),
    };
  }();
  return templates;
}

struct TemplateSample {
  Layout layout;
  std::size_t template_id = 0;
};

/// One jittered copy of a random template; every geometry field gets
/// independent N(0, sigma) noise before clamping.
inline TemplateSample jittered_template(Rng& rng, double sigma = 0.01) {
  const auto& templates = grid_templates();
  std::uniform_int_distribution<std::size_t> pick(0, templates.size() - 1);
  std::normal_distribution<double> noise(0.0, sigma);
  TemplateSample s;
  s.template_id = pick(rng);
  s.layout = templates[s.template_id];
  for (auto& e : s.layout.elements) {
    e.bbox.cx += noise(rng);
    e.bbox.cy += noise(rng);
    e.bbox.w += noise(rng);
    e.bbox.h += noise(rng);
    e.bbox = clamp_bbox(e.bbox);
  }
  return s;
}

inline Dataset template_dataset(Rng& rng, std::size_t count, double sigma = 0.01,
                                std::vector<std::size_t>* template_ids = nullptr) {
  Dataset db;
  db.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    auto s = jittered_template(rng, sigma);
    s.layout.name = "t" + std::to_string(s.template_id) + "-" + std::to_string(i);
    if (template_ids) template_ids->push_back(s.template_id);
    db.push_back(std::move(s.layout));
  }
  return db;
}

}  // namespace layoutrag::synthetic
