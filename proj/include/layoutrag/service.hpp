#pragma once

#include <optional>
#include <string>
#include <utility>

#include "json.hpp"
#include "layoutrag/dataset.hpp"
#include "layoutrag/error.hpp"
#include "layoutrag/index.hpp"
#include "layoutrag/json_io.hpp"
#include "layoutrag/pipeline.hpp"
#include "layoutrag/similarity.hpp"

// After Eigen: <resolv.h> defines a `_res` macro that Eigen uses as a name.
#include "httplib.h"

// HTTP/JSON front end over an immutable database, index and (optional) model.
namespace layoutrag {

struct ServiceResponse {
  int status = 200;
  nlohmann::json body;
};

// Request body that cannot be read at all (400); condition problems are DataError (422).
class BadRequest : public Error {
 public:
  using Error::Error;
};

class LayoutService {
 public:
  LayoutService(CategorySchema schema, Dataset db, LayoutIndex index, std::optional<VectorFieldNet> net,
                RetrievalPolicy policy = {})
      : schema_(std::move(schema)),
        db_(std::move(db)),
        index_(std::move(index)),
        net_(std::move(net)),
        policy_(policy) {
    if (index_.num_layouts() != db_.size() || index_.num_categories() != schema_.size()) {
      throw DataError("index does not match the database");
    }
    if (net_ && net_->config().num_categories != schema_.size()) {
      throw DataError("checkpoint was trained for a different number of categories");
    }
    policy_.validate();
    ctx_ = make_context(index_, db_, net_ ? &*net_ : nullptr);
  }

  LayoutService(const LayoutService&) = delete;
  LayoutService& operator=(const LayoutService&) = delete;

  ServiceResponse health() const { return {200, {{"status", "ok"}}}; }

  ServiceResponse schema() const { return {200, {{"categories", schema_.names()}}}; }

  ServiceResponse layout(const std::string& id_text) const {
    return guarded([&] {
      std::size_t pos = 0;
      unsigned long long id = 0;
      try {
        id = std::stoull(id_text, &pos);
      } catch (const std::exception&) {
        pos = 0;
      }
      if (pos == 0 || pos != id_text.size() || id >= db_.size()) {
        return ServiceResponse{404, {{"error", "unknown layout id '" + id_text + "'"}}};
      }
      nlohmann::json j = layout_to_json(db_[id], schema_);
      j["index"] = id;
      return ServiceResponse{200, std::move(j)};
    });
  }

  /// {condition, task?, k?, seed?, policy_overrides?} -> [{id, score, layout}]
  ServiceResponse retrieve(const std::string& body) const {
    return guarded([&] {
      const nlohmann::json req = parse_body(body);
      const Condition cond = condition_from_json(field(req, "condition"), schema_);
      const Task task = task_of(req, cond);
      RetrievalPolicy p = apply_policy_overrides(policy_, req.value("policy_overrides", nlohmann::json()));
      if (req.contains("k")) p.k = get<std::size_t>(req, "k");
      if (p.k == 0) throw DataError("k must be at least 1");
      Rng rng(seed_of(req));
      const Retrieval r = layoutrag::retrieve(index_, db_, task, cond, p, rng);
      nlohmann::json out = nlohmann::json::array();
      for (std::size_t i = 0; i < r.ranked.size() && i < p.k; ++i) {
        out.push_back({{"id", r.ranked[i].id},
                       {"score", r.ranked[i].score},
                       {"layout", layout_to_json(db_[r.ranked[i].id], schema_)}});
      }
      return ServiceResponse{200, std::move(out)};
    });
  }

  /// {a, b, mode?} -> {score}
  ServiceResponse similarity(const std::string& body) const {
    return guarded([&] {
      const nlohmann::json req = parse_body(body);
      const Layout a = layout_from_json(field(req, "a"), schema_);
      const Layout b = layout_from_json(field(req, "b"), schema_);
      GeometryMode mode = GeometryMode::Full;
      if (req.contains("mode")) {
        const auto m = parse_mode(get<std::string>(req, "mode"));
        if (!m) throw BadRequest("mode must be one of full, size, type");
        mode = *m;
      }
      return ServiceResponse{200, {{"score", layout_similarity(a, b, mode)}}};
    });
  }

  /// {condition, task?, policy_overrides?, n_samples?, seed?} -> {layouts, provenance}
  ServiceResponse generate(const std::string& body) const {
    return guarded([&] {
      const nlohmann::json req = parse_body(body);
      TaskSpec spec;
      spec.condition = condition_from_json(field(req, "condition"), schema_);
      spec.task = task_of(req, spec.condition);
      spec.n_samples = req.contains("n_samples") ? get<std::size_t>(req, "n_samples") : 1;
      if (spec.n_samples == 0 || spec.n_samples > 256) throw DataError("n_samples must lie in [1, 256]");
      const RetrievalPolicy p = apply_policy_overrides(policy_, req.value("policy_overrides", nlohmann::json()));
      const GenerationResult g = layoutrag::generate(ctx_, spec, p, seed_of(req));
      return ServiceResponse{200, generation_to_json(g)};
    });
  }

  nlohmann::json generation_to_json(const GenerationResult& g) const {
    nlohmann::json layouts = nlohmann::json::array(), prov = nlohmann::json::array();
    for (const auto& l : g.layouts) layouts.push_back(layout_to_json(l, schema_));
    for (const auto& p : g.provenance) prov.push_back(provenance_to_json(p));
    return {{"layouts", std::move(layouts)}, {"provenance", std::move(prov)}};
  }

  /// Registers every endpoint on `server`.
  void mount(httplib::Server& server) const {
    const auto reply = [](httplib::Response& res, const ServiceResponse& r) {
      res.status = r.status;
      res.set_content(r.body.dump(-1, ' ', false, nlohmann::json::error_handler_t::replace), "application/json");
    };
    server.Get("/health", [this, reply](const httplib::Request&, httplib::Response& res) { reply(res, health()); });
    server.Get("/schema", [this, reply](const httplib::Request&, httplib::Response& res) { reply(res, schema()); });
    server.Get(R"(/layouts/([^/]+))", [this, reply](const httplib::Request& req, httplib::Response& res) {
      reply(res, layout(req.matches[1]));
    });
    server.Post("/retrieve", [this, reply](const httplib::Request& req, httplib::Response& res) {
      reply(res, retrieve(req.body));
    });
    server.Post("/similarity", [this, reply](const httplib::Request& req, httplib::Response& res) {
      reply(res, similarity(req.body));
    });
    server.Post("/generate", [this, reply](const httplib::Request& req, httplib::Response& res) {
      reply(res, generate(req.body));
    });
  }

  const CategorySchema& category_schema() const { return schema_; }
  const Dataset& database() const { return db_; }
  const PipelineContext& context() const { return ctx_; }

 private:
  template <typename Fn>
  static ServiceResponse guarded(Fn&& fn) {
    const auto error = [](int status, const std::string& msg) {
      return ServiceResponse{status, {{"error", msg}}};
    };
    try {
      return fn();
    } catch (const BadRequest& e) {
      return error(400, e.what());
    } catch (const NoModelError& e) {
      return error(409, e.what());
    } catch (const DataError& e) {
      return error(422, e.what());
    } catch (const UsageError& e) {
      return error(422, e.what());
    } catch (const std::exception& e) {
      return error(500, e.what());
    }
  }

  static nlohmann::json parse_body(const std::string& body) {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(body);
    } catch (const nlohmann::json::exception& e) {
      throw BadRequest(std::string("body is not valid JSON: ") + e.what());
    }
    if (!j.is_object()) throw BadRequest("body must be a JSON object");
    return j;
  }

  static const nlohmann::json& field(const nlohmann::json& j, const char* key) {
    auto it = j.find(key);
    if (it == j.end()) throw BadRequest(std::string("missing field '") + key + "'");
    return *it;
  }

  template <typename T>
  static T get(const nlohmann::json& j, const char* key) {
    try {
      return field(j, key).get<T>();
    } catch (const nlohmann::json::exception&) {
      throw BadRequest(std::string("field '") + key + "' has the wrong type");
    }
  }

  static std::uint64_t seed_of(const nlohmann::json& req) {
    return req.contains("seed") ? get<std::uint64_t>(req, "seed") : 0;
  }

  static Task task_of(const nlohmann::json& req, const Condition& cond) {
    if (!req.contains("task")) return infer_task(cond);
    const auto t = parse_task(get<std::string>(req, "task"));
    if (!t) throw BadRequest("task must be one of ucond, c, cs, completion");
    return *t;
  }

  CategorySchema schema_;
  Dataset db_;
  LayoutIndex index_;
  std::optional<VectorFieldNet> net_;
  RetrievalPolicy policy_;
  PipelineContext ctx_;
};

}  // namespace layoutrag
