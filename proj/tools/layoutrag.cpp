// layoutrag: command-line front end (ingest, build-index, retrieve, train,
// generate, eval, serve).
//
// Exit status: 0 success, 1 usage error, 2 data error.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "layoutrag/checkpoint.hpp"
#include "layoutrag/dataset.hpp"
#include "layoutrag/flow.hpp"
#include "layoutrag/index.hpp"
#include "layoutrag/json_io.hpp"
#include "layoutrag/metrics.hpp"
#include "layoutrag/pipeline.hpp"
#include "layoutrag/service.hpp"
#include "layoutrag/synthetic.hpp"

namespace fs = std::filesystem;
using namespace layoutrag;
using nlohmann::json;

namespace {

struct AppConfig {
  std::string data_dir = "data";
  std::string data_path;        // default: <data_dir>/layouts.json
  std::string index_path;       // default: <data_dir>/index.lrix
  std::string checkpoint_path;  // default: <data_dir>/model.lrck
  std::uint64_t seed = 0;
  ModelConfig model;
  std::string fusion = "cma";
  RetrievalPolicy policy;
  std::optional<double> sim_cap;
  std::string host = "127.0.0.1";
  int port = 8080;

  fs::path data() const { return data_path.empty() ? fs::path(data_dir) / "layouts.json" : fs::path(data_path); }
  fs::path index() const { return index_path.empty() ? fs::path(data_dir) / "index.lrix" : fs::path(index_path); }
  fs::path checkpoint() const {
    return checkpoint_path.empty() ? fs::path(data_dir) / "model.lrck" : fs::path(checkpoint_path);
  }

  RetrievalPolicy resolved_policy() const {
    RetrievalPolicy p = policy;
    p.sim_cap = sim_cap;
    p.validate();
    return p;
  }

  ModelConfig resolved_model(std::size_t num_categories) const {
    ModelConfig m = model;
    m.num_categories = num_categories;
    m.seed = seed;
    const auto f = parse_fusion(fusion);
    if (!f) throw UsageError("--fusion must be one of cma, cross, concat");
    m.fusion = *f;
    m.validate();
    return m;
  }
};

// Config files mirror AppConfig: top-level paths and seed, plus [model], [policy]
// and [server] tables. CLI11 reads tables as subcommands, so flatten these onto
// the global options; keys may also be given at top level.
struct AppConfigFormat : CLI::ConfigTOML {
  std::vector<CLI::ConfigItem> from_config(std::istream& in) const override {
    std::vector<CLI::ConfigItem> out;
    for (auto& item : CLI::ConfigTOML::from_config(in)) {
      if (!item.parents.empty() &&
          (item.parents[0] == "model" || item.parents[0] == "policy" || item.parents[0] == "server")) {
        if (item.name == "++" || item.name == "--") continue;  // table open/close markers
        item.parents.erase(item.parents.begin());
      }
      out.push_back(std::move(item));
    }
    return out;
  }
};

void log(const std::string& msg) { std::cerr << msg << '\n'; }

void write_text(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-") {
    std::cout << text;
    return;
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write '" + path + "'");
  out << text;
}

std::string dump(const json& j) { return j.dump(1) + "\n"; }

/// Inline JSON (starting with '{' or '[') or a path to a JSON file.
json json_argument(const std::string& text) {
  const auto first = text.find_first_not_of(" \t\r\n");
  if (first != std::string::npos && (text[first] == '{' || text[first] == '[')) {
    try {
      return json::parse(text);
    } catch (const json::exception& e) {
      throw UsageError(std::string("argument is not valid JSON: ") + e.what());
    }
  }
  return detail::read_json_file(text);
}

LoadedDataset load_db(const AppConfig& cfg) {
  LoadedDataset d = load_dataset(cfg.data(), true);
  if (d.report.skipped > 0) log("skipped " + std::to_string(d.report.skipped) + " invalid records");
  return d;
}

std::optional<VectorFieldNet> load_model_if_present(const AppConfig& cfg) {
  if (!fs::exists(cfg.checkpoint())) return std::nullopt;
  return load_checkpoint(cfg.checkpoint());
}

std::unique_ptr<LayoutService> open_service(const AppConfig& cfg, bool need_model) {
  LoadedDataset d = load_db(cfg);
  LayoutIndex index = LayoutIndex::load(cfg.index());
  std::optional<VectorFieldNet> net = need_model ? load_model_if_present(cfg) : std::nullopt;
  return std::make_unique<LayoutService>(std::move(d.schema), std::move(d.layouts), std::move(index), std::move(net),
                                         cfg.resolved_policy());
}

/// Maps a handler response onto the process: body to `out`, status to exit code.
int finish(const ServiceResponse& r, const std::string& out) {
  if (r.status != 200) {
    std::cerr << "error: " << r.body.value("error", "request failed") << '\n';
    return r.status == 400 ? 1 : 2;
  }
  write_text(out, dump(r.body));
  return 0;
}

// Request body for /retrieve and /generate from CLI flags.
json request(const AppConfig& cfg, const json& condition, const std::string& task) {
  json req{{"condition", condition}, {"seed", cfg.seed}};
  if (!task.empty()) req["task"] = task;
  json overrides{{"k", cfg.policy.k}, {"tau_reuse", cfg.policy.tau_reuse}, {"tau_ref", cfg.policy.tau_ref}};
  overrides["sim_cap"] = cfg.sim_cap ? json(*cfg.sim_cap) : json(nullptr);
  req["policy_overrides"] = overrides;
  return req;
}

json condition_or_ucond(const std::string& condition_arg, std::size_t n_elements, const Dataset& db,
                        std::uint64_t seed) {
  if (!condition_arg.empty()) return json_argument(condition_arg);
  std::size_t n = n_elements;
  if (n == 0) {
    Rng rng(derive_seed(seed, 0x75636f6e64));
    n = draw_element_count(db, rng);
  }
  return json{{"slots", std::vector<json>(n, json::object())}};
}

json eval_report_json(const EvaluationReport& r) {
  json j{{"metrics", to_json(r.metrics)},
         {"n_conditions", r.n_conditions},
         {"retrievable_fraction", r.retrievable_fraction},
         {"many_candidates_fraction", r.many_candidates_fraction},
         {"decisions", {{"reuse", r.reuse}, {"guide", r.guide}, {"base", r.base}}}};
  j["retrievable_metrics"] = r.retrievable_metrics ? to_json(*r.retrievable_metrics) : json(nullptr);
  return j;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Retrieval-augmented layout generation: index, retrieve, train, generate, evaluate, serve."};
  app.config_formatter(std::make_shared<AppConfigFormat>());
  app.set_config("--config", "", "Key/value config file (TOML/INI); flags override it")->envname("LAYOUTRAG_CONFIG");
  app.allow_config_extras(false);
  app.fallthrough();
  app.require_subcommand(1);

  AppConfig cfg;
  app.add_option("--data-dir,--data_dir", cfg.data_dir, "Working directory for data, index and checkpoint");
  app.add_option("--data,--data_path", cfg.data_path, "Dataset file (default <data-dir>/layouts.json)");
  app.add_option("--index-path,--index_path", cfg.index_path, "Index file (default <data-dir>/index.lrix)");
  app.add_option("--checkpoint-path,--checkpoint_path", cfg.checkpoint_path,
                 "Checkpoint file (default <data-dir>/model.lrck)");
  app.add_option("--seed", cfg.seed, "Seed for every random choice of the invocation");
  app.add_option("--d-model,--d_model", cfg.model.d_model);
  app.add_option("--layers-base,--n_layers_base", cfg.model.n_layers_base);
  app.add_option("--layers-ref,--n_layers_ref", cfg.model.n_layers_ref);
  app.add_option("--heads,--n_heads", cfg.model.n_heads);
  app.add_option("--sample-steps,--sample_steps", cfg.model.sample_steps, "Euler steps T");
  app.add_option("--lambda-align,--lambda_align", cfg.model.lambda_align);
  app.add_option("--p-irrelevant,--p_irrelevant", cfg.model.p_irrelevant);
  app.add_option("--fusion", cfg.fusion, "Reference fusion: cma, cross or concat")
      ->check(CLI::IsMember({"cma", "cross", "concat"}));
  app.add_option("--k", cfg.policy.k, "Candidates scored per retrieval");
  app.add_option("--tau-reuse,--tau_reuse", cfg.policy.tau_reuse);
  app.add_option("--tau-ref,--tau_ref", cfg.policy.tau_ref);
  app.add_option("--sim-cap,--sim_cap", cfg.sim_cap, "Discard candidates scoring above this");
  app.add_option("--host", cfg.host);
  app.add_option("--port", cfg.port);

  // ingest
  auto* ingest = app.add_subcommand("ingest", "Convert a dataset into the working dataset file");
  std::string in_path, in_format = "dataset", ingest_out;
  std::size_t synthetic_count = 2000;
  double synthetic_sigma = 0.01;
  ingest->add_option("--input", in_path, "Input file (directory of screens for rico)");
  ingest->add_option("--format", in_format, "dataset, publaynet, rico or synthetic")
      ->check(CLI::IsMember({"dataset", "publaynet", "rico", "synthetic"}));
  ingest->add_option("--count", synthetic_count, "Layouts to generate (synthetic)");
  ingest->add_option("--sigma", synthetic_sigma, "Template jitter (synthetic)");
  ingest->add_option("--output", ingest_out, "Output dataset file (default: the working dataset)");

  auto* build_index = app.add_subcommand("build-index", "Build the category-count index");

  // retrieve / generate
  std::string condition_arg, task_arg, out_path, provenance_path;
  std::size_t n_elements = 0, n_samples = 1;
  auto* retrieve = app.add_subcommand("retrieve", "Rank database templates for a condition");
  retrieve->add_option("--condition", condition_arg, "Condition JSON (inline or file)");
  retrieve->add_option("--task", task_arg, "ucond, c, cs or completion (default: inferred)")
      ->check(CLI::IsMember({"ucond", "c", "cs", "completion"}));
  retrieve->add_option("--n-elements", n_elements, "Slots of a U-Cond condition (default: drawn from the database)");
  retrieve->add_option("--output", out_path);

  auto* generate = app.add_subcommand("generate", "Generate layouts for a condition");
  generate->add_option("--condition", condition_arg, "Condition JSON (inline or file)");
  generate->add_option("--task", task_arg, "ucond, c, cs or completion (default: inferred)")
      ->check(CLI::IsMember({"ucond", "c", "cs", "completion"}));
  generate->add_option("--n-elements", n_elements, "Slots of a U-Cond condition (default: drawn from the database)");
  generate->add_option("--n-samples", n_samples);
  generate->add_option("--output", out_path);
  generate->add_option("--provenance", provenance_path, "JSON-lines provenance log");

  // train
  TrainConfig tc;
  std::size_t log_every = 500;
  auto* train_cmd = app.add_subcommand("train", "Train the vector-field model");
  train_cmd->add_option("--train-steps,--steps", tc.steps);
  train_cmd->add_option("--batch-size", tc.batch_size);
  train_cmd->add_option("--lr", tc.adam.lr);
  train_cmd->add_option("--p-no-reference", tc.p_no_reference);
  train_cmd->add_option("--log-every", log_every);

  // eval
  std::string generated_path, reference_path, test_path;
  bool base_only = false, exclude_self = false;
  auto* eval = app.add_subcommand("eval", "Metrics for layout collections or a full pipeline run");
  eval->add_option("--generated", generated_path, "Generated dataset file");
  eval->add_option("--reference", reference_path, "Reference dataset file");
  eval->add_option("--test", test_path, "Test dataset file (pipeline mode)");
  eval->add_option("--task", task_arg)->check(CLI::IsMember({"ucond", "c", "cs", "completion"}));
  eval->add_flag("--base-only", base_only, "Skip retrieval (pipeline mode)");
  eval->add_flag("--exclude-self", exclude_self, "Test layouts are the database itself; never retrieve a layout for itself");
  eval->add_option("--output", out_path);

  auto* serve = app.add_subcommand("serve", "Run the HTTP service");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*ingest) {
      json doc;
      if (in_format == "synthetic") {
        Rng rng(cfg.seed);
        doc = dataset_to_json(synthetic::document_schema(), synthetic::template_dataset(rng, synthetic_count, synthetic_sigma));
      } else if (in_path.empty()) {
        throw UsageError("--input is required");
      } else if (in_format == "publaynet") {
        doc = convert_publaynet(detail::read_json_file(in_path));
      } else if (in_format == "rico") {
        std::vector<std::pair<std::string, json>> screens;
        std::vector<fs::path> files;
        for (const auto& e : fs::directory_iterator(in_path)) {
          if (e.path().extension() == ".json") files.push_back(e.path());
        }
        std::sort(files.begin(), files.end());
        for (const auto& f : files) screens.emplace_back(f.stem().string(), detail::read_json_file(f));
        doc = convert_rico(screens);
      } else {
        doc = detail::read_json_file(in_path);
      }
      const fs::path out = ingest_out.empty() ? cfg.data() : fs::path(ingest_out);
      if (out.has_parent_path()) fs::create_directories(out.parent_path());
      write_text(out.string(), doc.dump(1) + "\n");
      // Re-load through the validating reader so the report reflects what later commands see.
      const LoadedDataset d = load_dataset(out, true);
      if (d.report.skipped > 0) {
        save_dataset(out, d.schema, d.layouts);
      }
      log("wrote " + std::to_string(d.layouts.size()) + " layouts (" + std::to_string(d.report.skipped) +
          " skipped) to " + out.string());
      return 0;
    }

    if (*build_index) {
      const LoadedDataset d = load_db(cfg);
      const LayoutIndex index = LayoutIndex::build(d.layouts, d.schema.size());
      if (cfg.index().has_parent_path()) fs::create_directories(cfg.index().parent_path());
      index.save(cfg.index());
      log("indexed " + std::to_string(index.num_layouts()) + " layouts (" + std::to_string(index.exact().size()) +
          " distinct count keys) into " + cfg.index().string());
      return 0;
    }

    if (*retrieve) {
      const auto svc = open_service(cfg, false);
      const json cond = condition_or_ucond(condition_arg, n_elements, svc->database(), cfg.seed);
      return finish(svc->retrieve(request(cfg, cond, task_arg).dump()), out_path);
    }

    if (*generate) {
      const auto svc = open_service(cfg, true);
      const json cond = condition_or_ucond(condition_arg, n_elements, svc->database(), cfg.seed);
      json req = request(cfg, cond, task_arg);
      req["n_samples"] = n_samples;
      const ServiceResponse r = svc->generate(req.dump());
      if (r.status == 200 && !provenance_path.empty()) {
        std::string lines;
        for (const auto& p : r.body.at("provenance")) lines += p.dump() + "\n";
        write_text(provenance_path, lines);
      }
      return finish(r, out_path);
    }

    if (*train_cmd) {
      const LoadedDataset d = load_db(cfg);
      const LayoutIndex index = fs::exists(cfg.index()) ? LayoutIndex::load(cfg.index())
                                                        : LayoutIndex::build(d.layouts, d.schema.size());
      if (index.num_layouts() != d.layouts.size()) throw DataError("index does not match the dataset; rebuild it");
      VectorFieldNet net(cfg.resolved_model(d.schema.size()));
      tc.seed = derive_seed(cfg.seed, 1);
      log("training " + std::to_string(net.parameter_count()) + " parameters for " + std::to_string(tc.steps) +
          " steps");
      double running = 0;
      train(net, d.layouts, make_reference_provider(index, d.layouts, cfg.resolved_policy()), tc,
            [&](std::size_t step, double loss) {
              running += loss;
              if (log_every > 0 && (step + 1) % log_every == 0) {
                log("step " + std::to_string(step + 1) + " mean loss " + std::to_string(running / log_every));
                running = 0;
              }
            });
      if (cfg.checkpoint().has_parent_path()) fs::create_directories(cfg.checkpoint().parent_path());
      save_checkpoint(net, cfg.checkpoint());
      log("saved checkpoint to " + cfg.checkpoint().string());
      return 0;
    }

    if (*eval) {
      if (!generated_path.empty() || !reference_path.empty()) {
        if (generated_path.empty() || reference_path.empty()) throw UsageError("--generated and --reference go together");
        const LoadedDataset g = load_dataset(generated_path, true);
        const LoadedDataset r = load_dataset(reference_path, true);
        if (!(g.schema == r.schema)) throw DataError("generated and reference schemas differ");
        write_text(out_path, dump(to_json(compute_metrics(g.layouts, r.layouts, g.schema.size()))));
        return 0;
      }
      if (task_arg.empty()) throw UsageError("pipeline evaluation needs --task");
      const auto svc = open_service(cfg, true);
      const LoadedDataset test = test_path.empty() ? load_db(cfg) : load_dataset(test_path, true);
      if (!(test.schema == svc->category_schema())) throw DataError("test and database schemas differ");
      EvaluationOptions opts;
      opts.seed = cfg.seed;
      opts.base_only = base_only;
      opts.exclude_self = exclude_self;
      const EvaluationReport rep = evaluate(svc->context(), test.layouts, *parse_task(task_arg), cfg.resolved_policy(), opts);
      write_text(out_path, dump(eval_report_json(rep)));
      return 0;
    }

    if (*serve) {
      const auto svc = open_service(cfg, true);
      httplib::Server server;
      svc->mount(server);
      log("serving on http://" + cfg.host + ":" + std::to_string(cfg.port) +
          (svc->context().net ? "" : " (no checkpoint: generation limited to reuse)"));
      if (!server.listen(cfg.host, cfg.port)) throw DataError("cannot listen on " + cfg.host + ":" + std::to_string(cfg.port));
      return 0;
    }
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
