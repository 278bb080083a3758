#include <gtest/gtest.h>

#include <sys/wait.h>
#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "layoutrag/checkpoint.hpp"
#include "layoutrag/service.hpp"

namespace layoutrag {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// One working directory with a small dataset, index and model, built through the CLI.
class Cli : public ::testing::Test {
 protected:
  static fs::path dir() {
    return fs::path(::testing::TempDir()) / ("layoutrag_cli_test_" + std::to_string(::getpid()));
  }

  static int run(const std::string& args, const std::string& env = "") {
    const std::string cmd =
        "cd '" + dir().string() + "' && " + env + " '" + LAYOUTRAG_CLI + "' " + args + " 2>>stderr.log";
    const int rc = std::system(cmd.c_str());
    return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
  }

  static void SetUpTestSuite() {
    fs::remove_all(dir());
    fs::create_directories(dir());
    ASSERT_EQ(run("--data-dir d --seed 5 ingest --format synthetic --count 150"), 0);
    ASSERT_EQ(run("--data-dir d build-index"), 0);
    ASSERT_EQ(run("--data-dir d --d-model 8 --layers-base 1 --layers-ref 1 --heads 2 --sample-steps 5 "
                  "train --train-steps 20 --log-every 0"),
              0);
  }
  static void TearDownTestSuite() { fs::remove_all(dir()); }
};

TEST_F(Cli, GenerateIsByteIdenticalForSameSeed) {
  ASSERT_EQ(run("--data-dir d --seed 7 generate --n-samples 3 --output g1.json --provenance p1.jsonl"), 0);
  ASSERT_EQ(run("--data-dir d --seed 7 generate --n-samples 3 --output g2.json --provenance p2.jsonl"), 0);
  ASSERT_EQ(run("--data-dir d --seed 8 generate --n-samples 3 --output g3.json"), 0);
  EXPECT_EQ(slurp(dir() / "g1.json"), slurp(dir() / "g2.json"));
  EXPECT_EQ(slurp(dir() / "p1.jsonl"), slurp(dir() / "p2.jsonl"));
  EXPECT_NE(slurp(dir() / "g1.json"), slurp(dir() / "g3.json"));

  std::ifstream prov(dir() / "p1.jsonl");
  std::string line;
  std::size_t lines = 0;
  while (std::getline(prov, line)) {
    const json p = json::parse(line);
    for (const char* k : {"task", "decision", "template_id", "similarity", "seed"}) EXPECT_TRUE(p.contains(k)) << k;
    ++lines;
  }
  EXPECT_EQ(lines, 3u);
}

TEST_F(Cli, MatchesServiceForSameRequest) {
  const json cond{{"slots", json::array({{{"category", "title"}}, {{"category", "text"}}, {{"category", "text"}}})}};
  {
    std::ofstream(dir() / "cond.json") << cond.dump();
  }
  ASSERT_EQ(run("--data-dir d --seed 3 --k 16 generate --condition cond.json --n-samples 2 --output cli.json"), 0);

  LoadedDataset d = load_dataset(dir() / "d" / "layouts.json");
  RetrievalPolicy policy;
  policy.k = 16;
  const LayoutService svc(d.schema, d.layouts, LayoutIndex::load(dir() / "d" / "index.lrix"),
                          load_checkpoint(dir() / "d" / "model.lrck"), policy);
  const auto r = svc.generate(json{{"condition", cond}, {"n_samples", 2}, {"seed", 3}}.dump());
  ASSERT_EQ(r.status, 200);
  EXPECT_EQ(json::parse(slurp(dir() / "cli.json")), r.body);
}

TEST_F(Cli, EvalOfIdenticalSetsIsPerfect) {
  ASSERT_EQ(run("eval --generated d/layouts.json --reference d/layouts.json --output m.json"), 0);
  const json m = json::parse(slurp(dir() / "m.json"));
  EXPECT_NEAR(m["miou"].get<double>(), 1.0, 1e-9);
  EXPECT_NEAR(m["proxy_fd"].get<double>(), 0.0, 1e-6);
  EXPECT_EQ(m["n_layouts"], 150);
}

TEST_F(Cli, PipelineEval) {
  ASSERT_EQ(run("--data-dir d --k 8 eval --task cs --exclude-self --output e.json"), 0);
  const json e = json::parse(slurp(dir() / "e.json"));
  EXPECT_EQ(e["n_conditions"], 150);
  const auto& dec = e["decisions"];
  EXPECT_EQ(dec["reuse"].get<int>() + dec["guide"].get<int>() + dec["base"].get<int>(), 150);
  EXPECT_GE(e["retrievable_fraction"].get<double>(), 0.0);
  EXPECT_LE(e["retrievable_fraction"].get<double>(), 1.0);
}

TEST_F(Cli, RetrieveCompletionIsCountIntersection) {
  // Known: one title and two text elements, plus two unknown slots.
  const json title{{"category", "title"}, {"size", {0.9, 0.05}}, {"position", {0.5, 0.05}}};
  const json text{{"category", "text"}, {"size", {0.4, 0.3}}, {"position", {0.3, 0.4}}};
  const json cond{{"slots", json::array({title, text, text, json::object(), json::object()})}};
  {
    std::ofstream(dir() / "comp.json") << cond.dump();
  }
  ASSERT_EQ(run("--data-dir d --k 1000 retrieve --task completion --condition comp.json --output r.json"), 0);
  std::set<std::size_t> got;
  for (const auto& c : json::parse(slurp(dir() / "r.json"))) got.insert(c["id"].get<std::size_t>());

  // Brute-force scan of the dataset file.
  const json db = json::parse(slurp(dir() / "d" / "layouts.json"));
  std::set<std::size_t> expected;
  for (std::size_t i = 0; i < db["layouts"].size(); ++i) {
    std::size_t titles = 0, texts = 0;
    for (const auto& e : db["layouts"][i]["elements"]) {
      titles += e["category"] == "title";
      texts += e["category"] == "text";
    }
    if (titles >= 1 && texts >= 2) expected.insert(i);
  }
  ASSERT_FALSE(expected.empty());
  EXPECT_EQ(got, expected);
}

TEST_F(Cli, ConfigFileAndOverride) {
  {
    std::ofstream(dir() / "run.toml") << "data_dir = \"d\"\nseed = 7\n";
  }
  ASSERT_EQ(run("--config run.toml generate --n-samples 3 --output cfg.json"), 0);
  ASSERT_EQ(run("--data-dir d --seed 7 generate --n-samples 3 --output flag.json"), 0);
  EXPECT_EQ(slurp(dir() / "cfg.json"), slurp(dir() / "flag.json"));
  ASSERT_EQ(run("generate --n-samples 3 --output env.json", "LAYOUTRAG_CONFIG=run.toml"), 0);
  EXPECT_EQ(slurp(dir() / "cfg.json"), slurp(dir() / "env.json"));
  // Flags beat the file.
  ASSERT_EQ(run("--config run.toml --seed 8 generate --n-samples 3 --output over.json"), 0);
  EXPECT_NE(slurp(dir() / "cfg.json"), slurp(dir() / "over.json"));
  {
    std::ofstream(dir() / "nested.toml") << "data_dir = \"d\"\nseed = 7\n[policy]\nk = 4\n";
  }
  ASSERT_EQ(run("--config nested.toml generate --n-samples 3 --output nested.json"), 0);
  ASSERT_EQ(run("--data-dir d --seed 7 --k 4 generate --n-samples 3 --output nested_flags.json"), 0);
  EXPECT_EQ(slurp(dir() / "nested.json"), slurp(dir() / "nested_flags.json"));
  {
    std::ofstream(dir() / "bad.toml") << "no_such_key = 1\n";
  }
  EXPECT_EQ(run("--config bad.toml build-index"), 1);
}

TEST_F(Cli, ExitCodes) {
  EXPECT_EQ(run("--help > /dev/null"), 0);
  EXPECT_EQ(run("--no-such-flag build-index"), 1);
  EXPECT_EQ(run("frobnicate"), 1);
  EXPECT_EQ(run("--data-dir d --fusion sideways build-index"), 1);
  EXPECT_EQ(run("--data-dir d --tau-ref 2 retrieve --task ucond"), 1);
  EXPECT_EQ(run("--data-dir missing build-index"), 2);
  EXPECT_EQ(run("--data-dir d retrieve --condition '[{\"category\": \"banner\"}]'"), 2);
  {
    std::ofstream(dir() / "junk.lrck") << "not a checkpoint";
  }
  EXPECT_EQ(run("--data-dir d --checkpoint-path junk.lrck generate --n-samples 1"), 2);
}

}  // namespace
}  // namespace layoutrag
