#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "rec/pipeline.hpp"

using namespace rec;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

json tiny_config_json(const fs::path& out) {
  return json{{"paths", {{"out_dir", out.string()}}},
              {"seed", 3},
              {"synth",
               {{"n_users", 80}, {"n_podcasts", 30}, {"n_audiobooks", 20}, {"n_clusters", 3}, {"content_dim", 6}}},
              {"hgnn", {{"hidden_dim", 8}, {"output_dim", 8}, {"max_epochs", 3}, {"fanouts", {5, 5}}}},
              {"tower", {{"widths", {16, 8, 8}}, {"epochs", 2}, {"batch_size", 32}}},
              {"eval", {{"k", 10}, {"probe_pairs", 50}}}};
}

fs::path fresh_dir(const std::string& name) {
  auto d = fs::temp_directory_path() / ("rec_pipeline_test_" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void run(std::string_view stage, const PipelineConfig& c, std::ostream& out, const StageOptions& o = {}) {
  run_stage(stage, c, o, out);
}

void run_through_evaluate(const PipelineConfig& c) {
  std::ostringstream sink;
  for (const char* s : {"synth", "split", "build-graph", "train-hgnn", "embed", "train-2t", "build-index", "evaluate"})
    run(s, c, sink);
}

json outputs_of(const fs::path& manifest) { return json::parse(slurp(manifest))["outputs"]; }

}  // namespace

TEST(Config, DefaultsAndOverrides) {
  auto c = pipeline_config_from_json(json::object());
  EXPECT_EQ(c.seed, 1u);
  EXPECT_EQ(c.k, 10u);
  EXPECT_EQ(c.hgnn.layers, 2);
  EXPECT_EQ(c.tower.widths, (std::vector<int>{512, 256, 128}));
  auto d = pipeline_config_from_json(json{{"graph", {{"relations", {"aa", "pp"}}}}, {"seed", 9}});
  EXPECT_EQ(d.seed, 9u);
  EXPECT_EQ(d.graph.relations, (RelationMask{true, false, true}));
  EXPECT_EQ(pipeline_config_from_json(to_json(d)).graph.relations, d.graph.relations);
  EXPECT_EQ(config_hash(pipeline_config_from_json(to_json(d))), config_hash(d));
  EXPECT_NE(config_hash(c), config_hash(d));
}

TEST(Config, RejectsUnknownAndInvalidFields) {
  for (const json& bad : {json{{"sed", 1}}, json{{"hgnn", {{"layer", 2}}}}, json{{"eval", {{"K", 5}}}},
                          json{{"graph", {{"relations", {"ab"}}}}}, json{{"hgnn", {{"margin", -1.0}}}},
                          json{{"tower", {{"widths", {}}}}}, json{{"seed", "one"}}}) {
    try {
      pipeline_config_from_json(bad).validate();
      ADD_FAILURE() << bad.dump();
    } catch (const Error& e) {
      EXPECT_EQ(e.kind(), ErrorKind::validation) << bad.dump();
    }
  }
  EXPECT_THROW(load_pipeline_config("/nonexistent/config.json"), Error);
}

TEST(Config, SeedsAndVariants) {
  EXPECT_NE(derive_seed(1, "hgnn-init"), derive_seed(1, "tower-init"));
  EXPECT_NE(derive_seed(1, "hgnn-init"), derive_seed(2, "hgnn-init"));
  EXPECT_EQ(derive_seed(1, "hgnn-init"), derive_seed(1, "hgnn-init"));
  ASSERT_EQ(ablation_variants().size(), 7u);
  PipelineConfig c;
  apply_variant(c, "aa-only");
  EXPECT_EQ(c.graph.relations, (RelationMask{true, false, false}));
  PipelineConfig w;
  apply_variant(w, "no-weak-signals");
  EXPECT_FALSE(w.tower.weak_signals);
  EXPECT_THROW(apply_variant(w, "G"), Error);
}

TEST(Stages, MissingDependencyNamesTheProducer) {
  auto dir = fresh_dir("missing");
  auto c = pipeline_config_from_json(tiny_config_json(dir));
  std::ostringstream sink;
  try {
    run("train-2t", c, sink);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::dependency);
    EXPECT_NE(std::string(e.what()).find("run stage '"), std::string::npos);
  }
  EXPECT_THROW(run("not-a-stage", c, sink), Error);
}

TEST(Stages, EndToEndDeterministicAndIsolated) {
  auto a_dir = fresh_dir("a"), b_dir = fresh_dir("b");
  auto a = pipeline_config_from_json(tiny_config_json(a_dir));
  auto b = pipeline_config_from_json(tiny_config_json(b_dir));
  run_through_evaluate(a);
  run_through_evaluate(b);
  EXPECT_EQ(slurp(a_dir / "evaluation.json"), slurp(b_dir / "evaluation.json"));
  for (const char* f : {"graph.bin", "hgnn.bin", "embeddings.jsonl", "towers.bin", "index.bin", "item_vectors.jsonl"})
    EXPECT_EQ(slurp(a_dir / f), slurp(b_dir / f)) << f;

  auto m = json::parse(slurp(a_dir / "evaluate.manifest.json"));
  EXPECT_EQ(m["config_hash"], config_hash(a));
  EXPECT_EQ(m["seed"], 3);
  EXPECT_FALSE(m["inputs"].empty());

  // Drop a downstream artifact and rebuild only that stage.
  const auto before = outputs_of(a_dir / "build-index.manifest.json");
  fs::remove(a_dir / "index.bin");
  std::ostringstream sink;
  EXPECT_THROW(run("evaluate", a, sink), Error);
  run("build-index", a, sink);
  EXPECT_EQ(outputs_of(a_dir / "build-index.manifest.json"), before);

  // Cold-start user with no history at all.
  StageOptions o;
  o.user = "someone-new";
  o.k = 5;
  std::ostringstream out;
  run("recommend", a, out, o);
  std::istringstream lines(out.str());
  std::string line;
  int n = 0;
  while (std::getline(lines, line)) {
    auto j = json::parse(line);
    EXPECT_TRUE(j.contains("item_id"));
    EXPECT_TRUE(j["score"].is_number());
    ++n;
  }
  EXPECT_EQ(n, 5);

  run("weak-signals", a, sink);
  run("probe", a, sink);
  auto probe = json::parse(slurp(a_dir / "probe.json"));
  EXPECT_FALSE(probe.empty());
  EXPECT_TRUE(json::parse(slurp(a_dir / "weak_signals.json")).contains("cooccurrence"));
}

#ifdef REC_CLI_PATH
namespace {

struct CliResult {
  int code;
  std::string err;
};

CliResult run_cli(const std::string& args) {
  auto err = fs::temp_directory_path() / "rec_cli_stderr.txt";
  const std::string cmd = std::string(REC_CLI_PATH) + " " + args + " >/dev/null 2>" + err.string();
  const int status = std::system(cmd.c_str());
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(err)};
}

}  // namespace

TEST(Cli, ErrorsAreSingleLineJsonWithExitCodes) {
  auto dir = fresh_dir("cli");
  {
    std::ofstream(dir / "bad.json") << R"({"hgnn": {"layers": 0}})";
    std::ofstream(dir / "unknown.json") << R"({"colour": 1})";
    std::ofstream(dir / "ok.json") << tiny_config_json(dir / "out").dump();
  }
  auto check = [](const CliResult& r, int code, const std::string& kind) {
    EXPECT_EQ(r.code, code) << r.err;
    ASSERT_FALSE(r.err.empty());
    EXPECT_EQ(std::count(r.err.begin(), r.err.end(), '\n'), 1) << r.err;
    auto j = json::parse(r.err);
    EXPECT_EQ(j["error"], kind);
    EXPECT_TRUE(j.contains("stage"));
    EXPECT_TRUE(j.contains("message"));
  };
  check(run_cli("split --config " + (dir / "bad.json").string()), 2, "validation");
  check(run_cli("split --config " + (dir / "unknown.json").string()), 2, "validation");
  check(run_cli("split --config " + (dir / "missing.json").string()), 3, "io");
  check(run_cli("train-2t --config " + (dir / "ok.json").string()), 5, "dependency");
  check(run_cli("split"), 2, "usage");
  EXPECT_EQ(run_cli("synth --config " + (dir / "ok.json").string() + " --seed 4").code, 0);
  EXPECT_TRUE(fs::exists(dir / "out" / "interactions.jsonl"));
  EXPECT_TRUE(fs::exists(dir / "out" / "config.json"));
}
#endif
