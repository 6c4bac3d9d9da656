#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "rec/pipeline.hpp"

namespace {

int exit_code(rec::ErrorKind kind) {
  switch (kind) {
    case rec::ErrorKind::validation: return 2;
    case rec::ErrorKind::io: return 3;
    case rec::ErrorKind::parse: return 4;
    case rec::ErrorKind::dependency: return 5;
    case rec::ErrorKind::numeric: return 6;
  }
  return 1;
}

int report(std::string_view kind, const std::string& stage, const std::string& message, int code) {
  nlohmann::json j;
  j["error"] = kind;
  j["stage"] = stage;
  j["message"] = message;
  std::cerr << j.dump() << std::endl;
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Audiobook recommendation pipeline"};
  std::string stage, config_path, out_dir;
  std::uint64_t seed = 0;
  rec::StageOptions opts;

  std::string stages;
  for (const auto& s : rec::stage_names()) stages += (stages.empty() ? "" : ", ") + s;
  app.add_option("stage", stage, "One of: " + stages)->required();
  app.add_option("--config", config_path, "Pipeline config (JSON)")->required();
  auto* seed_opt = app.add_option("--seed", seed, "Override the config seed");
  auto* out_opt = app.add_option("--out", out_dir, "Override the output directory");
  app.add_option("--user", opts.user, "User id (recommend)");
  app.add_option("--k", opts.k, "Number of results (recommend)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return report("usage", stage, e.what(), 2);
  }

  try {
    auto config = rec::load_pipeline_config(config_path);
    if (*seed_opt) config.seed = seed;
    if (*out_opt) config.out_dir = out_dir;
    rec::run_stage(stage, config, opts, std::cout);
  } catch (const rec::Error& e) {
    return report(rec::to_string(e.kind()), stage, e.what(), exit_code(e.kind()));
  } catch (const std::exception& e) {
    return report("internal", stage, e.what(), 1);
  }
  return 0;
}
