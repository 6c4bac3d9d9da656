#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "rec/data.hpp"
#include "rec/eval.hpp"
#include "rec/graph.hpp"
#include "rec/hgnn.hpp"
#include "rec/index.hpp"
#include "rec/synth.hpp"
#include "rec/two_tower.hpp"

namespace rec {

struct PipelineConfig {
  // Empty input paths fall back to the synth stage's outputs in out_dir.
  std::string interactions_path;
  std::string catalog_path;
  std::string users_path;
  std::string out_dir = "rec_out";
  std::uint64_t seed = 1;

  SynthConfig synth;
  int holdout_days = 14;
  int train_window_days = 0;  // 0 keeps every train record
  GraphBuildOptions graph;
  HgnnConfig hgnn;
  TowerConfig tower;
  std::size_t k = 10;
  std::size_t probe_pairs = 2000;
  // Copy the podcast self weights into the audiobook slot before embedding.
  bool pp_only_inductive = false;

  void validate() const;
};

nlohmann::json to_json(const PipelineConfig& c);
PipelineConfig pipeline_config_from_json(const nlohmann::json& j);
/// Missing file is an io error; an empty path yields the defaults.
PipelineConfig load_pipeline_config(const std::string& path);
std::string config_hash(const PipelineConfig& c);

std::uint64_t derive_seed(std::uint64_t seed, std::string_view purpose);

const std::vector<std::string>& ablation_variants();
void apply_variant(PipelineConfig& config, std::string_view variant);

// ---- in-memory pipeline ----

struct Prepared {
  Catalog catalog;
  UserProfiles profiles;
  DatasetSplit split;
  UserSegments segments;
};

Prepared prepare(const PipelineConfig& config, const std::vector<InteractionRecord>& records, Catalog catalog,
                 UserProfiles profiles);
Prepared prepare_synthetic(const PipelineConfig& config);

/// Every user seen in train, holdout or the profiles.
std::set<std::string> all_users(const Prepared& data);
FeatureWindow feature_window(const PipelineConfig& config, const Prepared& data);

HeteroGraph build_graph(const PipelineConfig& config, const Prepared& data);
HgnnTrainResult train_graph_model(const PipelineConfig& config, const HeteroGraph& graph);

struct TowerModel {
  TowerData data;
  TowerTrainResult train;
  std::map<std::string, Vec> item_vectors;
  std::map<std::string, Vec> user_vectors;
  std::shared_ptr<const Recommender> recommender;
};

TowerModel train_tower_model(const PipelineConfig& config, const Prepared& data, const NodeEmbeddingTable& embeddings,
                             const std::string& name);

struct ModelReports {
  std::string model;
  std::vector<MetricsReport> reports;  // warm, cold, all
};

struct InductiveCheck {
  std::vector<std::string> items;  // target items with no edges in the graph
  bool embedded = false;           // every one has a finite unit embedding
  bool vectorized = false;         // every one has an item vector
  std::size_t recommended = 0;     // how many reach some user's top-100
};

struct Benchmark {
  std::vector<ModelReports> models;
  std::vector<MetricsReport> tiers;
  InductiveCheck inductive;
  double max_embedding_norm_error = 0.0;
  double max_output_norm_error = 0.0;

  const MetricsReport& report(std::string_view model, Segment segment) const;
};

/// Popularity, content-KNN, HGNN-only, 2T without HGNN inputs and 2T-HGNN,
/// evaluated on the holdout. `extra_no_weak` adds a 2T-HGNN run without weak
/// signals in the user features.
Benchmark run_benchmark(const PipelineConfig& config, const Prepared& data, bool extra_no_weak = false);

// ---- stages ----

struct StageOptions {
  std::string user;
  std::size_t k = 10;
};

const std::vector<std::string>& stage_names();

/// Runs one stage against config.out_dir. Results meant for the terminal
/// (recommend) go to `out`.
void run_stage(std::string_view stage, const PipelineConfig& config, const StageOptions& options, std::ostream& out);

}  // namespace rec
