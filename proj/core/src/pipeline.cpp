#include "rec/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <ostream>

#include <nlohmann/json.hpp>

#include "rec/weak_signals.hpp"

namespace rec {

namespace fs = std::filesystem;
using nlohmann::json;


// ---------------------------------------------------------------- config

void PipelineConfig::validate() const {
  synth.validate();
  hgnn.validate();
  tower.validate();
  auto fail = [](const std::string& m) { throw Error(ErrorKind::validation, "config: " + m); };
  if (out_dir.empty()) fail("out_dir must not be empty");
  if (holdout_days < 1) fail("split.holdout_days must be positive");
  if (train_window_days < 0) fail("split.train_window_days must be >= 0");
  if (graph.min_co_users < 1) fail("graph.min_co_users must be >= 1");
  if (std::none_of(graph.relations.begin(), graph.relations.end(), [](bool b) { return b; }))
    fail("graph.relations must keep at least one relation");
  if (k < 1 || k > kRecommendationDepth) fail("eval.k must lie in [1, 100]");
  if (probe_pairs < 1) fail("eval.probe_pairs must be positive");
}

json to_json(const PipelineConfig& c) {
  json j;
  j["paths"] = {{"interactions", c.interactions_path},
                {"catalog", c.catalog_path},
                {"users", c.users_path},
                {"out_dir", c.out_dir}};
  j["seed"] = c.seed;
  j["synth"] = json(c.synth);
  j["split"] = {{"holdout_days", c.holdout_days}, {"train_window_days", c.train_window_days}};
  std::vector<std::string> rels;
  for (auto r : kRelations)
    if (c.graph.relations[static_cast<std::size_t>(r)]) rels.emplace_back(to_string(r));
  j["graph"] = {{"min_co_users", c.graph.min_co_users}, {"all_signals", c.graph.all_signals}, {"relations", rels}};
  j["hgnn"] = json(c.hgnn);
  j["tower"] = json(c.tower);
  j["eval"] = {{"k", c.k}, {"probe_pairs", c.probe_pairs}, {"pp_only_inductive", c.pp_only_inductive}};
  return json(j);
}

namespace {

template <typename F>
void for_fields(const json& j, const std::string& where, F&& f) {
  if (!j.is_object()) throw Error(ErrorKind::validation, "config: '" + where + "' must be an object");
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!f(it.key(), it.value()))
      throw Error(ErrorKind::validation, "config: unknown field '" + where + "." + it.key() + "'");
}

}  // namespace

PipelineConfig pipeline_config_from_json(const json& j) {
  PipelineConfig c;
  try {
    for_fields(j, "<root>", [&](const std::string& key, const json& v) {
      if (key == "paths") {
        for_fields(v, "paths", [&](const std::string& k, const json& x) {
          if (k == "interactions") c.interactions_path = x.get<std::string>();
          else if (k == "catalog") c.catalog_path = x.get<std::string>();
          else if (k == "users") c.users_path = x.get<std::string>();
          else if (k == "out_dir") c.out_dir = x.get<std::string>();
          else return false;
          return true;
        });
      } else if (key == "seed") {
        c.seed = v.get<std::uint64_t>();
      } else if (key == "synth") {
        c.synth = v.get<SynthConfig>();
      } else if (key == "split") {
        for_fields(v, "split", [&](const std::string& k, const json& x) {
          if (k == "holdout_days") c.holdout_days = x.get<int>();
          else if (k == "train_window_days") c.train_window_days = x.get<int>();
          else return false;
          return true;
        });
      } else if (key == "graph") {
        for_fields(v, "graph", [&](const std::string& k, const json& x) {
          if (k == "min_co_users") {
            c.graph.min_co_users = x.get<std::size_t>();
          } else if (k == "all_signals") {
            c.graph.all_signals = x.get<bool>();
          } else if (k == "relations") {
            c.graph.relations = {false, false, false};
            for (const auto& name : x.get<std::vector<std::string>>()) {
              auto r = parse_relation(name);
              if (!r) throw Error(ErrorKind::validation, "config: unknown relation '" + name + "'");
              c.graph.relations[static_cast<std::size_t>(*r)] = true;
            }
          } else {
            return false;
          }
          return true;
        });
      } else if (key == "hgnn") {
        c.hgnn = v.get<HgnnConfig>();
      } else if (key == "tower") {
        c.tower = v.get<TowerConfig>();
      } else if (key == "eval") {
        for_fields(v, "eval", [&](const std::string& k, const json& x) {
          if (k == "k") c.k = x.get<std::size_t>();
          else if (k == "probe_pairs") c.probe_pairs = x.get<std::size_t>();
          else if (k == "pp_only_inductive") c.pp_only_inductive = x.get<bool>();
          else return false;
          return true;
        });
      } else {
        return false;
      }
      return true;
    });
  } catch (const json::exception& e) {
    throw Error(ErrorKind::validation, std::string("config: ") + e.what());
  }
  c.validate();
  return c;
}

PipelineConfig load_pipeline_config(const std::string& path) {
  if (path.empty()) {
    PipelineConfig c;
    c.validate();
    return c;
  }
  const auto text = read_file(path);
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw Error(ErrorKind::parse, "config " + path + ": " + e.what());
  }
  return pipeline_config_from_json(j);
}

std::string config_hash(const PipelineConfig& c) {
  // Where artifacts land does not change what they contain.
  auto j = to_json(c);
  j["paths"].erase("out_dir");
  return hash_hex(j.dump());
}

std::uint64_t derive_seed(std::uint64_t seed, std::string_view purpose) {
  Fnv1a h;
  h.update(purpose);
  h.update(std::string_view(reinterpret_cast<const char*>(&seed), sizeof seed));
  return h.digest();
}

const std::vector<std::string>& ablation_variants() {
  static const std::vector<std::string> v{"full",         "no-balanced-sampler", "no-weak-signals",   "no-pp-edges",
                                          "no-aa-edges",  "aa-only",             "pp-only-inductive"};
  return v;
}

void apply_variant(PipelineConfig& c, std::string_view variant) {
  auto& rel = c.graph.relations;
  if (variant == "full") {
  } else if (variant == "no-balanced-sampler") {
    c.hgnn.balanced_sampler = false;
  } else if (variant == "no-weak-signals") {
    c.tower.weak_signals = false;
  } else if (variant == "no-pp-edges") {
    rel[static_cast<std::size_t>(Relation::pp)] = false;
  } else if (variant == "no-aa-edges") {
    rel[static_cast<std::size_t>(Relation::aa)] = false;
  } else if (variant == "aa-only") {
    rel = {true, false, false};
  } else if (variant == "pp-only-inductive") {
    rel = {false, false, true};
    c.pp_only_inductive = true;
  } else {
    throw Error(ErrorKind::validation, "unknown ablation variant '" + std::string(variant) + "'");
  }
}

// ---------------------------------------------------------------- in-memory pipeline

Prepared prepare(const PipelineConfig& config, const std::vector<InteractionRecord>& records, Catalog catalog,
                 UserProfiles profiles) {
  if (records.empty()) throw Error(ErrorKind::validation, "no interactions");
  Prepared p;
  p.catalog = std::move(catalog);
  p.profiles = std::move(profiles);
  p.split = timeline_split(records, default_split_time(records, config.holdout_days));
  if (config.train_window_days > 0) {
    const auto start = p.split.split_time - static_cast<std::int64_t>(config.train_window_days) * kSecondsPerDay;
    std::erase_if(p.split.train, [&](const InteractionRecord& r) { return r.timestamp < start; });
  }
  p.segments = user_segments(p.split);
  return p;
}

Prepared prepare_synthetic(const PipelineConfig& config) {
  auto ds = synth_generate(config.synth, config.seed);
  return prepare(config, ds.records, std::move(ds.catalog), std::move(ds.users));
}

std::set<std::string> all_users(const Prepared& data) {
  std::set<std::string> users;
  for (const auto& r : data.split.train) users.insert(r.user_id);
  for (const auto& r : data.split.holdout) users.insert(r.user_id);
  for (const auto& [u, p] : data.profiles) users.insert(u);
  return users;
}

FeatureWindow feature_window(const PipelineConfig& config, const Prepared& data) {
  return {data.split.split_time, config.tower.window_days};
}

HeteroGraph build_graph(const PipelineConfig& config, const Prepared& data) {
  return build_colisten_graph(data.split.train, data.catalog, config.graph);
}

HgnnTrainResult train_graph_model(const PipelineConfig& config, const HeteroGraph& graph) {
  Rng init_rng(derive_seed(config.seed, "hgnn-init"));
  auto init = init_hgnn_params(config.hgnn, graph.feature_dim(), init_rng);
  auto result = train_hgnn(graph, init, derive_seed(config.seed, "hgnn-train"));
  if (config.pp_only_inductive) {
    for (auto& L : result.params.layers)
      L.self_weight[static_cast<std::size_t>(ItemType::audiobook)] =
          L.self_weight[static_cast<std::size_t>(ItemType::podcast)];
    result.embeddings = embed_all(graph, result.params);
  }
  return result;
}

TowerModel train_tower_model(const PipelineConfig& config, const Prepared& data, const NodeEmbeddingTable& embeddings,
                             const std::string& name) {
  TowerModel m;
  m.data = assemble_tower_data(data.split.train, all_users(data), data.catalog, data.profiles, embeddings,
                               feature_window(config, data), config.tower);
  Rng init_rng(derive_seed(config.seed, "tower-init"));
  auto init = init_tower_params(config.tower, m.data, data.profiles, data.catalog, init_rng);
  m.train = train_2t(init, m.data, training_pairs(data.split.train, config.tower.target),
                     derive_seed(config.seed, "tower-train"));
  m.item_vectors = export_item_vectors(m.train.params, m.data);
  m.user_vectors = export_user_vectors(m.train.params, m.data);
  m.recommender = make_vector_recommender(name, m.user_vectors, build_index(m.item_vectors), nullptr);
  return m;
}

const MetricsReport& Benchmark::report(std::string_view model, Segment segment) const {
  for (const auto& m : models)
    if (m.model == model)
      for (const auto& r : m.reports)
        if (r.segment == segment) return r;
  throw Error(ErrorKind::validation, "benchmark: no report for model '" + std::string(model) + "'");
}

namespace {

double max_norm_error(const std::map<std::string, Vec>& vectors) {
  double e = 0.0;
  for (const auto& [id, v] : vectors) e = std::max(e, std::abs(v.norm() - 1.0));
  return e;
}

InductiveCheck inductive_check(const HeteroGraph& graph, const NodeEmbeddingTable& embeddings,
                               const TowerModel& tower, const RankedLists& recs, ItemType target) {
  InductiveCheck c;
  for (NodeId g = 0; g < graph.num_nodes(); ++g)
    if (graph.type_of(g) == target && graph.degree(g) == 0) c.items.push_back(graph.item_id(g));
  c.embedded = !c.items.empty();
  c.vectorized = !c.items.empty();
  for (const auto& id : c.items) {
    auto i = embeddings.index_of(id);
    if (!i) {
      c.embedded = false;
    } else {
      const auto z = embeddings.z.col(static_cast<Eigen::Index>(*i));
      if (!z.allFinite() || std::abs(z.norm() - 1.0) > 1e-6) c.embedded = false;
    }
    if (!tower.item_vectors.contains(id)) c.vectorized = false;
  }
  std::set<std::string> seen;
  for (const auto& [u, list] : recs)
    for (std::size_t i = 0; i < std::min(list.size(), kRecommendationDepth); ++i) seen.insert(list[i]);
  for (const auto& id : c.items) c.recommended += seen.contains(id) ? 1 : 0;
  return c;
}

}  // namespace

Benchmark run_benchmark(const PipelineConfig& config, const Prepared& data, bool extra_no_weak) {
  const auto target = config.tower.target;
  const auto window = feature_window(config, data);
  const auto graph = build_graph(config, data);
  const auto hgnn = train_graph_model(config, graph);

  Benchmark b;
  for (Eigen::Index j = 0; j < hgnn.embeddings.z.cols(); ++j)
    b.max_embedding_norm_error = std::max(b.max_embedding_norm_error, std::abs(hgnn.embeddings.z.col(j).norm() - 1.0));

  auto popularity = make_popularity(data.split.train, data.catalog, target, window);
  auto add = [&](const Recommender& r) {
    auto result = evaluate(r, data.split, data.segments, target, data.catalog, config.k);
    b.models.push_back({r.name(), result.reports});
    return result;
  };
  add(*popularity);
  add(*make_content_knn(data.split.train, data.catalog, target, window, popularity));
  add(*make_hgnn_only(data.split.train, data.catalog, hgnn.embeddings, target, window, popularity));

  auto plain_cfg = config;
  plain_cfg.tower.hgnn_embeddings = false;
  const auto plain = train_tower_model(plain_cfg, data, hgnn.embeddings, "2t");
  add(*plain.recommender);

  const auto full = train_tower_model(config, data, hgnn.embeddings, "2t_hgnn");
  const auto full_eval = add(*full.recommender);
  b.tiers = tiered_metrics(*full.recommender, data.split, data.segments, target, data.catalog, Segment::all, config.k);
  auto pop_tiers = tiered_metrics(*popularity, data.split, data.segments, target, data.catalog, Segment::all, config.k);
  b.tiers.insert(b.tiers.end(), pop_tiers.begin(), pop_tiers.end());

  for (const auto* m : {&plain, &full})
    b.max_output_norm_error = std::max(
        {b.max_output_norm_error, max_norm_error(m->item_vectors), max_norm_error(m->user_vectors)});

  if (extra_no_weak) {
    auto cfg = config;
    cfg.tower.weak_signals = false;
    const auto no_weak = train_tower_model(cfg, data, hgnn.embeddings, "2t_hgnn_no_weak");
    add(*no_weak.recommender);
    b.max_output_norm_error = std::max(
        {b.max_output_norm_error, max_norm_error(no_weak.item_vectors), max_norm_error(no_weak.user_vectors)});
  }
  b.inductive = inductive_check(graph, hgnn.embeddings, full, full_eval.recommendations, target);
  return b;
}

// ---------------------------------------------------------------- stages

const std::vector<std::string>& stage_names() {
  static const std::vector<std::string> names{"synth",       "split",     "build-graph", "train-hgnn",
                                              "embed",       "train-2t",  "build-index", "recommend",
                                              "evaluate",    "ablate",    "weak-signals", "probe"};
  return names;
}

namespace {

struct Workspace {
  const PipelineConfig& config;
  fs::path dir;
  std::vector<std::string> inputs;
  std::vector<std::string> outputs;

  fs::path at(std::string_view name) const { return dir / name; }

  // Artifact produced by an earlier stage.
  fs::path need(std::string_view name, std::string_view producer) {
    auto p = at(name);
    if (!fs::exists(p))
      throw Error(ErrorKind::dependency,
                  "missing " + p.string() + "; run stage '" + std::string(producer) + "' first");
    inputs.push_back(p.string());
    return p;
  }

  fs::path input(const std::string& configured, std::string_view fallback) {
    if (!configured.empty()) {
      if (!fs::exists(configured)) throw Error(ErrorKind::io, "input file not found: " + configured);
      inputs.push_back(configured);
      return configured;
    }
    return need(fallback, "synth");
  }

  void wrote(const fs::path& p) { outputs.push_back(p.string()); }
};

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::io, "cannot write " + p.string());
  out << text;
  if (!out) throw Error(ErrorKind::io, "write failed: " + p.string());
}

std::string utc_now() {
  const std::time_t t = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

void write_manifest(const Workspace& ws, std::string_view stage) {
  json m;
  m["stage"] = stage;
  m["config_hash"] = config_hash(ws.config);
  m["seed"] = ws.config.seed;
  m["created_at"] = utc_now();
  json in = json::object();
  for (const auto& p : ws.inputs) in[p] = hash_hex(read_file(p));
  json out = json::object();
  for (const auto& p : ws.outputs) out[p] = hash_hex(read_file(p));
  m["inputs"] = in;
  m["outputs"] = out;
  write_text(ws.at(std::string(stage) + ".manifest.json"), m.dump(2) + "\n");
}

InteractionParse read_interactions_checked(const fs::path& p, std::ostream& log) {
  auto parsed = parse_interactions(p.string());
  for (const auto& d : parsed.diagnostics) log << "warning: " << p.string() << ":" << d.line << ": " << d.message << "\n";
  return parsed;
}

UserProfiles load_profiles(Workspace& ws) {
  if (!ws.config.users_path.empty()) {
    ws.inputs.push_back(ws.config.users_path);
    return parse_users(ws.config.users_path);
  }
  auto p = ws.at("users.jsonl");
  if (!fs::exists(p)) return {};
  ws.inputs.push_back(p.string());
  return parse_users(p.string());
}

Prepared load_prepared(Workspace& ws, std::ostream& log) {
  Prepared d;
  d.catalog = parse_catalog(ws.input(ws.config.catalog_path, "catalog.jsonl").string());
  d.profiles = load_profiles(ws);
  d.split.train = read_interactions_checked(ws.need("train.jsonl", "split"), log).records;
  d.split.holdout = read_interactions_checked(ws.need("holdout.jsonl", "split"), log).records;
  const auto meta = json::parse(read_file(ws.need("split.json", "split").string()));
  d.split.split_time = meta.at("split_time").get<std::int64_t>();
  d.segments = user_segments(d.split);
  return d;
}

std::string log_lines(const std::vector<json>& rows) {
  std::string s;
  for (const auto& r : rows) s += r.dump() + "\n";
  return s;
}

void stage_synth(Workspace& ws) {
  auto ds = synth_generate(ws.config.synth, ws.config.seed);
  for (auto [name, text] : {std::pair{"interactions.jsonl", serialize_interactions(ds.records)},
                            std::pair{"catalog.jsonl", serialize_catalog(ds.catalog)},
                            std::pair{"users.jsonl", serialize_users(ds.users)}}) {
    write_text(ws.at(name), text);
    ws.wrote(ws.at(name));
  }
}

void stage_split(Workspace& ws, std::ostream& log) {
  auto parsed = read_interactions_checked(ws.input(ws.config.interactions_path, "interactions.jsonl"), log);
  auto catalog = parse_catalog(ws.input(ws.config.catalog_path, "catalog.jsonl").string());
  auto d = prepare(ws.config, parsed.records, std::move(catalog), {});
  for (const auto& w : d.split.warnings) log << "warning: " << w << "\n";
  write_text(ws.at("train.jsonl"), serialize_interactions(d.split.train));
  write_text(ws.at("holdout.jsonl"), serialize_interactions(d.split.holdout));
  json meta;
  meta["split_time"] = d.split.split_time;
  meta["n_train"] = d.split.train.size();
  meta["n_holdout"] = d.split.holdout.size();
  meta["warm_users"] = d.segments.warm.size();
  meta["cold_users"] = d.segments.cold.size();
  meta["skipped_lines"] = parsed.diagnostics.size();
  meta["warnings"] = d.split.warnings;
  write_text(ws.at("split.json"), meta.dump(2) + "\n");
  for (auto n : {"train.jsonl", "holdout.jsonl", "split.json"}) ws.wrote(ws.at(n));
}

HeteroGraph load_graph_artifact(Workspace& ws) { return load_graph(ws.need("graph.bin", "build-graph").string()); }

NodeEmbeddingTable load_embeddings_artifact(Workspace& ws) {
  return read_embeddings(ws.need("embeddings.jsonl", "embed").string());
}

void stage_build_graph(Workspace& ws, std::ostream& log) {
  auto d = load_prepared(ws, log);
  auto g = build_graph(ws.config, d);
  save_graph(ws.at("graph.bin").string(), g);
  write_text(ws.at("graph_stats.json"), to_json(graph_stats(g)).dump(2) + "\n");
  ws.wrote(ws.at("graph.bin"));
  ws.wrote(ws.at("graph_stats.json"));
}

void stage_train_hgnn(Workspace& ws) {
  auto g = load_graph_artifact(ws);
  auto result = train_graph_model(ws.config, g);
  save_hgnn(ws.at("hgnn.bin").string(), result.params);
  std::vector<json> rows;
  for (const auto& e : result.log) rows.push_back(to_json(e));
  // The training log carries wall-clock times, so it is not hashed as an output.
  write_text(ws.at("hgnn_log.jsonl"), log_lines(rows));
  ws.wrote(ws.at("hgnn.bin"));
}

void stage_embed(Workspace& ws) {
  auto g = load_graph_artifact(ws);
  auto params = load_hgnn(ws.need("hgnn.bin", "train-hgnn").string());
  write_embeddings(ws.at("embeddings.jsonl").string(), embed_all(g, params));
  ws.wrote(ws.at("embeddings.jsonl"));
}

void stage_train_2t(Workspace& ws, std::ostream& log) {
  auto d = load_prepared(ws, log);
  auto emb = load_embeddings_artifact(ws);
  auto m = train_tower_model(ws.config, d, emb, "2t_hgnn");
  save_towers(ws.at("towers.bin").string(), m.train.params);
  std::vector<json> rows;
  for (const auto& e : m.train.log) rows.push_back(to_json(e));
  write_text(ws.at("towers_log.jsonl"), log_lines(rows));
  ws.wrote(ws.at("towers.bin"));
}

TowerData tower_data_for(const Workspace& ws, const Prepared& d, const NodeEmbeddingTable& emb,
                         const TowerParams& params) {
  return assemble_tower_data(d.split.train, all_users(d), d.catalog, d.profiles, emb, feature_window(ws.config, d),
                             params.config);
}

void stage_build_index(Workspace& ws, std::ostream& log) {
  auto d = load_prepared(ws, log);
  auto emb = load_embeddings_artifact(ws);
  auto params = load_towers(ws.need("towers.bin", "train-2t").string());
  auto vectors = export_item_vectors(params, tower_data_for(ws, d, emb, params));
  write_vectors(ws.at("item_vectors.jsonl").string(), vectors);
  save_index(ws.at("index.bin").string(), build_index(vectors));
  ws.wrote(ws.at("item_vectors.jsonl"));
  ws.wrote(ws.at("index.bin"));
}

void stage_recommend(Workspace& ws, const StageOptions& opts, std::ostream& out, std::ostream& log) {
  if (opts.user.empty()) throw Error(ErrorKind::validation, "recommend: --user is required");
  if (opts.k < 1) throw Error(ErrorKind::validation, "recommend: --k must be >= 1");
  auto d = load_prepared(ws, log);
  auto emb = load_embeddings_artifact(ws);
  auto params = load_towers(ws.need("towers.bin", "train-2t").string());
  auto index = load_index(ws.need("index.bin", "build-index").string());
  auto p = d.profiles.find(opts.user);
  auto features = assemble_user_features(opts.user, d.split.train, emb, p == d.profiles.end() ? nullptr : &p->second,
                                         params.music_dim, feature_window(ws.config, d), params.config);
  const auto consumed = consumed_items(d.split.train, params.config.target);
  auto c = consumed.find(opts.user);
  const auto results =
      query_topk(index, user_tower_forward(params, features), opts.k, c == consumed.end() ? std::set<std::string>{} : c->second);
  for (const auto& r : results) {
    json j;
    j["item_id"] = r.item_id;
    j["score"] = r.score;
    out << j.dump() << "\n";
  }
}

void stage_evaluate(Workspace& ws, std::ostream& log) {
  const auto& cfg = ws.config;
  auto d = load_prepared(ws, log);
  auto emb = load_embeddings_artifact(ws);
  auto params = load_towers(ws.need("towers.bin", "train-2t").string());
  auto index = load_index(ws.need("index.bin", "build-index").string());
  const auto target = params.config.target;
  const auto window = feature_window(cfg, d);

  std::vector<std::shared_ptr<const Recommender>> models;
  auto popularity = make_popularity(d.split.train, d.catalog, target, window);
  models.push_back(popularity);
  models.push_back(make_content_knn(d.split.train, d.catalog, target, window, popularity));
  models.push_back(make_hgnn_only(d.split.train, d.catalog, emb, target, window, popularity));
  auto plain_cfg = cfg;
  plain_cfg.tower.hgnn_embeddings = false;
  models.push_back(train_tower_model(plain_cfg, d, emb, "2t").recommender);
  auto data = tower_data_for(ws, d, emb, params);
  auto full = make_vector_recommender("2t_hgnn", export_user_vectors(params, data), index, nullptr);
  models.push_back(full);

  std::vector<MetricsReport> all;
  json reports = json::array();
  for (const auto& m : models)
    for (const auto& r : evaluate(*m, d.split, d.segments, target, d.catalog, cfg.k).reports) {
      reports.push_back(to_json(r));
      all.push_back(r);
    }
  json tiers = json::array();
  for (const auto& m : {full, popularity})
    for (const auto& r : tiered_metrics(*m, d.split, d.segments, target, d.catalog, Segment::all, cfg.k)) {
      tiers.push_back(to_json(r));
      all.push_back(r);
    }
  json doc;
  doc["config_hash"] = config_hash(cfg);
  doc["seed"] = cfg.seed;
  doc["target"] = std::string(to_string(target));
  doc["k"] = cfg.k;
  doc["reports"] = reports;
  doc["tiers"] = tiers;
  write_text(ws.at("evaluation.json"), doc.dump(2) + "\n");
  write_text(ws.at("evaluation.csv"), reports_csv(all));
  ws.wrote(ws.at("evaluation.json"));
  ws.wrote(ws.at("evaluation.csv"));
}

void stage_ablate(Workspace& ws, std::ostream& log) {
  auto d = load_prepared(ws, log);
  json rows = json::array();
  std::vector<MetricsReport> flat;
  for (const auto& variant : ablation_variants()) {
    auto cfg = ws.config;
    apply_variant(cfg, variant);
    const auto graph = build_graph(cfg, d);
    const auto hgnn = train_graph_model(cfg, graph);
    const auto m = train_tower_model(cfg, d, hgnn.embeddings, variant);
    json row;
    row["variant"] = variant;
    row["config_hash"] = config_hash(cfg);
    json reps = json::array();
    for (const auto& r : evaluate(*m.recommender, d.split, d.segments, cfg.tower.target, d.catalog, cfg.k).reports) {
      reps.push_back(to_json(r));
      flat.push_back(r);
    }
    row["reports"] = reps;
    rows.push_back(row);
    log << "ablate: " << variant << " done\n";
  }
  write_text(ws.at("ablation.json"), rows.dump(2) + "\n");
  write_text(ws.at("ablation.csv"), reports_csv(flat));
  ws.wrote(ws.at("ablation.json"));
  ws.wrote(ws.at("ablation.csv"));
}

void stage_weak_signals(Workspace& ws, std::ostream& log) {
  auto parsed = read_interactions_checked(ws.input(ws.config.interactions_path, "interactions.jsonl"), log);
  auto catalog = parse_catalog(ws.input(ws.config.catalog_path, "catalog.jsonl").string());
  if (parsed.records.empty()) throw Error(ErrorKind::validation, "weak-signals: no interactions");
  const auto cutoff = default_split_time(parsed.records, ws.config.holdout_days);
  auto a = weak_signal_analysis(parsed.records, catalog, cutoff);
  write_text(ws.at("weak_signals.json"), to_json(a).dump(2) + "\n");
  ws.wrote(ws.at("weak_signals.json"));
}

void stage_probe(Workspace& ws) {
  auto g = load_graph_artifact(ws);
  auto emb = load_embeddings_artifact(ws);
  if (static_cast<std::size_t>(emb.z.cols()) != g.num_nodes())
    throw Error(ErrorKind::validation, "probe: embeddings do not match the graph; rerun 'embed'");
  json doc;
  for (auto [name, vectors] : {std::pair<const char*, const Mat*>{"content", &g.features()},
                               std::pair<const char*, const Mat*>{"hgnn", &emb.z}}) {
    json list = json::array();
    for (auto p : {Pairing::co_listened, Pairing::shared_podcast_only, Pairing::random}) {
      Rng rng(derive_seed(ws.config.seed, std::string("probe-") + name + "-" + std::string(to_string(p))));
      try {
        list.push_back(to_json(pair_similarity_probe(g, *vectors, p, ws.config.probe_pairs, rng)));
      } catch (const Error& e) {
        list.push_back({{"pairing", std::string(to_string(p))}, {"error", e.what()}});
      }
    }
    doc[name] = list;
  }
  write_text(ws.at("probe.json"), doc.dump(2) + "\n");
  ws.wrote(ws.at("probe.json"));
}

}  // namespace

void run_stage(std::string_view stage, const PipelineConfig& config, const StageOptions& options, std::ostream& out) {
  config.validate();
  if (std::find(stage_names().begin(), stage_names().end(), stage) == stage_names().end())
    throw Error(ErrorKind::validation, "unknown stage '" + std::string(stage) + "'");
  Workspace ws{config, fs::path(config.out_dir), {}, {}};
  std::error_code ec;
  fs::create_directories(ws.dir, ec);
  if (ec) throw Error(ErrorKind::io, "cannot create " + ws.dir.string() + ": " + ec.message());
  std::ostream& log = std::clog;

  if (stage == "synth") stage_synth(ws);
  else if (stage == "split") stage_split(ws, log);
  else if (stage == "build-graph") stage_build_graph(ws, log);
  else if (stage == "train-hgnn") stage_train_hgnn(ws);
  else if (stage == "embed") stage_embed(ws);
  else if (stage == "train-2t") stage_train_2t(ws, log);
  else if (stage == "build-index") stage_build_index(ws, log);
  else if (stage == "recommend") stage_recommend(ws, options, out, log);
  else if (stage == "evaluate") stage_evaluate(ws, log);
  else if (stage == "ablate") stage_ablate(ws, log);
  else if (stage == "weak-signals") stage_weak_signals(ws, log);
  else if (stage == "probe") stage_probe(ws);

  if (stage == "recommend") return;
  write_text(ws.at("config.json"), json(to_json(config)).dump(2) + "\n");
  write_manifest(ws, stage);
}

}  // namespace rec
