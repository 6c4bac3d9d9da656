#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "rec/common.hpp"
#include "rec/graph.hpp"

namespace rec {

struct HgnnConfig {
  int layers = 2;
  int hidden_dim = 64;
  int output_dim = 64;
  double margin = 0.4;
  // fanouts[k] caps the neighbors sampled per relation for layer k + 1.
  std::vector<int> fanouts{15, 10};
  int negatives = 10;
  double learning_rate = 1e-3;
  int batch_size = 256;
  int max_epochs = 50;
  int patience = 10;
  double validation_fraction = 0.1;
  bool balanced_sampler = true;
  // embed_all uses every neighbor up to this degree, a seeded sample above it.
  int inference_degree_cap = 256;
  std::uint64_t inference_seed = 20240401;

  void validate() const;
};

void to_json(nlohmann::json& j, const HgnnConfig& c);
void from_json(const nlohmann::json& j, HgnnConfig& c);

/// Weights of one message-passing layer.
struct HgnnLayer {
  std::array<Mat, kNumRelations> relation_weight;  // out x in, one per relation
  std::array<Vec, kNumRelations> relation_bias;
  std::array<Mat, kNumItemTypes> self_weight;      // out x in, one per node type
};

struct HgnnParams {
  HgnnConfig config;
  std::size_t input_dim = 0;
  std::vector<HgnnLayer> layers;

  std::size_t output_dim() const;
  std::vector<std::span<double>> blocks();
  std::vector<std::span<const double>> blocks() const;
  HgnnParams zeros_like() const;
  std::string checksum() const;
  bool operator==(const HgnnParams& other) const;
};

HgnnParams init_hgnn_params(const HgnnConfig& config, std::size_t input_dim, Rng& rng);

std::string serialize_hgnn(const HgnnParams& params);
HgnnParams deserialize_hgnn(std::string bytes);
void save_hgnn(const std::string& path, const HgnnParams& params);
HgnnParams load_hgnn(const std::string& path);

// ---- single-node operators (layer indices are 0-based) ----

/// Elementwise max over relu(W_r h + b_r); the zero vector for no neighbors.
Vec aggregate_relation(const HgnnParams& params, std::size_t layer, Relation r,
                       std::span<const Vec> neighbor_states);

/// relu(W_self h_prev + sum of pooled vectors). `pooled` must hold every
/// relation incident to `type`.
Vec update_node(const HgnnParams& params, std::size_t layer, ItemType type, const Vec& h_prev,
                const std::map<Relation, Vec>& pooled);

/// Mean over negatives of max(0, z_a.z_n - z_a.z_p + margin).
double hinge_loss(const Vec& z_a, const Vec& z_p, std::span<const Vec> z_negs, double margin);

// ---- sampling ----

struct LayerSample {
  std::vector<NodeId> targets;  // sorted, unique
  std::vector<std::array<std::vector<NodeId>, kNumRelations>> neighbors;  // aligned to targets
};

/// Computation graph for a set of seed nodes. layers[k] lists the nodes
/// whose layer-(k+1) state is computed and the neighbors each one pools
/// from; layers.back().targets are the seeds and layers[k].targets is the
/// union of layers[k+1]'s targets and neighbors.
struct SampledNeighborhood {
  std::vector<NodeId> seeds;
  std::vector<LayerSample> layers;

  /// Nodes whose raw features enter layer 1.
  std::vector<NodeId> input_nodes() const;
};

SampledNeighborhood sample_neighborhood(const HeteroGraph& graph, NodeId node, std::span<const int> fanouts,
                                        Rng& rng);
SampledNeighborhood sample_block(const HeteroGraph& graph, std::span<const NodeId> seeds,
                                 std::span<const int> fanouts, Rng& rng);

struct RelationEdge {
  Edge edge;
  Relation relation;
  auto operator<=>(const RelationEdge&) const = default;
};

/// N = smallest non-zero relation size; N edges drawn without replacement
/// from every non-empty relation.
std::vector<RelationEdge> balanced_edge_sample(const EdgeSets& edges, Rng& rng);
std::vector<RelationEdge> balanced_edge_sample(const HeteroGraph& graph, Rng& rng);

/// Uniform draws (with replacement) over all nodes, rejecting the anchor
/// and its neighbors.
std::vector<NodeId> sample_negatives(const HeteroGraph& graph, NodeId anchor, int n_neg, Rng& rng);

// ---- forward / backward ----

struct BlockEmbeddings {
  std::vector<NodeId> nodes;         // == neighborhood seeds
  Mat z;                             // output_dim x nodes.size(), unit columns
  std::vector<bool> degenerate;      // ||h|| < 1e-12, replaced by e_0

  Eigen::Index position(NodeId g) const;
};

BlockEmbeddings forward(const HeteroGraph& graph, const HgnnParams& params, const SampledNeighborhood& block);

struct TrainingTriple {
  NodeId anchor = 0;
  NodeId positive = 0;
  std::vector<NodeId> negatives;
};

/// Mean hinge loss over triples whose nodes are all seeds of `block`.
/// Accumulates the exact gradient into `grad` when it is non-null.
double hgnn_loss(const HeteroGraph& graph, const HgnnParams& params, const SampledNeighborhood& block,
                 std::span<const TrainingTriple> triples, HgnnParams* grad);

// ---- training and inference ----

struct NodeEmbeddingTable {
  std::vector<std::string> ids;       // global node order
  std::vector<ItemType> types;
  Mat z;                              // dim x ids.size()
  std::vector<bool> degenerate;
  std::vector<bool> isolated;         // no neighbors: content-only (inductive) path
  std::map<std::string, std::size_t> index;

  std::size_t dim() const { return static_cast<std::size_t>(z.rows()); }
  std::size_t size() const { return ids.size(); }
  std::optional<std::size_t> index_of(const std::string& item_id) const;
  void rebuild_index();
  bool operator==(const NodeEmbeddingTable& other) const;
};

NodeEmbeddingTable embed_all(const HeteroGraph& graph, const HgnnParams& params);

/// Embedding of an item seen only through its content vector.
Vec embed_content_only(const HgnnParams& params, ItemType type, const Vec& content);

std::string serialize_embeddings(const NodeEmbeddingTable& table);
NodeEmbeddingTable parse_embeddings(std::string_view text);
void write_embeddings(const std::string& path, const NodeEmbeddingTable& table);
NodeEmbeddingTable read_embeddings(const std::string& path);

struct EpochLog {
  int epoch = 0;
  double train_loss = 0.0;
  double validation_loss = 0.0;
  double wall_seconds = 0.0;
  std::array<std::size_t, kNumRelations> sampled_edges{};
};

nlohmann::json to_json(const EpochLog& log);

struct HgnnTrainResult {
  HgnnParams params;  // best by validation loss
  NodeEmbeddingTable embeddings;
  std::vector<EpochLog> log;
  int best_epoch = 0;
};

/// Holds out config.validation_fraction of the edges, trains on the rest
/// with Adam, keeps the best parameters and embeds the full graph.
HgnnTrainResult train_hgnn(const HeteroGraph& graph, const HgnnParams& init, std::uint64_t seed);

}  // namespace rec
