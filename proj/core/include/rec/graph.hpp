#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "rec/common.hpp"
#include "rec/data.hpp"

namespace rec {

enum class Relation : std::uint8_t { aa = 0, ap = 1, pp = 2 };
inline constexpr std::size_t kNumRelations = 3;
inline constexpr std::array<Relation, kNumRelations> kRelations{Relation::aa, Relation::ap, Relation::pp};

std::string_view to_string(Relation r);
std::optional<Relation> parse_relation(std::string_view s);
Relation relation_between(ItemType a, ItemType b);
bool is_incident(Relation r, ItemType t);
/// The endpoint type reached from a node of type `from` through `r`.
ItemType neighbor_type(Relation r, ItemType from);

using NodeId = std::uint32_t;

/// Undirected edge with u < v.
struct Edge {
  NodeId u = 0;
  NodeId v = 0;
  auto operator<=>(const Edge&) const = default;
};

using EdgeSets = std::array<std::vector<Edge>, kNumRelations>;
using RelationMask = std::array<bool, kNumRelations>;

/// Co-listening graph over catalog items. Node ids are global: audiobooks
/// occupy [0, n_audiobooks), podcasts follow; each block is sorted by item_id.
class HeteroGraph {
 public:
  HeteroGraph() = default;

  /// `features` holds one column per node in global-id order.
  HeteroGraph(std::array<std::vector<std::string>, kNumItemTypes> ids, Mat features, EdgeSets edges);

  std::size_t num_nodes() const noexcept { return type_offset_[kNumItemTypes]; }
  std::size_t num_nodes(ItemType t) const noexcept {
    return ids_[static_cast<std::size_t>(t)].size();
  }
  std::size_t feature_dim() const noexcept { return static_cast<std::size_t>(features_.rows()); }

  ItemType type_of(NodeId g) const noexcept {
    return g < type_offset_[1] ? ItemType::audiobook : ItemType::podcast;
  }
  std::uint32_t local_index(NodeId g) const noexcept {
    return g - static_cast<NodeId>(type_offset_[static_cast<std::size_t>(type_of(g))]);
  }
  NodeId global_id(ItemType t, std::uint32_t local) const noexcept {
    return static_cast<NodeId>(type_offset_[static_cast<std::size_t>(t)] + local);
  }
  const std::string& item_id(NodeId g) const { return ids_[static_cast<std::size_t>(type_of(g))][local_index(g)]; }
  const std::vector<std::string>& ids(ItemType t) const { return ids_[static_cast<std::size_t>(t)]; }
  std::optional<NodeId> find(std::string_view item_id) const;

  const Mat& features() const noexcept { return features_; }
  auto features(NodeId g) const { return features_.col(static_cast<Eigen::Index>(g)); }

  /// Sorted neighbors of `g` through `r`; empty when `r` is not incident to g's type.
  std::span<const NodeId> neighbors(NodeId g, Relation r) const;
  std::size_t degree(NodeId g) const;
  bool has_edge(NodeId a, NodeId b) const;

  const std::vector<Edge>& edges(Relation r) const { return edges_[static_cast<std::size_t>(r)]; }
  std::size_t num_edges(Relation r) const { return edges(r).size(); }
  std::size_t num_edges() const;
  const EdgeSets& edge_sets() const noexcept { return edges_; }

  /// Same nodes and features, different edges.
  HeteroGraph with_edges(EdgeSets edges) const;
  /// Drops every relation whose mask entry is false.
  HeteroGraph with_relations(const RelationMask& keep) const;

  bool operator==(const HeteroGraph& other) const;

 private:
  std::array<std::vector<std::string>, kNumItemTypes> ids_;
  std::array<std::size_t, kNumItemTypes + 1> type_offset_{0, 0, 0};
  Mat features_;
  EdgeSets edges_;
  // One CSR per relation over all global nodes.
  std::array<std::vector<std::uint32_t>, kNumRelations> offsets_;
  std::array<std::vector<NodeId>, kNumRelations> targets_;
};

struct GraphBuildOptions {
  std::size_t min_co_users = 1;
  // Widen edge evidence from streams to every signal type.
  bool all_signals = false;
  RelationMask relations{true, true, true};
};

/// Every catalog item becomes a node; items never streamed stay isolated.
HeteroGraph build_colisten_graph(const std::vector<InteractionRecord>& train, const Catalog& catalog,
                                 const GraphBuildOptions& options = {});

struct DegreeSummary {
  std::size_t min = 0;
  double mean = 0.0;
  std::size_t max = 0;
};

struct GraphStats {
  std::array<std::size_t, kNumItemTypes> nodes{};
  std::array<std::size_t, kNumRelations> edges{};
  std::array<DegreeSummary, kNumRelations> degree{};
};

GraphStats graph_stats(const HeteroGraph& graph);
nlohmann::json to_json(const GraphStats& stats);

std::string serialize_graph(const HeteroGraph& graph);
HeteroGraph deserialize_graph(std::string bytes);
void save_graph(const std::string& path, const HeteroGraph& graph);
HeteroGraph load_graph(const std::string& path);

/// Holds out round(fraction * |E_r|) edges of each relation.
struct EdgeHoldout {
  HeteroGraph train;
  EdgeSets validation;
};
EdgeHoldout split_validation_edges(const HeteroGraph& graph, double fraction, Rng& rng);

}  // namespace rec
