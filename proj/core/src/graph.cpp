#include "rec/graph.hpp"

#include <algorithm>
#include <map>
#include <set>
#include <fstream>
#include <unordered_map>

#include <nlohmann/json.hpp>

#include "rec/binio.hpp"

namespace rec {

std::string_view to_string(Relation r) {
  switch (r) {
    case Relation::aa: return "aa";
    case Relation::ap: return "ap";
    case Relation::pp: return "pp";
  }
  return "aa";
}

std::optional<Relation> parse_relation(std::string_view s) {
  if (s == "aa") return Relation::aa;
  if (s == "ap") return Relation::ap;
  if (s == "pp") return Relation::pp;
  return std::nullopt;
}

Relation relation_between(ItemType a, ItemType b) {
  if (a != b) return Relation::ap;
  return a == ItemType::audiobook ? Relation::aa : Relation::pp;
}

bool is_incident(Relation r, ItemType t) {
  switch (r) {
    case Relation::aa: return t == ItemType::audiobook;
    case Relation::pp: return t == ItemType::podcast;
    case Relation::ap: return true;
  }
  return false;
}

ItemType neighbor_type(Relation r, ItemType from) {
  switch (r) {
    case Relation::aa: return ItemType::audiobook;
    case Relation::pp: return ItemType::podcast;
    case Relation::ap: return from == ItemType::audiobook ? ItemType::podcast : ItemType::audiobook;
  }
  return from;
}

HeteroGraph::HeteroGraph(std::array<std::vector<std::string>, kNumItemTypes> ids, Mat features,
                         EdgeSets edges)
    : ids_(std::move(ids)), features_(std::move(features)), edges_(std::move(edges)) {
  type_offset_[0] = 0;
  type_offset_[1] = ids_[0].size();
  type_offset_[2] = ids_[0].size() + ids_[1].size();
  const auto n = num_nodes();
  if (static_cast<std::size_t>(features_.cols()) != n)
    throw Error(ErrorKind::validation, "graph: feature columns do not match node count");
  for (std::size_t t = 0; t < kNumItemTypes; ++t)
    if (!std::is_sorted(ids_[t].begin(), ids_[t].end()) ||
        std::adjacent_find(ids_[t].begin(), ids_[t].end()) != ids_[t].end())
      throw Error(ErrorKind::validation, "graph: node ids must be unique and sorted");

  for (auto r : kRelations) {
    const auto ri = static_cast<std::size_t>(r);
    auto& list = edges_[ri];
    std::sort(list.begin(), list.end());
    if (std::adjacent_find(list.begin(), list.end()) != list.end())
      throw Error(ErrorKind::validation, "graph: duplicate edge in relation " + std::string(to_string(r)));
    std::vector<std::uint32_t> deg(n + 1, 0);
    for (const auto& e : list) {
      if (e.u >= e.v || e.v >= n)
        throw Error(ErrorKind::validation, "graph: edge endpoints must satisfy u < v < num_nodes");
      if (relation_between(type_of(e.u), type_of(e.v)) != r)
        throw Error(ErrorKind::validation, "graph: edge stored under the wrong relation");
      ++deg[e.u + 1];
      ++deg[e.v + 1];
    }
    for (std::size_t i = 0; i < n; ++i) deg[i + 1] += deg[i];
    offsets_[ri] = deg;
    targets_[ri].assign(deg[n], 0);
    std::vector<std::uint32_t> fill(deg.begin(), deg.end() - 1);
    for (const auto& e : list) {
      targets_[ri][fill[e.u]++] = e.v;
      targets_[ri][fill[e.v]++] = e.u;
    }
    for (std::size_t i = 0; i < n; ++i)
      std::sort(targets_[ri].begin() + offsets_[ri][i], targets_[ri].begin() + offsets_[ri][i + 1]);
  }
}

std::optional<NodeId> HeteroGraph::find(std::string_view item_id) const {
  for (std::size_t t = 0; t < kNumItemTypes; ++t) {
    auto it = std::lower_bound(ids_[t].begin(), ids_[t].end(), item_id);
    if (it != ids_[t].end() && *it == item_id)
      return static_cast<NodeId>(type_offset_[t] + static_cast<std::size_t>(it - ids_[t].begin()));
  }
  return std::nullopt;
}

std::span<const NodeId> HeteroGraph::neighbors(NodeId g, Relation r) const {
  const auto ri = static_cast<std::size_t>(r);
  if (offsets_[ri].empty()) return {};
  return std::span<const NodeId>(targets_[ri]).subspan(offsets_[ri][g], offsets_[ri][g + 1] - offsets_[ri][g]);
}

std::size_t HeteroGraph::degree(NodeId g) const {
  std::size_t d = 0;
  for (auto r : kRelations) d += neighbors(g, r).size();
  return d;
}

bool HeteroGraph::has_edge(NodeId a, NodeId b) const {
  if (a >= num_nodes() || b >= num_nodes()) return false;
  auto nb = neighbors(a, relation_between(type_of(a), type_of(b)));
  return std::binary_search(nb.begin(), nb.end(), b);
}

std::size_t HeteroGraph::num_edges() const {
  std::size_t n = 0;
  for (const auto& l : edges_) n += l.size();
  return n;
}

HeteroGraph HeteroGraph::with_edges(EdgeSets edges) const { return HeteroGraph(ids_, features_, std::move(edges)); }

HeteroGraph HeteroGraph::with_relations(const RelationMask& keep) const {
  EdgeSets edges;
  for (std::size_t r = 0; r < kNumRelations; ++r)
    if (keep[r]) edges[r] = edges_[r];
  return with_edges(std::move(edges));
}

bool HeteroGraph::operator==(const HeteroGraph& other) const {
  return ids_ == other.ids_ && features_.rows() == other.features_.rows() &&
         features_.cols() == other.features_.cols() && features_ == other.features_ && edges_ == other.edges_;
}

HeteroGraph build_colisten_graph(const std::vector<InteractionRecord>& train, const Catalog& catalog,
                                 const GraphBuildOptions& options) {
  if (train.empty()) throw Error(ErrorKind::validation, "build_colisten_graph: empty train window");
  if (options.min_co_users < 1) throw Error(ErrorKind::validation, "build_colisten_graph: min_co_users must be >= 1");

  std::array<std::vector<std::string>, kNumItemTypes> ids;
  for (const auto& [id, item] : catalog) ids[static_cast<std::size_t>(item.item_type)].push_back(id);
  const std::size_t n = ids[0].size() + ids[1].size();
  const auto dim = content_dim(catalog);
  Mat features(static_cast<Eigen::Index>(dim), static_cast<Eigen::Index>(n));
  std::map<std::string_view, NodeId> node_of;
  {
    NodeId g = 0;
    for (const auto& list : ids)
      for (const auto& id : list) {
        const auto& cv = catalog.at(id).content_vector;
        for (std::size_t k = 0; k < dim; ++k) features(static_cast<Eigen::Index>(k), g) = cv[k];
        node_of.emplace(id, g++);
      }
  }

  std::map<std::string_view, std::set<NodeId>> per_user;
  for (const auto& r : train) {
    auto it = node_of.find(r.item_id);
    if (it == node_of.end())
      throw Error(ErrorKind::validation, "build_colisten_graph: item '" + r.item_id + "' (user '" + r.user_id +
                                             "', t=" + std::to_string(r.timestamp) + ") is not in the catalog");
    if (catalog.at(r.item_id).item_type != r.item_type)
      throw Error(ErrorKind::validation, "build_colisten_graph: item '" + r.item_id + "' has type " +
                                             std::string(to_string(r.item_type)) + " in the log but not in the catalog");
    if (options.all_signals || r.signal == Signal::stream) per_user[r.user_id].insert(it->second);
  }

  std::unordered_map<std::uint64_t, std::uint32_t> support;
  for (const auto& [user, items] : per_user) {
    std::vector<NodeId> v(items.begin(), items.end());
    for (std::size_t i = 0; i < v.size(); ++i)
      for (std::size_t j = i + 1; j < v.size(); ++j)
        ++support[(static_cast<std::uint64_t>(v[i]) << 32) | v[j]];
  }

  const auto n_audio = ids[0].size();
  auto type_of = [&](NodeId g) { return g < n_audio ? ItemType::audiobook : ItemType::podcast; };
  EdgeSets edges;
  for (const auto& [key, count] : support) {
    if (count < options.min_co_users) continue;
    Edge e{static_cast<NodeId>(key >> 32), static_cast<NodeId>(key & 0xffffffffu)};
    const auto r = relation_between(type_of(e.u), type_of(e.v));
    if (options.relations[static_cast<std::size_t>(r)]) edges[static_cast<std::size_t>(r)].push_back(e);
  }
  return HeteroGraph(std::move(ids), std::move(features), std::move(edges));
}

GraphStats graph_stats(const HeteroGraph& graph) {
  GraphStats s;
  s.nodes = {graph.num_nodes(ItemType::audiobook), graph.num_nodes(ItemType::podcast)};
  for (auto r : kRelations) {
    const auto ri = static_cast<std::size_t>(r);
    s.edges[ri] = graph.num_edges(r);
    std::size_t count = 0, total = 0, lo = 0, hi = 0;
    for (NodeId g = 0; g < graph.num_nodes(); ++g) {
      if (!is_incident(r, graph.type_of(g))) continue;
      const auto d = graph.neighbors(g, r).size();
      lo = count == 0 ? d : std::min(lo, d);
      hi = std::max(hi, d);
      total += d;
      ++count;
    }
    s.degree[ri] = {lo, count ? static_cast<double>(total) / static_cast<double>(count) : 0.0, hi};
  }
  return s;
}

namespace {
constexpr std::string_view kGraphMagic = "RGPH";
constexpr std::uint32_t kGraphVersion = 1;
}  // namespace

std::string serialize_graph(const HeteroGraph& graph) {
  binio::Writer w(kGraphMagic, kGraphVersion);
  w.strings(graph.ids(ItemType::audiobook));
  w.strings(graph.ids(ItemType::podcast));
  w.matrix(graph.features());
  for (auto r : kRelations) {
    std::vector<std::uint32_t> flat;
    for (const auto& e : graph.edges(r)) {
      flat.push_back(e.u);
      flat.push_back(e.v);
    }
    w.u32s(flat);
  }
  return w.bytes();
}

HeteroGraph deserialize_graph(std::string bytes) {
  binio::Reader r(std::move(bytes), kGraphMagic, kGraphVersion);
  std::array<std::vector<std::string>, kNumItemTypes> ids;
  ids[0] = r.strings();
  ids[1] = r.strings();
  Mat features = r.matrix();
  EdgeSets edges;
  for (auto& list : edges) {
    auto flat = r.u32s();
    if (flat.size() % 2) throw Error(ErrorKind::parse, "graph file: odd edge array");
    for (std::size_t i = 0; i < flat.size(); i += 2) list.push_back({flat[i], flat[i + 1]});
  }
  if (!r.at_end()) throw Error(ErrorKind::parse, "graph file: trailing bytes");
  return HeteroGraph(std::move(ids), std::move(features), std::move(edges));
}

void save_graph(const std::string& path, const HeteroGraph& graph) {
  const auto bytes = serialize_graph(graph);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::io, "cannot write " + path);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

HeteroGraph load_graph(const std::string& path) { return deserialize_graph(read_file(path)); }

EdgeHoldout split_validation_edges(const HeteroGraph& graph, double fraction, Rng& rng) {
  if (fraction < 0.0 || fraction >= 1.0)
    throw Error(ErrorKind::validation, "validation fraction must lie in [0, 1)");
  EdgeSets train, val;
  for (auto r : kRelations) {
    auto list = graph.edges(r);
    std::shuffle(list.begin(), list.end(), rng);
    const auto n_val = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(list.size())));
    const auto ri = static_cast<std::size_t>(r);
    val[ri].assign(list.begin(), list.begin() + static_cast<std::ptrdiff_t>(n_val));
    train[ri].assign(list.begin() + static_cast<std::ptrdiff_t>(n_val), list.end());
    std::sort(val[ri].begin(), val[ri].end());
  }
  return {graph.with_edges(std::move(train)), std::move(val)};
}

nlohmann::json to_json(const GraphStats& stats) {
  nlohmann::json j;
  j["nodes"] = {{"audiobook", stats.nodes[0]}, {"podcast", stats.nodes[1]}};
  for (auto r : kRelations) {
    const auto ri = static_cast<std::size_t>(r);
    j["edges"][std::string(to_string(r))] = stats.edges[ri];
    j["degree"][std::string(to_string(r))] = {
        {"min", stats.degree[ri].min}, {"mean", stats.degree[ri].mean}, {"max", stats.degree[ri].max}};
  }
  return j;
}

}  // namespace rec
