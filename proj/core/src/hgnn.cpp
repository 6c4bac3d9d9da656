#include "rec/hgnn.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <fstream>
#include <set>
#include <utility>

#include <nlohmann/json.hpp>

#include "rec/binio.hpp"

namespace rec {

using nlohmann::json;

#define REC_HGNN_FIELDS(X)                                                                        \
  X(layers) X(hidden_dim) X(output_dim) X(margin) X(fanouts) X(negatives) X(learning_rate)        \
  X(batch_size) X(max_epochs) X(patience) X(validation_fraction) X(balanced_sampler)              \
  X(inference_degree_cap) X(inference_seed)

void to_json(json& j, const HgnnConfig& c) {
  j = json::object();
#define X(f) j[#f] = c.f;
  REC_HGNN_FIELDS(X)
#undef X
}

void from_json(const json& j, HgnnConfig& c) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool known = false;
#define X(f) if (it.key() == #f) { it.value().get_to(c.f); known = true; }
    REC_HGNN_FIELDS(X)
#undef X
    if (!known) throw Error(ErrorKind::validation, "hgnn config: unknown field '" + it.key() + "'");
  }
}

#undef REC_HGNN_FIELDS

void HgnnConfig::validate() const {
  auto fail = [](const std::string& m) { throw Error(ErrorKind::validation, "hgnn config: " + m); };
  if (layers < 1) fail("layers must be >= 1");
  if (hidden_dim < 1 || output_dim < 1) fail("dimensions must be positive");
  if (fanouts.size() != static_cast<std::size_t>(layers)) fail("need one fanout per layer");
  for (int f : fanouts)
    if (f < 1) fail("fanouts must be positive");
  if (margin < 0) fail("margin must be >= 0");
  if (negatives < 1) fail("negatives must be >= 1");
  if (learning_rate <= 0) fail("learning_rate must be positive");
  if (batch_size < 1 || max_epochs < 1 || patience < 1) fail("batch_size, max_epochs and patience must be positive");
  if (validation_fraction < 0 || validation_fraction >= 1) fail("validation_fraction must lie in [0, 1)");
  if (inference_degree_cap < 1) fail("inference_degree_cap must be positive");
}

// ---------------------------------------------------------------- params

std::size_t HgnnParams::output_dim() const {
  return layers.empty() ? 0 : static_cast<std::size_t>(layers.back().self_weight[0].rows());
}

std::vector<std::span<double>> HgnnParams::blocks() {
  std::vector<std::span<double>> out;
  for (auto& L : layers) {
    for (auto& w : L.relation_weight) out.push_back(as_span(w));
    for (auto& b : L.relation_bias) out.push_back(as_span(b));
    for (auto& w : L.self_weight) out.push_back(as_span(w));
  }
  return out;
}

std::vector<std::span<const double>> HgnnParams::blocks() const {
  std::vector<std::span<const double>> out;
  for (const auto& L : layers) {
    for (const auto& w : L.relation_weight) out.push_back(as_span(w));
    for (const auto& b : L.relation_bias) out.push_back(as_span(b));
    for (const auto& w : L.self_weight) out.push_back(as_span(w));
  }
  return out;
}

HgnnParams HgnnParams::zeros_like() const {
  HgnnParams z = *this;
  for (auto b : z.blocks()) std::fill(b.begin(), b.end(), 0.0);
  return z;
}

std::string HgnnParams::checksum() const {
  Fnv1a h;
  for (auto b : blocks()) h.update(b);
  return h.hex();
}

bool HgnnParams::operator==(const HgnnParams& other) const {
  if (input_dim != other.input_dim || layers.size() != other.layers.size()) return false;
  auto a = blocks();
  auto b = other.blocks();
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a[i].size() != b[i].size() || !std::equal(a[i].begin(), a[i].end(), b[i].begin())) return false;
  return json(config) == json(other.config);
}

HgnnParams init_hgnn_params(const HgnnConfig& config, std::size_t input_dim, Rng& rng) {
  config.validate();
  if (input_dim == 0) throw Error(ErrorKind::validation, "hgnn: input dimension must be positive");
  HgnnParams p;
  p.config = config;
  p.input_dim = input_dim;
  auto in = static_cast<Eigen::Index>(input_dim);
  for (int k = 0; k < config.layers; ++k) {
    const auto out = static_cast<Eigen::Index>(k + 1 == config.layers ? config.output_dim : config.hidden_dim);
    HgnnLayer L;
    for (std::size_t r = 0; r < kNumRelations; ++r) {
      L.relation_weight[r].resize(out, in);
      glorot_uniform(L.relation_weight[r], rng);
      L.relation_bias[r] = Vec::Zero(out);
    }
    for (std::size_t t = 0; t < kNumItemTypes; ++t) {
      L.self_weight[t].resize(out, in);
      glorot_uniform(L.self_weight[t], rng);
    }
    p.layers.push_back(std::move(L));
    in = out;
  }
  return p;
}

namespace {
constexpr std::string_view kHgnnMagic = "RHGN";
constexpr std::uint32_t kHgnnVersion = 1;
}  // namespace

std::string serialize_hgnn(const HgnnParams& params) {
  binio::Writer w(kHgnnMagic, kHgnnVersion);
  w.str(json(params.config).dump());
  w.u64(params.input_dim);
  w.u64(params.layers.size());
  for (const auto& L : params.layers) {
    for (const auto& m : L.relation_weight) w.matrix(m);
    for (const auto& b : L.relation_bias) w.vector(b);
    for (const auto& m : L.self_weight) w.matrix(m);
  }
  return w.bytes();
}

HgnnParams deserialize_hgnn(std::string bytes) {
  binio::Reader r(std::move(bytes), kHgnnMagic, kHgnnVersion);
  HgnnParams p;
  p.config = json::parse(r.str()).get<HgnnConfig>();
  p.input_dim = r.u64();
  const auto n = r.u64();
  if (n != static_cast<std::uint64_t>(p.config.layers))
    throw Error(ErrorKind::parse, "hgnn checkpoint: layer count disagrees with config");
  auto in = static_cast<Eigen::Index>(p.input_dim);
  for (std::uint64_t k = 0; k < n; ++k) {
    HgnnLayer L;
    for (auto& m : L.relation_weight) m = r.matrix();
    for (auto& b : L.relation_bias) b = r.vector();
    for (auto& m : L.self_weight) m = r.matrix();
    const auto out = L.self_weight[0].rows();
    for (const auto& m : L.relation_weight)
      if (m.rows() != out || m.cols() != in) throw Error(ErrorKind::parse, "hgnn checkpoint: shape mismatch");
    for (const auto& m : L.self_weight)
      if (m.rows() != out || m.cols() != in) throw Error(ErrorKind::parse, "hgnn checkpoint: shape mismatch");
    for (const auto& b : L.relation_bias)
      if (b.size() != out) throw Error(ErrorKind::parse, "hgnn checkpoint: shape mismatch");
    p.layers.push_back(std::move(L));
    in = out;
  }
  if (!r.at_end()) throw Error(ErrorKind::parse, "hgnn checkpoint: trailing bytes");
  return p;
}

void save_hgnn(const std::string& path, const HgnnParams& params) {
  auto bytes = serialize_hgnn(params);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::io, "cannot write " + path);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

HgnnParams load_hgnn(const std::string& path) { return deserialize_hgnn(read_file(path)); }

// ---------------------------------------------------------------- operators

namespace {

inline double relu(double x) { return x > 0.0 ? x : 0.0; }

void relu_inplace(Vec& v) {
  for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = relu(v(i));
}

// Shared by the single-node operators and the batched forward pass so that
// both evaluate in the same floating-point order.
Vec message_preactivation(const HgnnLayer& L, Relation r, const Vec& h) {
  const auto ri = static_cast<std::size_t>(r);
  Vec m = L.relation_weight[ri] * h;
  m += L.relation_bias[ri];
  return m;
}

Vec self_term(const HgnnLayer& L, ItemType t, const Vec& h) {
  Vec m = L.self_weight[static_cast<std::size_t>(t)] * h;
  return m;
}

const HgnnLayer& layer_at(const HgnnParams& params, std::size_t layer) {
  if (layer >= params.layers.size())
    throw Error(ErrorKind::validation, "hgnn: layer index " + std::to_string(layer) + " out of range");
  return params.layers[layer];
}

void normalize_into(const Vec& h, Eigen::Ref<Vec> z, bool& degenerate, double& norm) {
  norm = h.norm();
  if (norm < 1e-12) {
    z.setZero();
    z(0) = 1.0;
    degenerate = true;
  } else {
    z = h / norm;
    degenerate = false;
  }
}

}  // namespace

Vec aggregate_relation(const HgnnParams& params, std::size_t layer, Relation r,
                       std::span<const Vec> neighbor_states) {
  const auto& L = layer_at(params, layer);
  const auto ri = static_cast<std::size_t>(r);
  const auto out = L.relation_weight[ri].rows();
  Vec pooled = Vec::Zero(out);
  bool first = true;
  for (const auto& h : neighbor_states) {
    if (h.size() != L.relation_weight[ri].cols())
      throw Error(ErrorKind::validation, "aggregate_relation: neighbor state has dimension " +
                                             std::to_string(h.size()) + ", expected " +
                                             std::to_string(L.relation_weight[ri].cols()));
    Vec m = message_preactivation(L, r, h);
    for (Eigen::Index i = 0; i < out; ++i) {
      const double v = relu(m(i));
      if (first || v > pooled(i)) pooled(i) = v;
    }
    first = false;
  }
  return pooled;
}

Vec update_node(const HgnnParams& params, std::size_t layer, ItemType type, const Vec& h_prev,
                const std::map<Relation, Vec>& pooled) {
  const auto& L = layer_at(params, layer);
  const auto& W = L.self_weight[static_cast<std::size_t>(type)];
  if (h_prev.size() != W.cols()) throw Error(ErrorKind::validation, "update_node: h_prev dimension mismatch");
  Vec pre = self_term(L, type, h_prev);
  for (auto r : kRelations) {
    if (!is_incident(r, type)) continue;
    auto it = pooled.find(r);
    if (it == pooled.end())
      throw Error(ErrorKind::validation, "update_node: missing pooled entry for relation " + std::string(to_string(r)));
    if (it->second.size() != pre.size()) throw Error(ErrorKind::validation, "update_node: pooled dimension mismatch");
    pre += it->second;
  }
  relu_inplace(pre);
  return pre;
}

double hinge_loss(const Vec& z_a, const Vec& z_p, std::span<const Vec> z_negs, double margin) {
  if (z_negs.empty()) throw Error(ErrorKind::validation, "hinge_loss: no negatives");
  if (margin < 0) throw Error(ErrorKind::validation, "hinge_loss: negative margin");
  const double pos = z_a.dot(z_p);
  double total = 0.0;
  for (const auto& z_n : z_negs) total += std::max(0.0, z_a.dot(z_n) - pos + margin);
  return total / static_cast<double>(z_negs.size());
}

// ---------------------------------------------------------------- sampling

std::vector<NodeId> SampledNeighborhood::input_nodes() const {
  if (layers.empty()) return seeds;
  const auto& first = layers.front();
  std::vector<NodeId> nodes = first.targets;
  for (const auto& per_rel : first.neighbors)
    for (const auto& list : per_rel) nodes.insert(nodes.end(), list.begin(), list.end());
  std::sort(nodes.begin(), nodes.end());
  nodes.erase(std::unique(nodes.begin(), nodes.end()), nodes.end());
  return nodes;
}

SampledNeighborhood sample_block(const HeteroGraph& graph, std::span<const NodeId> seeds,
                                 std::span<const int> fanouts, Rng& rng) {
  SampledNeighborhood block;
  block.seeds.assign(seeds.begin(), seeds.end());
  std::sort(block.seeds.begin(), block.seeds.end());
  block.seeds.erase(std::unique(block.seeds.begin(), block.seeds.end()), block.seeds.end());
  for (auto g : block.seeds)
    if (g >= graph.num_nodes()) throw Error(ErrorKind::validation, "sample_block: node out of range");
  for (int f : fanouts)
    if (f < 1) throw Error(ErrorKind::validation, "sample_block: fanouts must be positive");

  block.layers.resize(fanouts.size());
  std::vector<NodeId> targets = block.seeds;
  for (std::size_t k = fanouts.size(); k-- > 0;) {
    auto& L = block.layers[k];
    L.targets = targets;
    L.neighbors.resize(targets.size());
    const auto fanout = static_cast<std::size_t>(fanouts[k]);
    std::vector<NodeId> next = targets;
    for (std::size_t i = 0; i < targets.size(); ++i) {
      for (auto r : kRelations) {
        auto nb = graph.neighbors(targets[i], r);
        auto& out = L.neighbors[i][static_cast<std::size_t>(r)];
        if (nb.size() <= fanout)
          out.assign(nb.begin(), nb.end());
        else
          std::sample(nb.begin(), nb.end(), std::back_inserter(out), fanout, rng);
        next.insert(next.end(), out.begin(), out.end());
      }
    }
    std::sort(next.begin(), next.end());
    next.erase(std::unique(next.begin(), next.end()), next.end());
    targets = std::move(next);
  }
  return block;
}

SampledNeighborhood sample_neighborhood(const HeteroGraph& graph, NodeId node, std::span<const int> fanouts,
                                        Rng& rng) {
  const NodeId seeds[] = {node};
  return sample_block(graph, seeds, fanouts, rng);
}

std::vector<RelationEdge> balanced_edge_sample(const EdgeSets& edges, Rng& rng) {
  std::size_t n = std::numeric_limits<std::size_t>::max();
  for (const auto& list : edges)
    if (!list.empty()) n = std::min(n, list.size());
  if (n == std::numeric_limits<std::size_t>::max())
    throw Error(ErrorKind::validation, "balanced_edge_sample: graph has no edges");
  std::vector<RelationEdge> out;
  for (auto r : kRelations) {
    const auto& list = edges[static_cast<std::size_t>(r)];
    if (list.empty()) continue;
    std::vector<Edge> picked;
    std::sample(list.begin(), list.end(), std::back_inserter(picked), n, rng);
    for (const auto& e : picked) out.push_back({e, r});
  }
  return out;
}

std::vector<RelationEdge> balanced_edge_sample(const HeteroGraph& graph, Rng& rng) {
  return balanced_edge_sample(graph.edge_sets(), rng);
}

std::vector<NodeId> sample_negatives(const HeteroGraph& graph, NodeId anchor, int n_neg, Rng& rng) {
  if (n_neg < 1) throw Error(ErrorKind::validation, "sample_negatives: n_neg must be positive");
  const auto n = graph.num_nodes();
  if (anchor >= n) throw Error(ErrorKind::validation, "sample_negatives: anchor out of range");
  std::uniform_int_distribution<NodeId> pick(0, static_cast<NodeId>(n - 1));
  std::vector<NodeId> out;
  const long budget = 1000L * n_neg;
  long draws = 0;
  while (static_cast<int>(out.size()) < n_neg) {
    if (++draws > budget)
      throw Error(ErrorKind::numeric, "sample_negatives: rejection budget exhausted for node '" +
                                          graph.item_id(anchor) + "' (graph too dense)");
    const NodeId c = pick(rng);
    if (c == anchor || graph.has_edge(anchor, c)) continue;
    out.push_back(c);
  }
  return out;
}

// ---------------------------------------------------------------- forward

namespace {

Eigen::Index position_in(const std::vector<NodeId>& sorted, NodeId g) {
  auto it = std::lower_bound(sorted.begin(), sorted.end(), g);
  if (it == sorted.end() || *it != g) return -1;
  return static_cast<Eigen::Index>(it - sorted.begin());
}

struct LayerTape {
  std::vector<NodeId> in_nodes;  // sorted
  std::vector<Vec> h_in;
  std::array<std::vector<Vec>, kNumRelations> msg_pre;  // lazily filled, aligned to in_nodes
  std::vector<Vec> pre;                                 // aligned to targets
  // argmax[i][r][e]: position in in_nodes feeding element e of pooled (-1 when empty)
  std::vector<std::array<std::vector<Eigen::Index>, kNumRelations>> argmax;
};

struct Tape {
  std::vector<LayerTape> layers;
  std::vector<Vec> h_out;  // final-layer states aligned to seeds
  std::vector<double> norms;
};

BlockEmbeddings run_forward(const HeteroGraph& graph, const HgnnParams& params, const SampledNeighborhood& block,
                            Tape* tape) {
  if (block.layers.size() != params.layers.size())
    throw Error(ErrorKind::validation, "forward: neighborhood depth does not match layer count");
  if (graph.feature_dim() != params.input_dim)
    throw Error(ErrorKind::validation, "forward: graph feature dimension does not match parameters");

  std::vector<NodeId> nodes = block.input_nodes();
  std::vector<Vec> h(nodes.size());
  for (std::size_t i = 0; i < nodes.size(); ++i) h[i] = graph.features(nodes[i]);

  if (tape) tape->layers.resize(params.layers.size());
  for (std::size_t k = 0; k < params.layers.size(); ++k) {
    const auto& L = params.layers[k];
    const auto& S = block.layers[k];
    const auto out_dim = L.self_weight[0].rows();
    std::array<std::vector<Vec>, kNumRelations> msg_pre;
    for (auto& m : msg_pre) m.resize(nodes.size());
    std::vector<Vec> pre(S.targets.size());
    std::vector<std::array<std::vector<Eigen::Index>, kNumRelations>> argmax(S.targets.size());

    for (std::size_t i = 0; i < S.targets.size(); ++i) {
      const NodeId t = S.targets[i];
      const auto tp = position_in(nodes, t);
      if (tp < 0) throw Error(ErrorKind::validation, "forward: target missing from previous layer");
      const ItemType type = graph.type_of(t);
      pre[i] = self_term(L, type, h[static_cast<std::size_t>(tp)]);
      for (auto r : kRelations) {
        if (!is_incident(r, type)) continue;
        const auto ri = static_cast<std::size_t>(r);
        auto& am = argmax[i][ri];
        am.assign(static_cast<std::size_t>(out_dim), -1);
        Vec pooled = Vec::Zero(out_dim);
        bool first = true;
        for (NodeId v : S.neighbors[i][ri]) {
          const auto vp = position_in(nodes, v);
          if (vp < 0) throw Error(ErrorKind::validation, "forward: neighbor missing from previous layer");
          auto& m = msg_pre[ri][static_cast<std::size_t>(vp)];
          if (m.size() == 0) m = message_preactivation(L, r, h[static_cast<std::size_t>(vp)]);
          for (Eigen::Index e = 0; e < out_dim; ++e) {
            const double val = relu(m(e));
            if (first || val > pooled(e)) {
              pooled(e) = val;
              am[static_cast<std::size_t>(e)] = vp;
            }
          }
          first = false;
        }
        pre[i] += pooled;
      }
    }

    std::vector<Vec> h_next(S.targets.size());
    for (std::size_t i = 0; i < S.targets.size(); ++i) {
      h_next[i] = pre[i];
      relu_inplace(h_next[i]);
    }
    if (tape) {
      auto& lt = tape->layers[k];
      lt.in_nodes = std::move(nodes);
      lt.h_in = std::move(h);
      lt.msg_pre = std::move(msg_pre);
      lt.pre = std::move(pre);
      lt.argmax = std::move(argmax);
    }
    nodes = S.targets;
    h = std::move(h_next);
  }

  BlockEmbeddings out;
  out.nodes = block.seeds;
  const auto d = static_cast<Eigen::Index>(params.output_dim());
  out.z.resize(d, static_cast<Eigen::Index>(block.seeds.size()));
  out.degenerate.assign(block.seeds.size(), false);
  if (tape) tape->norms.assign(block.seeds.size(), 0.0);
  for (std::size_t i = 0; i < block.seeds.size(); ++i) {
    const auto p = position_in(nodes, block.seeds[i]);
    if (p < 0) throw Error(ErrorKind::validation, "forward: seed missing from final layer");
    bool degenerate = false;
    double norm = 0.0;
    normalize_into(h[static_cast<std::size_t>(p)], out.z.col(static_cast<Eigen::Index>(i)), degenerate, norm);
    out.degenerate[i] = degenerate;
    if (tape) tape->norms[i] = norm;
  }
  if (tape) tape->h_out = std::move(h);
  return out;
}

// dz: output_dim x seeds. Accumulates into grad.
void run_backward(const HgnnParams& params, const SampledNeighborhood& block, const Tape& tape,
                  const BlockEmbeddings& emb, const Mat& dz, const HeteroGraph& graph, HgnnParams& grad) {
  // Gradient w.r.t. final-layer states, aligned to the last layer's targets (== seeds).
  std::vector<Vec> dh(block.seeds.size());
  for (std::size_t i = 0; i < block.seeds.size(); ++i) {
    const Vec g = dz.col(static_cast<Eigen::Index>(i));
    if (emb.degenerate[i]) {
      dh[i] = Vec::Zero(g.size());
      continue;
    }
    const Vec z = emb.z.col(static_cast<Eigen::Index>(i));
    dh[i] = (g - z * z.dot(g)) / tape.norms[i];
  }

  for (std::size_t k = params.layers.size(); k-- > 0;) {
    const auto& L = params.layers[k];
    auto& G = grad.layers[k];
    const auto& S = block.layers[k];
    const auto& lt = tape.layers[k];
    const auto in_dim = L.self_weight[0].cols();
    const auto out_dim = L.self_weight[0].rows();
    std::vector<Vec> dh_in(lt.in_nodes.size(), Vec::Zero(in_dim));
    std::array<std::vector<Vec>, kNumRelations> dmsg;
    for (auto& m : dmsg) m.resize(lt.in_nodes.size());

    for (std::size_t i = 0; i < S.targets.size(); ++i) {
      const NodeId t = S.targets[i];
      const auto tp = static_cast<std::size_t>(position_in(lt.in_nodes, t));
      const ItemType type = graph.type_of(t);
      const auto ti = static_cast<std::size_t>(type);
      Vec dpre = dh[i];
      for (Eigen::Index e = 0; e < out_dim; ++e)
        if (!(lt.pre[i](e) > 0.0)) dpre(e) = 0.0;
      if (dpre.isZero(0.0)) continue;
      G.self_weight[ti].noalias() += dpre * lt.h_in[tp].transpose();
      dh_in[tp].noalias() += L.self_weight[ti].transpose() * dpre;
      for (auto r : kRelations) {
        if (!is_incident(r, type)) continue;
        const auto ri = static_cast<std::size_t>(r);
        const auto& am = lt.argmax[i][ri];
        for (Eigen::Index e = 0; e < out_dim; ++e) {
          const auto src = am[static_cast<std::size_t>(e)];
          if (src < 0 || dpre(e) == 0.0) continue;
          auto& acc = dmsg[ri][static_cast<std::size_t>(src)];
          if (acc.size() == 0) acc = Vec::Zero(out_dim);
          acc(e) += dpre(e);
        }
      }
    }

    for (std::size_t ri = 0; ri < kNumRelations; ++ri) {
      for (std::size_t j = 0; j < lt.in_nodes.size(); ++j) {
        const auto& acc = dmsg[ri][j];
        if (acc.size() == 0) continue;
        const auto& m = lt.msg_pre[ri][j];
        Vec dm = acc;
        for (Eigen::Index e = 0; e < out_dim; ++e)
          if (!(m(e) > 0.0)) dm(e) = 0.0;
        G.relation_weight[ri].noalias() += dm * lt.h_in[j].transpose();
        G.relation_bias[ri] += dm;
        dh_in[j].noalias() += L.relation_weight[ri].transpose() * dm;
      }
    }

    if (k == 0) break;
    // Align to the previous layer's targets, which are exactly lt.in_nodes.
    dh = std::move(dh_in);
  }
}

}  // namespace

Eigen::Index BlockEmbeddings::position(NodeId g) const { return position_in(nodes, g); }

BlockEmbeddings forward(const HeteroGraph& graph, const HgnnParams& params, const SampledNeighborhood& block) {
  return run_forward(graph, params, block, nullptr);
}

double hgnn_loss(const HeteroGraph& graph, const HgnnParams& params, const SampledNeighborhood& block,
                 std::span<const TrainingTriple> triples, HgnnParams* grad) {
  if (triples.empty()) throw Error(ErrorKind::validation, "hgnn_loss: no triples");
  Tape tape;
  const auto emb = run_forward(graph, params, block, grad ? &tape : nullptr);
  const double margin = params.config.margin;
  Mat dz = Mat::Zero(emb.z.rows(), emb.z.cols());
  const double scale = 1.0 / static_cast<double>(triples.size());
  double total = 0.0;
  auto col = [&](NodeId g) {
    const auto p = emb.position(g);
    if (p < 0) throw Error(ErrorKind::validation, "hgnn_loss: triple node is not a seed of the block");
    return p;
  };
  for (const auto& tr : triples) {
    if (tr.negatives.empty()) throw Error(ErrorKind::validation, "hgnn_loss: triple without negatives");
    const auto a = col(tr.anchor);
    const auto p = col(tr.positive);
    const auto za = emb.z.col(a);
    const auto zp = emb.z.col(p);
    const double pos = za.dot(zp);
    const double w = scale / static_cast<double>(tr.negatives.size());
    for (NodeId neg : tr.negatives) {
      const auto n = col(neg);
      const auto zn = emb.z.col(n);
      const double v = za.dot(zn) - pos + margin;
      if (v <= 0.0) continue;
      total += w * v;
      if (grad) {
        dz.col(a) += w * (zn - zp);
        dz.col(n) += w * za;
        dz.col(p) -= w * za;
      }
    }
  }
  if (grad) run_backward(params, block, tape, emb, dz, graph, *grad);
  return total;
}

// ---------------------------------------------------------------- inference

std::optional<std::size_t> NodeEmbeddingTable::index_of(const std::string& item_id) const {
  auto it = index.find(item_id);
  if (it == index.end()) return std::nullopt;
  return it->second;
}

void NodeEmbeddingTable::rebuild_index() {
  index.clear();
  for (std::size_t i = 0; i < ids.size(); ++i) index.emplace(ids[i], i);
}

bool NodeEmbeddingTable::operator==(const NodeEmbeddingTable& o) const {
  return ids == o.ids && types == o.types && z.rows() == o.z.rows() && z.cols() == o.z.cols() && z == o.z &&
         degenerate == o.degenerate && isolated == o.isolated;
}

NodeEmbeddingTable embed_all(const HeteroGraph& graph, const HgnnParams& params) {
  std::vector<NodeId> all(graph.num_nodes());
  for (NodeId g = 0; g < all.size(); ++g) all[g] = g;
  std::vector<int> fanouts(params.layers.size(), params.config.inference_degree_cap);
  Rng rng(params.config.inference_seed);
  const auto block = sample_block(graph, all, fanouts, rng);
  auto emb = forward(graph, params, block);

  NodeEmbeddingTable table;
  table.z = std::move(emb.z);
  table.degenerate = std::move(emb.degenerate);
  for (NodeId g = 0; g < all.size(); ++g) {
    table.ids.push_back(graph.item_id(g));
    table.types.push_back(graph.type_of(g));
    table.isolated.push_back(graph.degree(g) == 0);
  }
  table.rebuild_index();
  return table;
}

Vec embed_content_only(const HgnnParams& params, ItemType type, const Vec& content) {
  Vec h = content;
  for (std::size_t k = 0; k < params.layers.size(); ++k) {
    const auto out = params.layers[k].self_weight[0].rows();
    std::map<Relation, Vec> pooled;
    for (auto r : kRelations)
      if (is_incident(r, type)) pooled.emplace(r, Vec::Zero(out));
    h = update_node(params, k, type, h, pooled);
  }
  Vec z(h.size());
  bool degenerate = false;
  double norm = 0.0;
  normalize_into(h, z, degenerate, norm);
  return z;
}

std::string serialize_embeddings(const NodeEmbeddingTable& table) {
  std::string out;
  for (std::size_t i = 0; i < table.ids.size(); ++i) {
    nlohmann::ordered_json j;
    j["item_id"] = table.ids[i];
    j["item_type"] = to_string(table.types[i]);
    std::vector<double> v(table.z.col(static_cast<Eigen::Index>(i)).begin(),
                          table.z.col(static_cast<Eigen::Index>(i)).end());
    j["embedding"] = v;
    j["isolated"] = static_cast<bool>(table.isolated[i]);
    j["degenerate"] = static_cast<bool>(table.degenerate[i]);
    out += j.dump();
    out += '\n';
  }
  return out;
}

NodeEmbeddingTable parse_embeddings(std::string_view text) {
  NodeEmbeddingTable table;
  std::vector<std::vector<double>> cols;
  std::size_t pos = 0;
  while (pos < text.size()) {
    auto end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    auto line = text.substr(pos, end - pos);
    pos = end + 1;
    if (line.empty()) continue;
    auto j = json::parse(line);
    table.ids.push_back(j.at("item_id").get<std::string>());
    auto type = parse_item_type(j.at("item_type").get<std::string>());
    if (!type) throw Error(ErrorKind::parse, "embeddings: bad item_type");
    table.types.push_back(*type);
    cols.push_back(j.at("embedding").get<std::vector<double>>());
    table.isolated.push_back(j.value("isolated", false));
    table.degenerate.push_back(j.value("degenerate", false));
    if (cols.back().size() != cols.front().size()) throw Error(ErrorKind::parse, "embeddings: ragged dimensions");
  }
  const auto d = cols.empty() ? 0 : cols.front().size();
  table.z.resize(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(cols.size()));
  for (std::size_t i = 0; i < cols.size(); ++i)
    for (std::size_t k = 0; k < d; ++k) table.z(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(i)) = cols[i][k];
  table.rebuild_index();
  return table;
}

void write_embeddings(const std::string& path, const NodeEmbeddingTable& table) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::io, "cannot write " + path);
  out << serialize_embeddings(table);
}

NodeEmbeddingTable read_embeddings(const std::string& path) { return parse_embeddings(read_file(path)); }

// ---------------------------------------------------------------- training

json to_json(const EpochLog& log) {
  nlohmann::ordered_json j;
  j["epoch"] = log.epoch;
  j["train_loss"] = log.train_loss;
  j["validation_loss"] = log.validation_loss;
  j["wall_seconds"] = log.wall_seconds;
  j["sampled_edges"] = {{"aa", log.sampled_edges[0]}, {"ap", log.sampled_edges[1]}, {"pp", log.sampled_edges[2]}};
  return json(j);
}

namespace {

std::vector<RelationEdge> all_edges(const EdgeSets& edges) {
  std::vector<RelationEdge> out;
  for (auto r : kRelations)
    for (const auto& e : edges[static_cast<std::size_t>(r)]) out.push_back({e, r});
  return out;
}

struct BatchPlan {
  std::vector<TrainingTriple> triples;
  std::vector<NodeId> seeds;
};

// Both orientations of each edge become (anchor, positive) pairs.
BatchPlan plan_batch(const HeteroGraph& full, std::span<const RelationEdge> edges, int negatives, Rng& rng) {
  BatchPlan plan;
  for (const auto& re : edges) {
    for (int dir = 0; dir < 2; ++dir) {
      TrainingTriple t;
      t.anchor = dir == 0 ? re.edge.u : re.edge.v;
      t.positive = dir == 0 ? re.edge.v : re.edge.u;
      t.negatives = sample_negatives(full, t.anchor, negatives, rng);
      plan.seeds.push_back(t.anchor);
      plan.seeds.push_back(t.positive);
      plan.seeds.insert(plan.seeds.end(), t.negatives.begin(), t.negatives.end());
      plan.triples.push_back(std::move(t));
    }
  }
  return plan;
}

double evaluate_loss(const HeteroGraph& full, const HeteroGraph& message_graph, const HgnnParams& params,
                     const EdgeSets& edges, std::uint64_t seed) {
  Rng rng(seed);
  auto list = params.config.balanced_sampler ? balanced_edge_sample(edges, rng) : all_edges(edges);
  double total = 0.0;
  std::size_t count = 0;
  const auto bs = static_cast<std::size_t>(params.config.batch_size);
  for (std::size_t start = 0; start < list.size(); start += bs) {
    std::span<const RelationEdge> chunk(list.data() + start, std::min(bs, list.size() - start));
    auto plan = plan_batch(full, chunk, params.config.negatives, rng);
    auto block = sample_block(message_graph, plan.seeds, params.config.fanouts, rng);
    total += hgnn_loss(message_graph, params, block, plan.triples, nullptr) * static_cast<double>(plan.triples.size());
    count += plan.triples.size();
  }
  return total / static_cast<double>(count);
}

}  // namespace

HgnnTrainResult train_hgnn(const HeteroGraph& graph, const HgnnParams& init, std::uint64_t seed) {
  const auto& cfg = init.config;
  cfg.validate();
  if (graph.num_edges() == 0) throw Error(ErrorKind::validation, "train_hgnn: graph has no edges");
  Rng rng(seed);
  auto holdout = split_validation_edges(graph, cfg.validation_fraction, rng);
  if (holdout.train.num_edges() == 0) throw Error(ErrorKind::validation, "train_hgnn: no training edges after holdout");
  bool has_validation = false;
  for (const auto& l : holdout.validation) has_validation = has_validation || !l.empty();
  const std::uint64_t val_seed = seed ^ 0x9e3779b97f4a7c15ULL;

  HgnnParams params = init;
  HgnnTrainResult result;
  result.params = params;
  Adam adam(cfg.learning_rate);
  double best = std::numeric_limits<double>::infinity();
  int since_best = 0;
  const auto bs = static_cast<std::size_t>(cfg.batch_size);

  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    auto edges = cfg.balanced_sampler ? balanced_edge_sample(holdout.train, rng) : all_edges(holdout.train.edge_sets());
    std::shuffle(edges.begin(), edges.end(), rng);
    EpochLog log;
    log.epoch = epoch;
    for (const auto& re : edges) ++log.sampled_edges[static_cast<std::size_t>(re.relation)];

    double total = 0.0;
    std::size_t count = 0;
    std::size_t batch_id = 0;
    for (std::size_t start = 0; start < edges.size(); start += bs, ++batch_id) {
      std::span<const RelationEdge> chunk(edges.data() + start, std::min(bs, edges.size() - start));
      auto plan = plan_batch(graph, chunk, cfg.negatives, rng);
      auto block = sample_block(holdout.train, plan.seeds, cfg.fanouts, rng);
      auto grad = params.zeros_like();
      const double loss = hgnn_loss(holdout.train, params, block, plan.triples, &grad);
      bool finite = std::isfinite(loss);
      for (auto b : std::as_const(grad).blocks()) finite = finite && all_finite(b);
      if (!finite)
        throw Error(ErrorKind::numeric, "train_hgnn: non-finite loss or gradient at epoch " + std::to_string(epoch) +
                                            " batch " + std::to_string(batch_id));
      adam.step(params.blocks(), std::as_const(grad).blocks());
      for (auto b : std::as_const(params).blocks())
        if (!all_finite(b))
          throw Error(ErrorKind::numeric, "train_hgnn: non-finite parameters after epoch " + std::to_string(epoch) +
                                              " batch " + std::to_string(batch_id));
      total += loss * static_cast<double>(plan.triples.size());
      count += plan.triples.size();
    }
    log.train_loss = total / static_cast<double>(count);
    log.validation_loss =
        has_validation ? evaluate_loss(graph, holdout.train, params, holdout.validation, val_seed) : log.train_loss;
    log.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.log.push_back(log);

    if (log.validation_loss < best) {
      best = log.validation_loss;
      result.params = params;
      result.best_epoch = epoch;
      since_best = 0;
    } else if (++since_best >= cfg.patience) {
      break;
    }
  }
  result.embeddings = embed_all(graph, result.params);
  return result;
}

}  // namespace rec
