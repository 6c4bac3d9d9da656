#include "rec/two_tower.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <set>

#include <nlohmann/json.hpp>

#include "rec/binio.hpp"

namespace rec {

using nlohmann::json;

#define REC_TOWER_FIELDS(X)                                                                         \
  X(widths) X(categorical_dim) X(batch_size) X(epochs) X(learning_rate) X(window_days) X(weak_signals) \
  X(hgnn_embeddings)

void to_json(json& j, const TowerConfig& c) {
  j = json::object();
#define X(f) j[#f] = c.f;
  REC_TOWER_FIELDS(X)
#undef X
  j["target"] = std::string(to_string(c.target));
}

void from_json(const json& j, TowerConfig& c) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool known = false;
#define X(f) if (it.key() == #f) { it.value().get_to(c.f); known = true; }
    REC_TOWER_FIELDS(X)
#undef X
    if (it.key() == "target") {
      auto t = parse_item_type(it.value().get<std::string>());
      if (!t) throw Error(ErrorKind::validation, "tower config: bad target '" + it.value().get<std::string>() + "'");
      c.target = *t;
      known = true;
    }
    if (!known) throw Error(ErrorKind::validation, "tower config: unknown field '" + it.key() + "'");
  }
}

#undef REC_TOWER_FIELDS

void TowerConfig::validate() const {
  auto fail = [](const std::string& m) { throw Error(ErrorKind::validation, "tower config: " + m); };
  if (widths.empty()) fail("widths must not be empty");
  for (int w : widths)
    if (w < 1) fail("widths must be positive");
  if (categorical_dim < 1) fail("categorical_dim must be positive");
  if (batch_size < 2) fail("batch_size must be >= 2");
  if (epochs < 1) fail("epochs must be positive");
  if (learning_rate <= 0) fail("learning_rate must be positive");
  if (window_days < 1) fail("window_days must be positive");
}

Vocabulary::Vocabulary(std::vector<std::string> values) : values_(std::move(values)) {
  std::sort(values_.begin(), values_.end());
  values_.erase(std::unique(values_.begin(), values_.end()), values_.end());
  std::erase(values_, std::string(kOov));
}

std::size_t Vocabulary::index(std::string_view value) const {
  auto it = std::lower_bound(values_.begin(), values_.end(), value);
  if (it == values_.end() || *it != value) return 0;
  return static_cast<std::size_t>(it - values_.begin()) + 1;
}

// ---------------------------------------------------------------- features

namespace {

Vec embedding_or_zero(const NodeEmbeddingTable& emb, const std::string& id) {
  auto i = emb.index_of(id);
  if (!i) return Vec::Zero(static_cast<Eigen::Index>(emb.dim()));
  return emb.z.col(static_cast<Eigen::Index>(*i));
}

Vec mean_of(const NodeEmbeddingTable& emb, const std::set<std::string>& ids) {
  Vec m = Vec::Zero(static_cast<Eigen::Index>(emb.dim()));
  if (ids.empty()) return m;
  for (const auto& id : ids) m += embedding_or_zero(emb, id);
  return m / static_cast<double>(ids.size());
}

Vec music_of(const UserProfile* profile, std::size_t music_dim) {
  Vec m = Vec::Zero(static_cast<Eigen::Index>(music_dim));
  if (profile && !profile->music_vector.empty()) {
    if (profile->music_vector.size() != music_dim)
      throw Error(ErrorKind::validation, "user '" + profile->user_id + "': music_vector has dimension " +
                                             std::to_string(profile->music_vector.size()) + ", expected " +
                                             std::to_string(music_dim));
    for (std::size_t k = 0; k < music_dim; ++k) m(static_cast<Eigen::Index>(k)) = profile->music_vector[k];
  }
  return m;
}

struct History {
  std::set<std::string> audiobooks;
  std::set<std::string> podcasts;
  std::array<double, kNumSignals> counts{};
};

void add_to_history(History& h, const InteractionRecord& r, const FeatureWindow& window, const TowerConfig& config) {
  const std::int64_t start = window.end - static_cast<std::int64_t>(window.days) * kSecondsPerDay;
  if (r.timestamp < start || r.timestamp >= window.end) return;
  if (!config.weak_signals && is_weak(r.signal)) return;
  h.counts[static_cast<std::size_t>(r.signal)] += 1.0;
  if (r.item_type == ItemType::audiobook)
    h.audiobooks.insert(r.item_id);
  else if (r.signal == Signal::stream)
    h.podcasts.insert(r.item_id);
}

UserFeatures features_from_history(const History& h, const NodeEmbeddingTable& embeddings, const UserProfile* profile,
                                   std::size_t music_dim, const TowerConfig& config) {
  UserFeatures f;
  if (profile) {
    f.country = profile->country;
    f.age_bucket = profile->age_bucket;
  }
  f.music = music_of(profile, music_dim);
  if (config.hgnn_embeddings) {
    f.mean_audiobook = mean_of(embeddings, h.audiobooks);
    f.mean_podcast = mean_of(embeddings, h.podcasts);
  } else {
    f.mean_audiobook = Vec::Zero(static_cast<Eigen::Index>(embeddings.dim()));
    f.mean_podcast = Vec::Zero(static_cast<Eigen::Index>(embeddings.dim()));
  }
  f.interaction_counts = h.counts;
  return f;
}

}  // namespace

UserFeatures assemble_user_features(const std::string& user_id, std::span<const InteractionRecord> records,
                                    const NodeEmbeddingTable& embeddings, const UserProfile* profile,
                                    std::size_t music_dim, const FeatureWindow& window, const TowerConfig& config) {
  History h;
  for (const auto& r : records)
    if (r.user_id == user_id) add_to_history(h, r, window, config);
  return features_from_history(h, embeddings, profile, music_dim, config);
}

ItemFeatures assemble_item_features(const CatalogItem& item, const NodeEmbeddingTable& embeddings,
                                    const TowerConfig& config) {
  ItemFeatures f;
  f.language = item.language;
  f.genre = item.genre;
  f.content = Eigen::Map<const Vec>(item.content_vector.data(), static_cast<Eigen::Index>(item.content_vector.size()));
  f.hgnn = config.hgnn_embeddings ? embedding_or_zero(embeddings, item.item_id)
                                  : Vec::Zero(static_cast<Eigen::Index>(embeddings.dim()));
  return f;
}

TowerData assemble_tower_data(const std::vector<InteractionRecord>& records, const std::set<std::string>& user_ids,
                              const Catalog& catalog, const UserProfiles& profiles,
                              const NodeEmbeddingTable& embeddings, const FeatureWindow& window,
                              const TowerConfig& config) {
  TowerData data;
  data.embedding_dim = embeddings.dim();
  data.content_dim = content_dim(catalog);
  for (const auto& [id, p] : profiles) data.music_dim = std::max(data.music_dim, p.music_vector.size());

  std::map<std::string, History> histories;
  for (const auto& u : user_ids) histories[u];
  for (const auto& r : records) {
    auto it = histories.find(r.user_id);
    if (it != histories.end()) add_to_history(it->second, r, window, config);
  }
  for (const auto& [u, h] : histories) {
    auto p = profiles.find(u);
    data.users.emplace(u, features_from_history(h, embeddings, p == profiles.end() ? nullptr : &p->second,
                                                data.music_dim, config));
  }
  for (const auto& [id, item] : catalog)
    if (item.item_type == config.target) data.items.emplace(id, assemble_item_features(item, embeddings, config));
  return data;
}

// ---------------------------------------------------------------- params

std::size_t Tower::input_dim() const {
  return static_cast<std::size_t>(tables[0].rows() + tables[1].rows()) + dense_dim;
}

namespace {

template <typename TowerT, typename Out>
void tower_blocks(TowerT& t, Out& out) {
  for (auto& m : t.tables) out.push_back(as_span(m));
  for (auto& m : t.weight) out.push_back(as_span(m));
  for (auto& b : t.bias) out.push_back(as_span(b));
}

}  // namespace

std::vector<std::span<double>> TowerParams::blocks() {
  std::vector<std::span<double>> out;
  tower_blocks(user, out);
  tower_blocks(item, out);
  return out;
}

std::vector<std::span<const double>> TowerParams::blocks() const {
  std::vector<std::span<const double>> out;
  tower_blocks(user, out);
  tower_blocks(item, out);
  return out;
}

TowerParams TowerParams::zeros_like() const {
  TowerParams z = *this;
  for (auto b : z.blocks()) std::fill(b.begin(), b.end(), 0.0);
  return z;
}

std::string TowerParams::checksum() const {
  Fnv1a h;
  for (auto b : blocks()) h.update(b);
  return h.hex();
}

bool TowerParams::operator==(const TowerParams& o) const {
  if (music_dim != o.music_dim || embedding_dim != o.embedding_dim || content_dim != o.content_dim) return false;
  if (user.vocab != o.user.vocab || item.vocab != o.item.vocab || item_frequency != o.item_frequency) return false;
  auto a = blocks();
  auto b = o.blocks();
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a[i].size() != b[i].size() || !std::equal(a[i].begin(), a[i].end(), b[i].begin())) return false;
  return json(config) == json(o.config);
}

namespace {

Tower init_tower(const TowerConfig& config, std::array<Vocabulary, 2> vocab, std::size_t dense_dim, Rng& rng) {
  Tower t;
  t.vocab = std::move(vocab);
  std::normal_distribution<double> gauss(0.0, 0.1);
  for (std::size_t c = 0; c < 2; ++c) {
    t.tables[c].resize(config.categorical_dim, static_cast<Eigen::Index>(t.vocab[c].size()));
    for (Eigen::Index j = 0; j < t.tables[c].cols(); ++j)
      for (Eigen::Index i = 0; i < t.tables[c].rows(); ++i) t.tables[c](i, j) = gauss(rng);
  }
  t.dense_dim = dense_dim;
  auto in = static_cast<Eigen::Index>(t.input_dim());
  for (int w : config.widths) {
    Mat W(w, in);
    glorot_uniform(W, rng);
    t.weight.push_back(std::move(W));
    t.bias.push_back(Vec::Zero(w));
    in = w;
  }
  return t;
}

}  // namespace

TowerParams init_tower_params(const TowerConfig& config, const TowerData& data, const UserProfiles& profiles,
                              const Catalog& catalog, Rng& rng) {
  config.validate();
  std::vector<std::string> countries, ages, languages, genres;
  for (const auto& [id, p] : profiles) {
    if (!p.country.empty()) countries.push_back(p.country);
    if (!p.age_bucket.empty()) ages.push_back(p.age_bucket);
  }
  for (const auto& [id, item] : catalog) {
    if (item.item_type != config.target) continue;
    if (!item.language.empty()) languages.push_back(item.language);
    if (!item.genre.empty()) genres.push_back(item.genre);
  }
  TowerParams p;
  p.config = config;
  p.music_dim = data.music_dim;
  p.embedding_dim = data.embedding_dim;
  p.content_dim = data.content_dim;
  p.user = init_tower(config, {Vocabulary(countries), Vocabulary(ages)}, p.music_dim + 2 * p.embedding_dim + kNumSignals,
                      rng);
  p.item = init_tower(config, {Vocabulary(languages), Vocabulary(genres)}, p.content_dim + p.embedding_dim, rng);
  return p;
}

namespace {
constexpr std::string_view kTowerMagic = "RTWT";
constexpr std::uint32_t kTowerVersion = 1;

void write_tower(binio::Writer& w, const Tower& t) {
  for (const auto& v : t.vocab) w.strings(v.values());
  for (const auto& m : t.tables) w.matrix(m);
  w.u64(t.dense_dim);
  w.u64(t.weight.size());
  for (std::size_t l = 0; l < t.weight.size(); ++l) {
    w.matrix(t.weight[l]);
    w.vector(t.bias[l]);
  }
}

Tower read_tower(binio::Reader& r) {
  Tower t;
  for (auto& v : t.vocab) v = Vocabulary(r.strings());
  for (std::size_t c = 0; c < 2; ++c) {
    t.tables[c] = r.matrix();
    if (static_cast<std::size_t>(t.tables[c].cols()) != t.vocab[c].size())
      throw Error(ErrorKind::parse, "tower checkpoint: embedding table does not match its vocabulary");
  }
  t.dense_dim = r.u64();
  const auto n = r.u64();
  auto in = static_cast<Eigen::Index>(t.input_dim());
  for (std::uint64_t l = 0; l < n; ++l) {
    t.weight.push_back(r.matrix());
    t.bias.push_back(r.vector());
    if (t.weight.back().cols() != in || t.bias.back().size() != t.weight.back().rows())
      throw Error(ErrorKind::parse, "tower checkpoint: layer shape mismatch");
    in = t.weight.back().rows();
  }
  return t;
}
}  // namespace

std::string serialize_towers(const TowerParams& params) {
  binio::Writer w(kTowerMagic, kTowerVersion);
  w.str(json(params.config).dump());
  w.u64(params.music_dim);
  w.u64(params.embedding_dim);
  w.u64(params.content_dim);
  write_tower(w, params.user);
  write_tower(w, params.item);
  std::vector<std::string> ids;
  std::vector<double> freq;
  for (const auto& [id, f] : params.item_frequency) {
    ids.push_back(id);
    freq.push_back(f);
  }
  w.strings(ids);
  w.f64s(freq);
  return w.bytes();
}

TowerParams deserialize_towers(std::string bytes) {
  binio::Reader r(std::move(bytes), kTowerMagic, kTowerVersion);
  TowerParams p;
  p.config = json::parse(r.str()).get<TowerConfig>();
  p.music_dim = r.u64();
  p.embedding_dim = r.u64();
  p.content_dim = r.u64();
  p.user = read_tower(r);
  p.item = read_tower(r);
  auto ids = r.strings();
  auto freq = r.f64s();
  if (ids.size() != freq.size()) throw Error(ErrorKind::parse, "tower checkpoint: frequency table is ragged");
  for (std::size_t i = 0; i < ids.size(); ++i) p.item_frequency.emplace(ids[i], freq[i]);
  if (!r.at_end()) throw Error(ErrorKind::parse, "tower checkpoint: trailing bytes");
  return p;
}

void save_towers(const std::string& path, const TowerParams& params) {
  auto bytes = serialize_towers(params);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::io, "cannot write " + path);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

TowerParams load_towers(const std::string& path) { return deserialize_towers(read_file(path)); }

// ---------------------------------------------------------------- forward / backward

namespace {

struct TowerInput {
  std::array<std::vector<std::size_t>, 2> cats;
  Mat dense;  // dense_dim x batch
};

struct TowerTape {
  Mat x;
  std::vector<Mat> pre;  // per layer
  Mat out;               // normalized
  Vec norms;
  std::vector<bool> degenerate;
};

void check_dim(const Vec& v, std::size_t expected, const char* what) {
  if (static_cast<std::size_t>(v.size()) != expected)
    throw Error(ErrorKind::validation, std::string("tower input: ") + what + " has dimension " +
                                           std::to_string(v.size()) + ", expected " + std::to_string(expected));
}

TowerInput user_input(const TowerParams& p, std::span<const UserFeatures* const> users) {
  TowerInput in;
  const auto B = static_cast<Eigen::Index>(users.size());
  in.dense.resize(static_cast<Eigen::Index>(p.user.dense_dim), B);
  const auto dm = static_cast<Eigen::Index>(p.music_dim);
  const auto d = static_cast<Eigen::Index>(p.embedding_dim);
  for (Eigen::Index j = 0; j < B; ++j) {
    const auto& f = *users[static_cast<std::size_t>(j)];
    check_dim(f.music, p.music_dim, "music_vector");
    check_dim(f.mean_audiobook, p.embedding_dim, "mean audiobook embedding");
    check_dim(f.mean_podcast, p.embedding_dim, "mean podcast embedding");
    in.cats[0].push_back(p.user.vocab[0].index(f.country));
    in.cats[1].push_back(p.user.vocab[1].index(f.age_bucket));
    auto col = in.dense.col(j);
    col.segment(0, dm) = f.music;
    col.segment(dm, d) = f.mean_audiobook;
    col.segment(dm + d, d) = f.mean_podcast;
    for (std::size_t s = 0; s < kNumSignals; ++s)
      col(dm + 2 * d + static_cast<Eigen::Index>(s)) = std::log1p(f.interaction_counts[s]);
  }
  return in;
}

TowerInput item_input(const TowerParams& p, std::span<const ItemFeatures* const> items) {
  TowerInput in;
  const auto B = static_cast<Eigen::Index>(items.size());
  in.dense.resize(static_cast<Eigen::Index>(p.item.dense_dim), B);
  const auto dc = static_cast<Eigen::Index>(p.content_dim);
  const auto d = static_cast<Eigen::Index>(p.embedding_dim);
  for (Eigen::Index j = 0; j < B; ++j) {
    const auto& f = *items[static_cast<std::size_t>(j)];
    check_dim(f.content, p.content_dim, "content_vector");
    check_dim(f.hgnn, p.embedding_dim, "hgnn embedding");
    in.cats[0].push_back(p.item.vocab[0].index(f.language));
    in.cats[1].push_back(p.item.vocab[1].index(f.genre));
    in.dense.col(j).segment(0, dc) = f.content;
    in.dense.col(j).segment(dc, d) = f.hgnn;
  }
  return in;
}

Mat tower_forward(const Tower& t, const TowerInput& in, TowerTape* tape) {
  const auto B = in.dense.cols();
  const auto c0 = t.tables[0].rows();
  const auto c1 = t.tables[1].rows();
  Mat x(static_cast<Eigen::Index>(t.input_dim()), B);
  for (Eigen::Index j = 0; j < B; ++j) {
    x.col(j).segment(0, c0) = t.tables[0].col(static_cast<Eigen::Index>(in.cats[0][static_cast<std::size_t>(j)]));
    x.col(j).segment(c0, c1) = t.tables[1].col(static_cast<Eigen::Index>(in.cats[1][static_cast<std::size_t>(j)]));
  }
  x.bottomRows(in.dense.rows()) = in.dense;

  Mat a = x;
  std::vector<Mat> pre;
  for (std::size_t l = 0; l < t.weight.size(); ++l) {
    Mat z = t.weight[l] * a;
    z.colwise() += t.bias[l];
    if (tape) pre.push_back(z);
    if (l + 1 < t.weight.size())
      a = z.cwiseMax(0.0);
    else
      a = std::move(z);
  }

  Mat out(a.rows(), B);
  Vec norms(B);
  std::vector<bool> degenerate(static_cast<std::size_t>(B), false);
  for (Eigen::Index j = 0; j < B; ++j) {
    norms(j) = a.col(j).norm();
    if (norms(j) < 1e-12) {
      out.col(j).setZero();
      out(0, j) = 1.0;
      degenerate[static_cast<std::size_t>(j)] = true;
    } else {
      out.col(j) = a.col(j) / norms(j);
    }
  }
  if (tape) {
    tape->x = std::move(x);
    tape->pre = std::move(pre);
    tape->out = out;
    tape->norms = std::move(norms);
    tape->degenerate = std::move(degenerate);
  }
  return out;
}

void tower_backward(const Tower& t, const TowerInput& in, const TowerTape& tape, const Mat& d_out, Tower& g) {
  const auto B = d_out.cols();
  Mat dz(d_out.rows(), B);
  for (Eigen::Index j = 0; j < B; ++j) {
    if (tape.degenerate[static_cast<std::size_t>(j)]) {
      dz.col(j).setZero();
      continue;
    }
    const auto o = tape.out.col(j);
    dz.col(j) = (d_out.col(j) - o * o.dot(d_out.col(j))) / tape.norms(j);
  }
  Mat dx;
  for (std::size_t l = t.weight.size(); l-- > 0;) {
    const Mat& a_prev = l == 0 ? tape.x : Mat(tape.pre[l - 1].cwiseMax(0.0));
    g.weight[l].noalias() += dz * a_prev.transpose();
    g.bias[l] += dz.rowwise().sum();
    Mat da = t.weight[l].transpose() * dz;
    if (l == 0) {
      dx = std::move(da);
    } else {
      dz = (tape.pre[l - 1].array() > 0.0).select(da, 0.0);
    }
  }
  const auto c0 = t.tables[0].rows();
  const auto c1 = t.tables[1].rows();
  for (Eigen::Index j = 0; j < B; ++j) {
    g.tables[0].col(static_cast<Eigen::Index>(in.cats[0][static_cast<std::size_t>(j)])) += dx.col(j).segment(0, c0);
    g.tables[1].col(static_cast<Eigen::Index>(in.cats[1][static_cast<std::size_t>(j)])) += dx.col(j).segment(c0, c1);
  }
}

}  // namespace

Mat user_tower_forward(const TowerParams& params, std::span<const UserFeatures* const> features) {
  return tower_forward(params.user, user_input(params, features), nullptr);
}

Mat item_tower_forward(const TowerParams& params, std::span<const ItemFeatures* const> features) {
  return tower_forward(params.item, item_input(params, features), nullptr);
}

Vec user_tower_forward(const TowerParams& params, const UserFeatures& features) {
  const UserFeatures* one[] = {&features};
  return user_tower_forward(params, std::span<const UserFeatures* const>(one)).col(0);
}

Vec item_tower_forward(const TowerParams& params, const ItemFeatures& features) {
  const ItemFeatures* one[] = {&features};
  return item_tower_forward(params, std::span<const ItemFeatures* const>(one)).col(0);
}

// ---------------------------------------------------------------- loss

double loss_2t(const Vec& o_u, const Vec& o_a, std::span<const Vec> negatives, std::span<const double> weights) {
  if (negatives.empty()) throw Error(ErrorKind::validation, "loss_2t: no in-batch negatives");
  if (weights.size() != negatives.size()) throw Error(ErrorKind::validation, "loss_2t: one weight per negative required");
  const double pos = o_u.dot(o_a);
  double total = 0.0;
  for (std::size_t i = 0; i < negatives.size(); ++i) total += weights[i] * (o_u.dot(negatives[i]) - pos);
  return total / static_cast<double>(negatives.size());
}

std::vector<TrainingPair> training_pairs(const std::vector<InteractionRecord>& train, ItemType target) {
  std::set<TrainingPair> pairs;
  for (const auto& r : train)
    if (r.signal == Signal::stream && r.item_type == target) pairs.insert({r.user_id, r.item_id});
  return {pairs.begin(), pairs.end()};
}

std::map<std::string, double> item_frequencies(std::span<const TrainingPair> pairs) {
  std::map<std::string, double> freq;
  for (const auto& p : pairs) freq[p.item_id] += 1.0;
  return freq;
}

double batch_loss_2t(const TowerParams& params, const TowerData& data, std::span<const TrainingPair> batch,
                     TowerParams* grad) {
  std::map<std::string, std::size_t> item_pos;
  std::vector<const ItemFeatures*> items;
  std::vector<const UserFeatures*> users;
  std::vector<std::size_t> positive;
  for (const auto& p : batch) {
    auto u = data.users.find(p.user_id);
    if (u == data.users.end()) throw Error(ErrorKind::validation, "2t batch: no features for user '" + p.user_id + "'");
    auto i = data.items.find(p.item_id);
    if (i == data.items.end()) throw Error(ErrorKind::validation, "2t batch: no features for item '" + p.item_id + "'");
    users.push_back(&u->second);
    auto [it, fresh] = item_pos.emplace(p.item_id, items.size());
    if (fresh) items.push_back(&i->second);
    positive.push_back(it->second);
  }
  const std::size_t n_items = items.size();
  if (n_items < 2) return 0.0;

  // 1/frequency relative to the rarest item, so equal frequencies give weights of exactly 1.
  std::vector<double> w(n_items);
  double max_inv = 0.0;
  for (const auto& [id, j] : item_pos) {
    auto f = params.item_frequency.find(id);
    if (f == params.item_frequency.end() || !(f->second > 0))
      throw Error(ErrorKind::validation, "2t batch: item '" + id + "' has no positive training frequency");
    w[j] = 1.0 / f->second;
    max_inv = std::max(max_inv, w[j]);
  }
  double sum = 0.0;
  for (auto& x : w) {
    x /= max_inv;
    sum += x;
  }
  const double mean = sum / static_cast<double>(n_items);
  for (auto& x : w) x /= mean;

  auto u_in = user_input(params, users);
  auto i_in = item_input(params, items);
  TowerTape u_tape, i_tape;
  const Mat ou = tower_forward(params.user, u_in, grad ? &u_tape : nullptr);
  const Mat oi = tower_forward(params.item, i_in, grad ? &i_tape : nullptr);

  // Every pair has n_items - 1 >= 1 negatives here.
  const double inv_users = 1.0 / static_cast<double>(batch.size());
  const double inv_negs = 1.0 / static_cast<double>(n_items - 1);
  Mat d_ou = Mat::Zero(ou.rows(), ou.cols());
  Mat d_oi = Mat::Zero(oi.rows(), oi.cols());
  double total = 0.0;
  std::vector<Vec> negs;
  std::vector<double> neg_w;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const auto a = static_cast<Eigen::Index>(positive[b]);
    const Vec u = ou.col(static_cast<Eigen::Index>(b));
    negs.clear();
    neg_w.clear();
    for (std::size_t j = 0; j < n_items; ++j) {
      if (static_cast<Eigen::Index>(j) == a) continue;
      negs.push_back(oi.col(static_cast<Eigen::Index>(j)));
      neg_w.push_back(w[j]);
    }
    total += inv_users * loss_2t(u, oi.col(a), negs, neg_w);
    if (!grad) continue;
    const double s = inv_users * inv_negs;
    double w_sum = 0.0;
    for (std::size_t j = 0; j < n_items; ++j) {
      if (static_cast<Eigen::Index>(j) == a) continue;
      const auto jj = static_cast<Eigen::Index>(j);
      d_ou.col(static_cast<Eigen::Index>(b)) += (s * w[j]) * (oi.col(jj) - oi.col(a));
      d_oi.col(jj) += (s * w[j]) * u;
      w_sum += w[j];
    }
    d_oi.col(a) -= (s * w_sum) * u;
  }
  if (grad) {
    tower_backward(params.user, u_in, u_tape, d_ou, grad->user);
    tower_backward(params.item, i_in, i_tape, d_oi, grad->item);
  }
  return total;
}

// ---------------------------------------------------------------- training

json to_json(const TowerEpochLog& log) {
  return json{{"epoch", log.epoch}, {"train_loss", log.train_loss}, {"wall_seconds", log.wall_seconds}};
}

TowerTrainResult train_2t(const TowerParams& init, const TowerData& data, std::vector<TrainingPair> pairs,
                          std::uint64_t seed) {
  const auto& cfg = init.config;
  cfg.validate();
  if (pairs.empty()) throw Error(ErrorKind::validation, "train_2t: no training pairs");
  TowerTrainResult result;
  result.params = init;
  auto& params = result.params;
  params.item_frequency = item_frequencies(pairs);
  Rng rng(seed);
  Adam adam(cfg.learning_rate);
  const auto bs = static_cast<std::size_t>(cfg.batch_size);
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    std::shuffle(pairs.begin(), pairs.end(), rng);
    double total = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < pairs.size(); start += bs) {
      std::span<const TrainingPair> batch(pairs.data() + start, std::min(bs, pairs.size() - start));
      auto grad = params.zeros_like();
      const double loss = batch_loss_2t(params, data, batch, &grad);
      bool finite = std::isfinite(loss);
      for (auto b : std::as_const(grad).blocks()) finite = finite && all_finite(b);
      if (!finite)
        throw Error(ErrorKind::numeric, "train_2t: non-finite loss or gradient at epoch " + std::to_string(epoch) +
                                            " batch " + std::to_string(start / bs));
      adam.step(params.blocks(), std::as_const(grad).blocks());
      total += loss;
      ++batches;
    }
    TowerEpochLog log;
    log.epoch = epoch;
    log.train_loss = total / static_cast<double>(batches);
    log.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.log.push_back(log);
  }
  return result;
}

namespace {

template <typename F>
std::map<std::string, Vec> export_all(const std::map<std::string, F>& features,
                                      Mat (*fwd)(const TowerParams&, std::span<const F* const>),
                                      const TowerParams& params) {
  std::vector<const F*> ptrs;
  for (const auto& [id, f] : features) ptrs.push_back(&f);
  std::map<std::string, Vec> out;
  if (ptrs.empty()) return out;
  const Mat o = fwd(params, ptrs);
  Eigen::Index j = 0;
  for (const auto& [id, f] : features) out.emplace(id, o.col(j++));
  return out;
}

}  // namespace

std::map<std::string, Vec> export_item_vectors(const TowerParams& params, const TowerData& data) {
  return export_all<ItemFeatures>(data.items, &item_tower_forward, params);
}

std::map<std::string, Vec> export_user_vectors(const TowerParams& params, const TowerData& data) {
  return export_all<UserFeatures>(data.users, &user_tower_forward, params);
}

std::string serialize_vectors(const std::map<std::string, Vec>& vectors) {
  std::string out;
  for (const auto& [id, v] : vectors) {
    nlohmann::ordered_json j;
    j["id"] = id;
    j["vector"] = std::vector<double>(v.begin(), v.end());
    out += j.dump();
    out += '\n';
  }
  return out;
}

std::map<std::string, Vec> parse_vectors(std::string_view text) {
  std::map<std::string, Vec> out;
  std::size_t pos = 0;
  std::size_t line_no = 0;
  while (pos < text.size()) {
    auto end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    auto line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (line.empty()) continue;
    auto j = json::parse(line);
    auto v = j.at("vector").get<std::vector<double>>();
    auto id = j.at("id").get<std::string>();
    if (!out.emplace(id, Eigen::Map<Vec>(v.data(), static_cast<Eigen::Index>(v.size()))).second)
      throw Error(ErrorKind::parse, "vectors line " + std::to_string(line_no) + ": duplicate id '" + id + "'");
  }
  return out;
}

void write_vectors(const std::string& path, const std::map<std::string, Vec>& vectors) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::io, "cannot write " + path);
  out << serialize_vectors(vectors);
}

std::map<std::string, Vec> read_vectors(const std::string& path) { return parse_vectors(read_file(path)); }

}  // namespace rec
