#include "rec/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include <nlohmann/json.hpp>

namespace rec {

#define REC_SYNTH_FIELDS(X)                                                                     \
  X(n_users) X(n_podcasts) X(n_audiobooks) X(n_new_audiobooks) X(n_clusters) X(content_dim)     \
  X(days) X(holdout_days) X(affinity) X(podcast_rate) X(audiobook_rate) X(popularity_skew)      \
  X(content_noise) X(follow_prob) X(preview_prob) X(intent_prob) X(weak_lead_days)              \
  X(stray_follow_rate) X(stray_preview_rate) X(stray_intent_rate) X(n_countries)                \
  X(n_age_buckets) X(n_languages) X(n_genres) X(genre_cluster_prob)

void to_json(nlohmann::json& j, const SynthConfig& c) {
  j = nlohmann::json::object();
#define X(f) j[#f] = c.f;
  REC_SYNTH_FIELDS(X)
#undef X
}

void from_json(const nlohmann::json& j, SynthConfig& c) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool known = false;
#define X(f) if (it.key() == #f) { it.value().get_to(c.f); known = true; }
    REC_SYNTH_FIELDS(X)
#undef X
    if (!known) throw Error(ErrorKind::validation, "synth config: unknown field '" + it.key() + "'");
  }
}

#undef REC_SYNTH_FIELDS

void SynthConfig::validate() const {
  auto fail = [](const std::string& m) { throw Error(ErrorKind::validation, "synth config: " + m); };
  if (n_users <= 0 || n_podcasts < 0 || n_audiobooks <= 0) fail("population sizes must be positive");
  if (n_clusters <= 0) fail("n_clusters must be positive");
  if (n_clusters > std::min(n_users, n_audiobooks))
    fail("n_clusters (" + std::to_string(n_clusters) + ") exceeds min(n_users, n_audiobooks)");
  if (n_new_audiobooks < 0 || n_new_audiobooks >= n_audiobooks) fail("n_new_audiobooks out of range");
  if (content_dim <= 0) fail("content_dim must be positive");
  if (days <= 0 || holdout_days < 0 || holdout_days >= days) fail("need 0 <= holdout_days < days");
  if (affinity <= 0 || podcast_rate < 0 || audiobook_rate < 0) fail("rates must be non-negative");
  for (double p : {follow_prob, preview_prob, intent_prob, genre_cluster_prob})
    if (p < 0 || p > 1) fail("probabilities must lie in [0, 1]");
  if (weak_lead_days < 1) fail("weak_lead_days must be >= 1");
  if (n_countries <= 0 || n_age_buckets <= 0 || n_languages <= 0 || n_genres <= 0)
    fail("categorical cardinalities must be positive");
}

namespace {

std::string make_id(const char* prefix, int i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s%04d", prefix, i);
  return buf;
}

// Balanced cluster labels in random order.
std::vector<int> assign_clusters(int n, int k, Rng& rng) {
  std::vector<int> c(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) c[static_cast<std::size_t>(i)] = i % k;
  std::shuffle(c.begin(), c.end(), rng);
  return c;
}

struct ItemSpec {
  std::string id;
  ItemType type;
  int cluster;
  double popularity;
  std::int64_t release;
};

}  // namespace

SynthDataset synth_generate(const SynthConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  const auto d = static_cast<std::size_t>(cfg.content_dim);
  std::vector<std::vector<double>> centroids(static_cast<std::size_t>(cfg.n_clusters));
  for (auto& c : centroids) {
    c.resize(d);
    double norm = 0;
    for (auto& x : c) {
      x = normal(rng);
      norm += x * x;
    }
    norm = std::sqrt(norm);
    for (auto& x : c) x /= norm;
  }

  SynthDataset out;
  const auto user_clusters = assign_clusters(cfg.n_users, cfg.n_clusters, rng);
  std::vector<std::string> user_ids;
  for (int u = 0; u < cfg.n_users; ++u) {
    auto id = make_id("u", u);
    user_ids.push_back(id);
    out.user_cluster[id] = user_clusters[static_cast<std::size_t>(u)];
    UserProfile p;
    p.user_id = id;
    p.country = make_id("c", std::uniform_int_distribution<int>(0, cfg.n_countries - 1)(rng));
    p.age_bucket = make_id("age", std::uniform_int_distribution<int>(0, cfg.n_age_buckets - 1)(rng));
    out.users.emplace(id, std::move(p));
  }

  const std::int64_t horizon = static_cast<std::int64_t>(cfg.days) * kSecondsPerDay;
  const std::int64_t new_release = static_cast<std::int64_t>(cfg.days - cfg.holdout_days) * kSecondsPerDay;

  std::vector<ItemSpec> items;
  auto add_items = [&](ItemType type, int n, const char* prefix) {
    const auto clusters = assign_clusters(n, cfg.n_clusters, rng);
    const double shift = -0.5 * cfg.popularity_skew * cfg.popularity_skew;  // mean-one log-normal
    for (int i = 0; i < n; ++i) {
      ItemSpec spec;
      spec.id = make_id(prefix, i);
      spec.type = type;
      spec.cluster = clusters[static_cast<std::size_t>(i)];
      spec.popularity = std::exp(cfg.popularity_skew * normal(rng) + shift);
      spec.release = (type == ItemType::audiobook && i >= n - cfg.n_new_audiobooks) ? new_release : 0;

      CatalogItem item;
      item.item_id = spec.id;
      item.item_type = type;
      item.content_vector.resize(d);
      const double noise_scale = cfg.content_noise / std::sqrt(static_cast<double>(d));
      const auto& centroid = centroids[static_cast<std::size_t>(spec.cluster)];
      for (std::size_t k = 0; k < d; ++k) item.content_vector[k] = centroid[k] + noise_scale * normal(rng);
      item.language = make_id("lang", std::uniform_int_distribution<int>(0, cfg.n_languages - 1)(rng));
      const int genre = unit(rng) < cfg.genre_cluster_prob
                            ? spec.cluster % cfg.n_genres
                            : std::uniform_int_distribution<int>(0, cfg.n_genres - 1)(rng);
      item.genre = make_id("genre", genre);
      out.item_cluster[spec.id] = spec.cluster;
      out.catalog.emplace(spec.id, std::move(item));
      items.push_back(std::move(spec));
    }
  };
  add_items(ItemType::audiobook, cfg.n_audiobooks, "ab");
  add_items(ItemType::podcast, cfg.n_podcasts, "pc");

  std::vector<std::size_t> audiobook_idx;
  for (std::size_t i = 0; i < items.size(); ++i)
    if (items[i].type == ItemType::audiobook) audiobook_idx.push_back(i);

  // Stray weak signals land on audiobooks with the same popularity and
  // cluster preference as streams.
  std::vector<std::discrete_distribution<std::size_t>> stray_pick;
  for (int c = 0; c < cfg.n_clusters; ++c) {
    std::vector<double> w;
    for (auto i : audiobook_idx) w.push_back(items[i].popularity * (items[i].cluster == c ? cfg.affinity : 1.0));
    stray_pick.emplace_back(w.begin(), w.end());
  }

  auto emit = [&](const std::string& user, const ItemSpec& item, Signal s, std::int64_t ts) {
    out.records.push_back({user, item.id, item.type, s, ts});
  };

  struct WeakSpec {
    Signal signal;
    double prob;
    double stray_rate;
  };
  const WeakSpec weak[] = {{Signal::follow, cfg.follow_prob, cfg.stray_follow_rate},
                           {Signal::preview, cfg.preview_prob, cfg.stray_preview_rate},
                           {Signal::intent_to_pay, cfg.intent_prob, cfg.stray_intent_rate}};

  for (std::size_t u = 0; u < user_ids.size(); ++u) {
    const auto& user = user_ids[u];
    const int uc = user_clusters[u];
    for (const auto& item : items) {
      const double base = item.type == ItemType::audiobook ? cfg.audiobook_rate : cfg.podcast_rate;
      const double rate = base * item.popularity * (item.cluster == uc ? cfg.affinity : 1.0);
      const int count = std::poisson_distribution<int>(rate)(rng);
      if (count == 0) continue;
      std::uniform_int_distribution<std::int64_t> when(item.release, horizon - 1);
      std::int64_t first = horizon;
      for (int e = 0; e < count; ++e) {
        const auto ts = when(rng);
        first = std::min(first, ts);
        emit(user, item, Signal::stream, ts);
      }
      if (item.type != ItemType::audiobook) continue;
      for (const auto& w : weak) {
        if (unit(rng) >= w.prob) continue;
        const auto lead = std::uniform_int_distribution<std::int64_t>(
            1, static_cast<std::int64_t>(cfg.weak_lead_days) * kSecondsPerDay)(rng);
        const auto ts = std::max(item.release, first - lead);
        if (ts < first) emit(user, item, w.signal, ts);
      }
    }
    for (const auto& w : weak) {
      const int stray = std::poisson_distribution<int>(w.stray_rate)(rng);
      for (int e = 0; e < stray; ++e) {
        const auto& item = items[audiobook_idx[stray_pick[static_cast<std::size_t>(uc)](rng)]];
        emit(user, item, w.signal, std::uniform_int_distribution<std::int64_t>(item.release, horizon - 1)(rng));
      }
    }
  }

  std::sort(out.records.begin(), out.records.end(), [](const auto& a, const auto& b) {
    return std::tie(a.timestamp, a.user_id, a.item_id, a.signal) <
           std::tie(b.timestamp, b.user_id, b.item_id, b.signal);
  });
  return out;
}

}  // namespace rec
