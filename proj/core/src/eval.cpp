#include "rec/eval.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include <nlohmann/json.hpp>

namespace rec {

using nlohmann::json;

std::string_view to_string(Segment s) {
  switch (s) {
    case Segment::warm: return "warm";
    case Segment::cold: return "cold";
    case Segment::all: return "all";
  }
  return "?";
}

// ---------------------------------------------------------------- metrics

namespace {

void check_relevant(const RelevantSets& relevant) {
  if (relevant.empty()) throw Error(ErrorKind::validation, "metrics: no users to evaluate");
  for (const auto& [u, items] : relevant)
    if (items.empty()) throw Error(ErrorKind::validation, "metrics: user '" + u + "' has no relevant items");
}

const std::vector<std::string>& list_of(const RankedLists& recs, const std::string& user) {
  static const std::vector<std::string> empty;
  auto it = recs.find(user);
  return it == recs.end() ? empty : it->second;
}

}  // namespace

double hit_rate_at_k(const RankedLists& recommendations, const RelevantSets& relevant, std::size_t k) {
  check_relevant(relevant);
  if (k == 0) throw Error(ErrorKind::validation, "hit_rate_at_k: k must be >= 1");
  const auto depth = std::min(k, kRecommendationDepth);
  std::size_t hits = 0;
  for (const auto& [u, items] : relevant) {
    const auto& list = list_of(recommendations, u);
    const auto n = std::min(depth, list.size());
    for (std::size_t i = 0; i < n; ++i)
      if (items.contains(list[i])) {
        ++hits;
        break;
      }
  }
  return static_cast<double>(hits) / static_cast<double>(relevant.size());
}

double mrr(const RankedLists& recommendations, const RelevantSets& relevant) {
  check_relevant(relevant);
  double total = 0.0;
  for (const auto& [u, items] : relevant) {
    const auto& list = list_of(recommendations, u);
    const auto n = std::min(kRecommendationDepth, list.size());
    for (std::size_t i = 0; i < n; ++i)
      if (items.contains(list[i])) {
        total += 1.0 / static_cast<double>(i + 1);
        break;
      }
  }
  return total / static_cast<double>(relevant.size());
}

double coverage(const RankedLists& recommendations, const std::set<std::string>& catalog) {
  if (catalog.empty()) return 0.0;
  std::set<std::string_view> seen;
  for (const auto& [u, list] : recommendations) {
    const auto n = std::min(kRecommendationDepth, list.size());
    for (std::size_t i = 0; i < n; ++i)
      if (catalog.contains(list[i])) seen.insert(list[i]);
  }
  return static_cast<double>(seen.size()) / static_cast<double>(catalog.size());
}

json to_json(const MetricsReport& r) {
  nlohmann::ordered_json j;
  j["model"] = r.model;
  j["segment"] = std::string(to_string(r.segment));
  if (!r.tier.empty()) j["tier"] = r.tier;
  j["k"] = r.k;
  j["hr_at_k"] = r.hr_at_k;
  j["mrr"] = r.mrr;
  j["coverage"] = r.coverage;
  j["n_users"] = r.n_users;
  return json(j);
}

std::string reports_csv(const std::vector<MetricsReport>& reports) {
  std::ostringstream out;
  out.precision(17);
  out << "model,segment,tier,k,hr_at_k,mrr,coverage,n_users\n";
  for (const auto& r : reports)
    out << r.model << ',' << to_string(r.segment) << ',' << r.tier << ',' << r.k << ',' << r.hr_at_k << ','
        << r.mrr << ',' << r.coverage << ',' << r.n_users << '\n';
  return out.str();
}

// ---------------------------------------------------------------- recommenders

namespace {

bool in_window(const InteractionRecord& r, const FeatureWindow& w) {
  return r.timestamp >= w.end - static_cast<std::int64_t>(w.days) * kSecondsPerDay && r.timestamp < w.end;
}

class RankedListRecommender final : public Recommender {
 public:
  RankedListRecommender(std::string name, std::vector<std::string> ranking)
      : name_(std::move(name)), ranking_(std::move(ranking)) {}

  std::string name() const override { return name_; }

  std::vector<std::string> recommend(const std::string&, const std::set<std::string>& exclude,
                                     std::size_t n) const override {
    std::vector<std::string> out;
    for (const auto& id : ranking_) {
      if (out.size() >= n) break;
      if (!exclude.contains(id)) out.push_back(id);
    }
    return out;
  }

 private:
  std::string name_;
  std::vector<std::string> ranking_;
};

class VectorRecommender final : public Recommender {
 public:
  VectorRecommender(std::string name, std::map<std::string, Vec> queries, RecIndex index,
                    std::shared_ptr<const Recommender> fallback)
      : name_(std::move(name)), queries_(std::move(queries)), index_(std::move(index)), fallback_(std::move(fallback)) {}

  std::string name() const override { return name_; }

  std::vector<std::string> recommend(const std::string& user, const std::set<std::string>& exclude,
                                     std::size_t n) const override {
    auto it = queries_.find(user);
    if (it == queries_.end() || it->second.isZero(0.0)) {
      if (!fallback_) return {};
      return fallback_->recommend(user, exclude, n);
    }
    std::vector<std::string> out;
    if (n == 0) return out;
    for (auto& s : query_topk(index_, it->second, n, exclude)) out.push_back(std::move(s.item_id));
    return out;
  }

 private:
  std::string name_;
  std::map<std::string, Vec> queries_;
  RecIndex index_;
  std::shared_ptr<const Recommender> fallback_;
};

class OracleRecommender final : public Recommender {
 public:
  explicit OracleRecommender(RelevantSets relevant) : relevant_(std::move(relevant)) {}
  std::string name() const override { return "oracle"; }
  std::vector<std::string> recommend(const std::string& user, const std::set<std::string>& exclude,
                                     std::size_t n) const override {
    std::vector<std::string> out;
    auto it = relevant_.find(user);
    if (it == relevant_.end()) return out;
    for (const auto& id : it->second) {
      if (out.size() >= n) break;
      if (!exclude.contains(id)) out.push_back(id);
    }
    return out;
  }

 private:
  RelevantSets relevant_;
};

// Mean of per-item vectors over the target-type items each user touched in the window.
template <typename Lookup>
std::map<std::string, Vec> mean_queries(const std::vector<InteractionRecord>& train, ItemType target,
                                        const FeatureWindow& window, Lookup lookup) {
  std::map<std::string, std::set<std::string>> touched;
  for (const auto& r : train)
    if (r.item_type == target && in_window(r, window)) touched[r.user_id].insert(r.item_id);
  std::map<std::string, Vec> out;
  for (const auto& [u, items] : touched) {
    Vec sum;
    std::size_t n = 0;
    for (const auto& id : items) {
      auto v = lookup(id);
      if (!v) continue;
      if (n == 0)
        sum = *v;
      else
        sum += *v;
      ++n;
    }
    if (n > 0) out.emplace(u, sum / static_cast<double>(n));
  }
  return out;
}

}  // namespace

std::shared_ptr<const Recommender> make_popularity(const std::vector<InteractionRecord>& train, const Catalog& catalog,
                                                   ItemType target, const FeatureWindow& window) {
  if (train.empty()) throw Error(ErrorKind::validation, "popularity baseline: empty train window");
  std::map<std::string, std::size_t> counts;
  for (const auto& [id, item] : catalog)
    if (item.item_type == target) counts[id] = 0;
  for (const auto& r : train)
    if (r.signal == Signal::stream && r.item_type == target && in_window(r, window)) {
      auto it = counts.find(r.item_id);
      if (it != counts.end()) ++it->second;
    }
  std::vector<std::pair<std::string, std::size_t>> ranked(counts.begin(), counts.end());
  std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  std::vector<std::string> ids;
  for (auto& [id, c] : ranked) ids.push_back(id);
  return std::make_shared<RankedListRecommender>("popularity", std::move(ids));
}

std::shared_ptr<const Recommender> make_vector_recommender(std::string name, std::map<std::string, Vec> queries,
                                                           RecIndex index,
                                                           std::shared_ptr<const Recommender> fallback) {
  return std::make_shared<VectorRecommender>(std::move(name), std::move(queries), std::move(index),
                                             std::move(fallback));
}

std::shared_ptr<const Recommender> make_content_knn(const std::vector<InteractionRecord>& train,
                                                    const Catalog& catalog, ItemType target,
                                                    const FeatureWindow& window,
                                                    std::shared_ptr<const Recommender> fallback) {
  std::map<std::string, Vec> items;
  for (const auto& [id, item] : catalog)
    if (item.item_type == target)
      items.emplace(id, Eigen::Map<const Vec>(item.content_vector.data(),
                                              static_cast<Eigen::Index>(item.content_vector.size())));
  if (items.empty()) throw Error(ErrorKind::validation, "content_knn: no catalog items of the target type");
  auto queries = mean_queries(train, target, window, [&](const std::string& id) -> std::optional<Vec> {
    auto it = items.find(id);
    if (it == items.end()) return std::nullopt;
    return it->second;
  });
  return make_vector_recommender("content_knn", std::move(queries), build_index(items), std::move(fallback));
}

std::shared_ptr<const Recommender> make_hgnn_only(const std::vector<InteractionRecord>& train, const Catalog& catalog,
                                                  const NodeEmbeddingTable& embeddings, ItemType target,
                                                  const FeatureWindow& window,
                                                  std::shared_ptr<const Recommender> fallback) {
  std::map<std::string, Vec> items;
  for (const auto& [id, item] : catalog) {
    if (item.item_type != target) continue;
    auto i = embeddings.index_of(id);
    if (i) items.emplace(id, embeddings.z.col(static_cast<Eigen::Index>(*i)));
  }
  if (items.empty()) throw Error(ErrorKind::validation, "hgnn_only: no embedded items of the target type");
  auto queries = mean_queries(train, target, window, [&](const std::string& id) -> std::optional<Vec> {
    auto it = items.find(id);
    if (it == items.end()) return std::nullopt;
    return it->second;
  });
  return make_vector_recommender("hgnn_only", std::move(queries), build_index(items), std::move(fallback));
}

std::shared_ptr<const Recommender> make_oracle(RelevantSets relevant) {
  return std::make_shared<OracleRecommender>(std::move(relevant));
}

// ---------------------------------------------------------------- evaluation

std::map<std::string, std::set<std::string>> consumed_items(const std::vector<InteractionRecord>& train,
                                                            ItemType target) {
  std::map<std::string, std::set<std::string>> out;
  for (const auto& r : train)
    if (r.signal == Signal::stream && r.item_type == target) out[r.user_id].insert(r.item_id);
  return out;
}

RelevantSets relevant_sets(const DatasetSplit& split, ItemType target) {
  const auto consumed = consumed_items(split.train, target);
  RelevantSets out;
  for (const auto& r : split.holdout) {
    if (r.signal != Signal::stream || r.item_type != target) continue;
    auto c = consumed.find(r.user_id);
    if (c != consumed.end() && c->second.contains(r.item_id)) continue;
    out[r.user_id].insert(r.item_id);
  }
  return out;
}

RankedLists recommend_all(const Recommender& recommender, const std::set<std::string>& users,
                          const std::map<std::string, std::set<std::string>>& consumed, std::size_t n) {
  static const std::set<std::string> none;
  RankedLists out;
  for (const auto& u : users) {
    auto c = consumed.find(u);
    out.emplace(u, recommender.recommend(u, c == consumed.end() ? none : c->second, n));
  }
  return out;
}

namespace {

std::set<std::string> target_catalog(const Catalog& catalog, ItemType target) {
  std::set<std::string> out;
  for (const auto& [id, item] : catalog)
    if (item.item_type == target) out.insert(id);
  return out;
}

const std::set<std::string>* segment_users(const UserSegments& segments, Segment s) {
  switch (s) {
    case Segment::warm: return &segments.warm;
    case Segment::cold: return &segments.cold;
    case Segment::all: return nullptr;
  }
  return nullptr;
}

MetricsReport score(const std::string& model, Segment segment, const RankedLists& recs, const RelevantSets& relevant,
                    const std::set<std::string>& catalog, std::size_t k) {
  MetricsReport r;
  r.model = model;
  r.segment = segment;
  r.k = k;
  r.n_users = relevant.size();
  if (relevant.empty()) return r;
  RankedLists subset;
  for (const auto& [u, items] : relevant) {
    auto it = recs.find(u);
    if (it != recs.end()) subset.emplace(u, it->second);
  }
  r.hr_at_k = hit_rate_at_k(subset, relevant, k);
  r.mrr = mrr(subset, relevant);
  r.coverage = coverage(subset, catalog);
  return r;
}

RelevantSets restrict_users(const RelevantSets& relevant, const std::set<std::string>* users) {
  if (!users) return relevant;
  RelevantSets out;
  for (const auto& [u, items] : relevant)
    if (users->contains(u)) out.emplace(u, items);
  return out;
}

}  // namespace

EvaluationResult evaluate(const Recommender& recommender, const DatasetSplit& split, const UserSegments& segments,
                          ItemType target, const Catalog& catalog, std::size_t k) {
  const auto relevant = relevant_sets(split, target);
  if (relevant.empty()) throw Error(ErrorKind::validation, "evaluate: no user has a relevant holdout item");
  const auto catalog_ids = target_catalog(catalog, target);
  std::set<std::string> users;
  for (const auto& [u, items] : relevant) users.insert(u);

  EvaluationResult result;
  result.recommendations = recommend_all(recommender, users, consumed_items(split.train, target));
  for (auto s : {Segment::warm, Segment::cold, Segment::all})
    result.reports.push_back(score(recommender.name(), s, result.recommendations,
                                   restrict_users(relevant, segment_users(segments, s)), catalog_ids, k));
  return result;
}

std::vector<std::vector<std::string>> popularity_tiers(const std::vector<InteractionRecord>& train,
                                                       const Catalog& catalog, ItemType target) {
  std::map<std::string, std::size_t> counts;
  for (const auto& [id, item] : catalog)
    if (item.item_type == target) counts[id] = 0;
  if (counts.size() < 5)
    throw Error(ErrorKind::validation, "popularity_tiers: need at least 5 items, have " + std::to_string(counts.size()));
  for (const auto& r : train)
    if (r.signal == Signal::stream && r.item_type == target) {
      auto it = counts.find(r.item_id);
      if (it != counts.end()) ++it->second;
    }
  std::vector<std::pair<std::string, std::size_t>> ranked(counts.begin(), counts.end());
  std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  std::vector<std::vector<std::string>> tiers(5);
  const auto n = ranked.size();
  for (std::size_t t = 0; t < 5; ++t)
    for (std::size_t i = t * n / 5; i < (t + 1) * n / 5; ++i) tiers[t].push_back(ranked[i].first);
  return tiers;
}

std::vector<MetricsReport> tiered_metrics(const Recommender& recommender, const DatasetSplit& split,
                                          const UserSegments& segments, ItemType target, const Catalog& catalog,
                                          Segment segment, std::size_t k) {
  const auto tiers = popularity_tiers(split.train, catalog, target);
  const auto relevant = restrict_users(relevant_sets(split, target), segment_users(segments, segment));
  std::set<std::string> users;
  for (const auto& [u, items] : relevant) users.insert(u);
  const auto recs = recommend_all(recommender, users, consumed_items(split.train, target));

  std::vector<std::pair<std::string, std::set<std::string>>> groups;
  for (std::size_t t = 0; t < tiers.size(); ++t)
    groups.emplace_back(std::to_string(t + 1), std::set<std::string>(tiers[t].begin(), tiers[t].end()));
  std::set<std::string> tail;
  for (std::size_t t = 2; t < tiers.size(); ++t) tail.insert(tiers[t].begin(), tiers[t].end());
  groups.emplace_back("long_tail", std::move(tail));

  std::vector<MetricsReport> out;
  for (const auto& [label, items] : groups) {
    RelevantSets in_tier;
    for (const auto& [u, rel] : relevant) {
      std::set<std::string> keep;
      std::set_intersection(rel.begin(), rel.end(), items.begin(), items.end(), std::inserter(keep, keep.end()));
      if (!keep.empty()) in_tier.emplace(u, std::move(keep));
    }
    auto r = score(recommender.name(), segment, recs, in_tier, items, k);
    r.tier = label;
    out.push_back(std::move(r));
  }
  return out;
}

// ---------------------------------------------------------------- similarity probe

std::string_view to_string(Pairing p) {
  switch (p) {
    case Pairing::co_listened: return "co-listened";
    case Pairing::shared_podcast_only: return "shared-podcast-only";
    case Pairing::random: return "random";
  }
  return "?";
}

std::optional<Pairing> parse_pairing(std::string_view s) {
  for (auto p : {Pairing::co_listened, Pairing::shared_podcast_only, Pairing::random})
    if (s == to_string(p)) return p;
  return std::nullopt;
}

std::vector<Edge> eligible_pairs(const HeteroGraph& graph, Pairing pairing) {
  switch (pairing) {
    case Pairing::co_listened: return graph.edges(Relation::aa);
    case Pairing::shared_podcast_only: {
      std::set<Edge> pairs;
      const auto n_a = graph.num_nodes(ItemType::audiobook);
      for (NodeId p = static_cast<NodeId>(n_a); p < graph.num_nodes(); ++p) {
        auto nb = graph.neighbors(p, Relation::ap);
        for (std::size_t i = 0; i < nb.size(); ++i)
          for (std::size_t j = i + 1; j < nb.size(); ++j) {
            Edge e{std::min(nb[i], nb[j]), std::max(nb[i], nb[j])};
            if (!graph.has_edge(e.u, e.v)) pairs.insert(e);
          }
      }
      return {pairs.begin(), pairs.end()};
    }
    case Pairing::random: break;
  }
  throw Error(ErrorKind::validation, "eligible_pairs: random pairing is not enumerated");
}

SimilaritySummary pair_similarity_probe(const HeteroGraph& graph, const Mat& vectors, Pairing pairing,
                                        std::size_t n_pairs, Rng& rng) {
  if (static_cast<std::size_t>(vectors.cols()) != graph.num_nodes())
    throw Error(ErrorKind::validation, "pair_similarity_probe: need one vector per node");
  if (n_pairs == 0) throw Error(ErrorKind::validation, "pair_similarity_probe: n_pairs must be positive");
  SimilaritySummary s;
  s.pairing = pairing;
  std::vector<Edge> sample;
  if (pairing == Pairing::random) {
    const auto n_a = graph.num_nodes(ItemType::audiobook);
    if (n_a < 2) throw Error(ErrorKind::validation, "pair_similarity_probe: fewer than two audiobooks");
    std::uniform_int_distribution<NodeId> pick(0, static_cast<NodeId>(n_a - 1));
    while (sample.size() < n_pairs) {
      const NodeId a = pick(rng), b = pick(rng);
      if (a != b) sample.push_back({std::min(a, b), std::max(a, b)});
    }
  } else {
    auto all = eligible_pairs(graph, pairing);
    s.eligible = all.size();
    if (all.empty())
      throw Error(ErrorKind::validation,
                  "pair_similarity_probe: no eligible " + std::string(to_string(pairing)) + " pairs");
    std::sample(all.begin(), all.end(), std::back_inserter(sample), std::min(n_pairs, all.size()), rng);
  }
  std::vector<double> sims;
  for (const auto& e : sample) {
    const auto a = vectors.col(e.u);
    const auto b = vectors.col(e.v);
    const double denom = a.norm() * b.norm();
    sims.push_back(denom > 0 ? a.dot(b) / denom : 0.0);
  }
  s.n_pairs = sims.size();
  double sum = 0.0;
  for (double x : sims) sum += x;
  s.mean = sum / static_cast<double>(sims.size());
  double sq = 0.0;
  for (double x : sims) sq += (x - s.mean) * (x - s.mean);
  s.stddev = std::sqrt(sq / static_cast<double>(sims.size()));
  return s;
}

json to_json(const SimilaritySummary& s) {
  nlohmann::ordered_json j;
  j["pairing"] = std::string(to_string(s.pairing));
  j["eligible"] = s.eligible;
  j["n_pairs"] = s.n_pairs;
  j["mean"] = s.mean;
  j["stddev"] = s.stddev;
  return json(j);
}

}  // namespace rec
