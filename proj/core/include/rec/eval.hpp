#pragma once

#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "rec/common.hpp"
#include "rec/data.hpp"
#include "rec/graph.hpp"
#include "rec/index.hpp"
#include "rec/two_tower.hpp"

namespace rec {

inline constexpr std::size_t kRecommendationDepth = 100;

enum class Segment { warm, cold, all };
std::string_view to_string(Segment s);

using RankedLists = std::map<std::string, std::vector<std::string>>;
using RelevantSets = std::map<std::string, std::set<std::string>>;

// The evaluated users are the keys of `relevant`; each needs a non-empty
// set. A user without a list counts as an empty list. Lists are read up to
// kRecommendationDepth entries.
double hit_rate_at_k(const RankedLists& recommendations, const RelevantSets& relevant, std::size_t k = 10);
double mrr(const RankedLists& recommendations, const RelevantSets& relevant);
/// |union of recommended catalog ids| / |catalog|.
double coverage(const RankedLists& recommendations, const std::set<std::string>& catalog);

struct MetricsReport {
  std::string model;
  Segment segment = Segment::all;
  std::string tier;  // empty unless produced by tiered_metrics
  std::size_t k = 10;
  double hr_at_k = 0.0;
  double mrr = 0.0;
  double coverage = 0.0;
  std::size_t n_users = 0;
};

nlohmann::json to_json(const MetricsReport& r);
std::string reports_csv(const std::vector<MetricsReport>& reports);

class Recommender {
 public:
  virtual ~Recommender() = default;
  virtual std::string name() const = 0;
  /// At most n target-type ids, best first, none of them in `exclude`.
  virtual std::vector<std::string> recommend(const std::string& user_id, const std::set<std::string>& exclude,
                                             std::size_t n) const = 0;
};

/// Global ranking by stream count in the window (ties by id), then every
/// remaining catalog item of the target type by id.
std::shared_ptr<const Recommender> make_popularity(const std::vector<InteractionRecord>& train, const Catalog& catalog,
                                                   ItemType target, const FeatureWindow& window);

/// Ranks an index by dot product with a per-user query. Users without a
/// query, or with an all-zero one, are served by `fallback`.
std::shared_ptr<const Recommender> make_vector_recommender(std::string name, std::map<std::string, Vec> queries,
                                                           RecIndex index,
                                                           std::shared_ptr<const Recommender> fallback);

/// Mean content vector of the target-type items a user touched (streams and
/// weak signals) in the window.
std::shared_ptr<const Recommender> make_content_knn(const std::vector<InteractionRecord>& train,
                                                    const Catalog& catalog, ItemType target,
                                                    const FeatureWindow& window,
                                                    std::shared_ptr<const Recommender> fallback);

/// Mean HGNN embedding of the target-type items a user touched, matched
/// against the items' own embeddings.
std::shared_ptr<const Recommender> make_hgnn_only(const std::vector<InteractionRecord>& train, const Catalog& catalog,
                                                  const NodeEmbeddingTable& embeddings, ItemType target,
                                                  const FeatureWindow& window,
                                                  std::shared_ptr<const Recommender> fallback);

/// Serves each user their own relevant set. Upper bound for the metrics.
std::shared_ptr<const Recommender> make_oracle(RelevantSets relevant);

/// Items of the target type the user streamed in train.
std::map<std::string, std::set<std::string>> consumed_items(const std::vector<InteractionRecord>& train,
                                                            ItemType target);

/// Holdout streams of the target type, minus the user's train-consumed items.
/// Users left with nothing are dropped.
RelevantSets relevant_sets(const DatasetSplit& split, ItemType target);

RankedLists recommend_all(const Recommender& recommender, const std::set<std::string>& users,
                          const std::map<std::string, std::set<std::string>>& consumed,
                          std::size_t n = kRecommendationDepth);

struct EvaluationResult {
  std::vector<MetricsReport> reports;  // warm, cold, all
  RankedLists recommendations;
};

/// Segments without evaluable users yield a report with n_users = 0.
EvaluationResult evaluate(const Recommender& recommender, const DatasetSplit& split, const UserSegments& segments,
                          ItemType target, const Catalog& catalog, std::size_t k = 10);

/// Catalog items of the target type sorted by train stream count
/// (descending, ties by id) and cut into 5 equal-count tiers.
std::vector<std::vector<std::string>> popularity_tiers(const std::vector<InteractionRecord>& train,
                                                       const Catalog& catalog, ItemType target);

/// Tiers "1".."5" plus "long_tail" (tiers 3-5). A user's relevant set is
/// restricted to the tier's items; users with nothing left are skipped.
std::vector<MetricsReport> tiered_metrics(const Recommender& recommender, const DatasetSplit& split,
                                          const UserSegments& segments, ItemType target, const Catalog& catalog,
                                          Segment segment = Segment::all, std::size_t k = 10);

enum class Pairing { co_listened, shared_podcast_only, random };
std::string_view to_string(Pairing p);
std::optional<Pairing> parse_pairing(std::string_view s);

struct SimilaritySummary {
  Pairing pairing = Pairing::random;
  std::size_t eligible = 0;  // 0 for random pairing (not enumerated)
  std::size_t n_pairs = 0;
  double mean = 0.0;
  double stddev = 0.0;
};

/// Audiobook pairs of the requested kind; cosine similarity of the columns
/// of `vectors` (one per global node id).
SimilaritySummary pair_similarity_probe(const HeteroGraph& graph, const Mat& vectors, Pairing pairing,
                                        std::size_t n_pairs, Rng& rng);

/// Every eligible audiobook pair of the given kind (not for Pairing::random).
std::vector<Edge> eligible_pairs(const HeteroGraph& graph, Pairing pairing);

nlohmann::json to_json(const SimilaritySummary& s);

}  // namespace rec
