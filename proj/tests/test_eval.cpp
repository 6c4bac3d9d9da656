#include <gtest/gtest.h>

#include "rec/eval.hpp"
#include "support.hpp"

using namespace rec;

namespace {

std::vector<std::string> list_with_hit_at(std::size_t rank, const std::string& hit) {
  std::vector<std::string> out;
  for (std::size_t i = 1; i <= std::max<std::size_t>(rank, 20); ++i) out.push_back(i == rank ? hit : "x" + std::to_string(i));
  return out;
}

InteractionRecord stream(std::string u, std::string item, std::int64_t ts) {
  return {std::move(u), item, item[0] == 'P' ? ItemType::podcast : ItemType::audiobook, Signal::stream, ts};
}

Catalog audiobooks(std::initializer_list<std::pair<const char*, std::vector<double>>> items) {
  Catalog c;
  for (const auto& [id, v] : items) c.emplace(id, CatalogItem{id, ItemType::audiobook, v, "", ""});
  return c;
}

}  // namespace

TEST(Metrics, HitRateExamples) {
  EXPECT_EQ(hit_rate_at_k({{"u", list_with_hit_at(3, "r")}}, {{"u", {"r"}}}), 1.0);
  EXPECT_EQ(hit_rate_at_k({{"u", list_with_hit_at(15, "r")}}, {{"u", {"r"}}}), 0.0);
  EXPECT_EQ(hit_rate_at_k({{"u", list_with_hit_at(1, "r")}, {"v", list_with_hit_at(11, "r")}},
                          {{"u", {"r"}}, {"v", {"r"}}}),
            0.5);
  EXPECT_THROW(hit_rate_at_k({}, {}), Error);
}

TEST(Metrics, MrrExamples) {
  EXPECT_EQ(mrr({{"u", list_with_hit_at(4, "r")}}, {{"u", {"r"}}}), 0.25);
  EXPECT_EQ(mrr({{"u", list_with_hit_at(101, "r")}}, {{"u", {"r"}}}), 0.0);
  EXPECT_EQ(mrr({{"u", list_with_hit_at(1, "r")}, {"v", list_with_hit_at(1, "s")}}, {{"u", {"r"}}, {"v", {"s"}}}),
            1.0);
  // First relevant rank wins when several items are relevant.
  EXPECT_EQ(mrr({{"u", {"x", "b", "a"}}}, {{"u", {"a", "b"}}}), 0.5);
}

TEST(Metrics, CoverageExamples) {
  std::set<std::string> catalog;
  for (int i = 0; i < 10; ++i) catalog.insert(std::string(1, static_cast<char>('a' + i)));
  EXPECT_DOUBLE_EQ(coverage({{"u", {"a", "b"}}, {"v", {"b", "c"}}}, catalog), 0.3);
  EXPECT_EQ(coverage({}, catalog), 0.0);
  std::set<std::string> big;
  std::vector<std::string> ten;
  for (int i = 0; i < 40; ++i) big.insert("i" + std::to_string(i));
  for (int i = 0; i < 10; ++i) ten.push_back("i" + std::to_string(i));
  EXPECT_DOUBLE_EQ(coverage({{"u", ten}, {"v", ten}}, big), 10.0 / 40.0);
}

TEST(Metrics, MatchBruteForceOnRandomInstances) {
  Rng rng(17);
  for (int trial = 0; trial < 150; ++trial) {
    const int n_items = 5 + trial % 150, n_users = 1 + trial % 12;
    std::set<std::string> catalog;
    std::vector<std::string> pool;
    for (int i = 0; i < n_items; ++i) pool.push_back("i" + std::to_string(i));
    for (int i = 0; i < n_items - 2; ++i) catalog.insert(pool[static_cast<std::size_t>(i)]);
    RankedLists recs;
    RelevantSets rel;
    for (int u = 0; u < n_users; ++u) {
      const std::string uid = "u" + std::to_string(u);
      auto list = pool;
      std::shuffle(list.begin(), list.end(), rng);
      list.resize(std::uniform_int_distribution<std::size_t>(0, list.size())(rng));
      if (u % 5 != 4) recs[uid] = list;  // some users have no list at all
      std::set<std::string> r;
      const int n_rel = 1 + static_cast<int>(rng() % 3);
      for (int j = 0; j < n_rel; ++j) r.insert(pool[rng() % pool.size()]);
      rel[uid] = r;
    }
    for (std::size_t k : {1u, 5u, 10u, 50u}) {
      auto ref = rec::testing::reference_metrics(recs, rel, catalog, k);
      const double hr = hit_rate_at_k(recs, rel, k);
      ASSERT_EQ(hr, ref.hr) << trial;
      EXPECT_GE(hr, 0.0);
      EXPECT_LE(hr, 1.0);
    }
    auto ref = rec::testing::reference_metrics(recs, rel, catalog, 10);
    ASSERT_EQ(mrr(recs, rel), ref.mrr) << trial;
    ASSERT_EQ(coverage(recs, catalog), ref.coverage) << trial;
    double prev = 0.0;
    for (std::size_t k = 1; k <= 120; ++k) {
      const double hr = hit_rate_at_k(recs, rel, k);
      EXPECT_GE(hr, prev);
      prev = hr;
    }
  }
}

TEST(Baselines, PopularityOrderAndTies) {
  auto c = audiobooks({{"A", {0}}, {"B", {0}}, {"C", {0}}, {"D", {0}}});
  std::vector<InteractionRecord> log;
  for (int i = 0; i < 5; ++i) log.push_back(stream("u" + std::to_string(i), "A", 10));
  for (int i = 0; i < 3; ++i) log.push_back(stream("u" + std::to_string(i), "B", 10));
  log.push_back(stream("u1", "C", 10));
  FeatureWindow w{100, 90};
  auto pop = make_popularity(log, c, ItemType::audiobook, w);
  EXPECT_EQ(pop->recommend("anyone", {}, 10), (std::vector<std::string>{"A", "B", "C", "D"}));
  EXPECT_EQ(pop->recommend("anyone", {"A"}, 2), (std::vector<std::string>{"B", "C"}));
  std::vector<InteractionRecord> tied{stream("u", "B", 10), stream("v", "B", 11), stream("u", "A", 12), stream("v", "A", 13)};
  EXPECT_EQ(make_popularity(tied, c, ItemType::audiobook, w)->recommend("x", {}, 2), (std::vector<std::string>{"A", "B"}));
}

TEST(Baselines, ContentKnnExamples) {
  const double h = std::sqrt(0.5);
  auto c = audiobooks({{"A", {1, 0}}, {"B", {0, 1}}, {"D", {h, h}}, {"E", {1, 0.1}}, {"F", {-1, 0}}});
  FeatureWindow w{100, 90};
  std::vector<InteractionRecord> log{stream("u", "A", 10), stream("u", "B", 11), stream("v", "E", 12),
                                     stream("v", "E", 13), stream("p", "F", 14)};
  auto pop = make_popularity(log, c, ItemType::audiobook, w);
  auto knn = make_content_knn(log, c, ItemType::audiobook, w, pop);
  auto consumed = consumed_items(log, ItemType::audiobook);
  auto u = knn->recommend("u", consumed["u"], 3);
  EXPECT_EQ(u.front(), "D");
  auto v = knn->recommend("v", consumed["v"], 4);
  EXPECT_EQ(v.front(), "A");
  EXPECT_EQ(std::count(v.begin(), v.end(), "E"), 0);
  EXPECT_EQ(knn->recommend("stranger", {}, 5), pop->recommend("stranger", {}, 5));
}

TEST(Evaluation, OracleIsPerfectAndConsumedItemsNeverReturn) {
  Rng rng(3);
  auto catalog = rec::testing::random_catalog(30, 20, 2, rng);
  auto log = rec::testing::random_streams(catalog, 40, 0.1, rng);
  auto split = timeline_split(log, 800);
  auto segs = user_segments(split);
  auto rel = relevant_sets(split, ItemType::audiobook);
  ASSERT_FALSE(rel.empty());
  auto oracle = evaluate(*make_oracle(rel), split, segs, ItemType::audiobook, catalog);
  const auto& all = oracle.reports[2];
  EXPECT_EQ(all.segment, Segment::all);
  EXPECT_EQ(all.hr_at_k, 1.0);
  EXPECT_EQ(all.mrr, 1.0);

  auto pop = make_popularity(split.train, catalog, ItemType::audiobook, FeatureWindow{800, 3650});
  auto popular = evaluate(*pop, split, segs, ItemType::audiobook, catalog);
  EXPECT_LT(popular.reports[2].hr_at_k, all.hr_at_k);
  auto consumed = consumed_items(split.train, ItemType::audiobook);
  for (const auto& [u, list] : popular.recommendations) {
    EXPECT_LE(list.size(), kRecommendationDepth);
    for (const auto& id : list) {
      EXPECT_FALSE(consumed[u].count(id)) << u << " " << id;
      EXPECT_EQ(catalog.at(id).item_type, ItemType::audiobook);
    }
  }
  for (const auto& r : popular.reports) {
    EXPECT_GE(r.hr_at_k, 0.0);
    EXPECT_LE(r.hr_at_k, 1.0);
  }
}

TEST(Evaluation, RelevantSetsDropTrainConsumption) {
  DatasetSplit split;
  split.split_time = 50;
  split.train = {stream("u", "A", 1), stream("u", "P", 2)};
  split.holdout = {stream("u", "A", 60), stream("u", "B", 61), stream("v", "A", 62), stream("w", "P", 63)};
  auto rel = relevant_sets(split, ItemType::audiobook);
  EXPECT_EQ(rel, (RelevantSets{{"u", {"B"}}, {"v", {"A"}}}));
}

TEST(Evaluation, NoEvaluableUsersIsFatal) {
  DatasetSplit split;
  split.split_time = 50;
  split.train = {stream("u", "A", 1)};
  split.holdout = {stream("u", "A", 60)};
  auto c = audiobooks({{"A", {0}}, {"B", {0}}});
  auto pop = make_popularity(split.train, c, ItemType::audiobook, FeatureWindow{50, 90});
  EXPECT_THROW(evaluate(*pop, split, user_segments(split), ItemType::audiobook, c), Error);
}

TEST(Tiers, EqualCountBucketsAndMembership) {
  Catalog c;
  std::vector<InteractionRecord> train;
  for (int i = 0; i < 10; ++i) {
    std::string id = "A" + std::to_string(i);
    c.emplace(id, CatalogItem{id, ItemType::audiobook, {0}, "", ""});
    for (int n = 0; n < 10 - i; ++n) train.push_back(stream("t" + std::to_string(n), id, 1));
  }
  auto tiers = popularity_tiers(train, c, ItemType::audiobook);
  ASSERT_EQ(tiers.size(), 5u);
  EXPECT_EQ(tiers[0], (std::vector<std::string>{"A0", "A1"}));
  EXPECT_EQ(tiers[3], (std::vector<std::string>{"A6", "A7"}));

  auto uniform = popularity_tiers({}, c, ItemType::audiobook);
  EXPECT_EQ(uniform[0], (std::vector<std::string>{"A0", "A1"}));
  Catalog four;
  for (const char* id : {"A", "B", "C", "D"}) four.emplace(id, CatalogItem{id, ItemType::audiobook, {0}, "", ""});
  EXPECT_THROW(popularity_tiers({}, four, ItemType::audiobook), Error);

  DatasetSplit split;
  split.split_time = 50;
  split.train = train;
  split.train.push_back(stream("u", "A9", 2));
  split.holdout = {stream("u", "A0", 60), stream("u", "A6", 61)};
  auto segs = user_segments(split);
  auto oracle = make_oracle(relevant_sets(split, ItemType::audiobook));
  auto reports = tiered_metrics(*oracle, split, segs, ItemType::audiobook, c);
  std::map<std::string, std::size_t> users;
  for (const auto& r : reports) users[r.tier] = r.n_users;
  EXPECT_EQ(users["1"], 1u);
  EXPECT_EQ(users["4"], 1u);
  EXPECT_EQ(users["2"], 0u);
  EXPECT_EQ(users["long_tail"], 1u);
}

TEST(Probe, PairingsOnClusteredData) {
  // Two audiobook clusters joined by co-listening; a hub podcast links a
  // few audiobooks with no direct audiobook edge.
  std::array<std::vector<std::string>, 2> ids;
  for (int i = 0; i < 8; ++i) ids[0].push_back("a" + std::to_string(i));
  ids[1] = {"p0"};
  Mat x = Mat::Zero(2, 9);
  EdgeSets e;
  for (NodeId a = 0; a < 4; ++a)
    for (NodeId b = a + 1; b < 4; ++b) {
      e[0].push_back({a, b});
      e[0].push_back({static_cast<NodeId>(a + 4), static_cast<NodeId>(b + 4)});
    }
  std::sort(e[0].begin(), e[0].end());
  e[1] = {{0, 8}, {4, 8}};
  HeteroGraph g(ids, x, e);
  Mat v(2, 9);
  for (int i = 0; i < 8; ++i) v.col(i) = i < 4 ? Vec::Unit(2, 0) : Vec::Unit(2, 1);
  v.col(8) = Vec::Ones(2).normalized();
  EXPECT_EQ(eligible_pairs(g, Pairing::co_listened).size(), 12u);
  EXPECT_EQ(eligible_pairs(g, Pairing::shared_podcast_only), (std::vector<Edge>{{0, 4}}));
  Rng rng(1);
  auto co = pair_similarity_probe(g, v, Pairing::co_listened, 100, rng);
  auto rnd = pair_similarity_probe(g, v, Pairing::random, 2000, rng);
  EXPECT_EQ(co.mean, 1.0);
  EXPECT_GT(co.mean, rnd.mean);
  EXPECT_NEAR(rnd.mean, 3.0 / 7.0, 0.05);  // P(same cluster) for distinct random pairs
  auto sp = pair_similarity_probe(g, v, Pairing::shared_podcast_only, 10, rng);
  EXPECT_EQ(sp.mean, 0.0);
  EXPECT_EQ(parse_pairing("shared-podcast-only"), Pairing::shared_podcast_only);

  EdgeSets none;
  none[0] = e[0];
  EXPECT_THROW(pair_similarity_probe(g.with_edges(none), v, Pairing::shared_podcast_only, 10, rng), Error);
}

TEST(Probe, OrthonormalRandomPairsAverageNearZero) {
  std::array<std::vector<std::string>, 2> ids;
  for (int i = 0; i < 50; ++i) ids[0].push_back("a" + std::to_string(100 + i));
  HeteroGraph g(ids, Mat::Zero(1, 50), EdgeSets{});
  Mat v = Mat::Identity(50, 50);
  Rng rng(2);
  EXPECT_EQ(pair_similarity_probe(g, v, Pairing::random, 500, rng).mean, 0.0);
}
