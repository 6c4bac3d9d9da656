#include <gtest/gtest.h>

#include "rec/graph.hpp"
#include "support.hpp"

using namespace rec;
using rec::testing::IdPair;

namespace {

Catalog small_catalog() {
  Catalog c;
  for (auto [id, t] : {std::pair{"A1", ItemType::audiobook}, std::pair{"A2", ItemType::audiobook},
                       std::pair{"A3", ItemType::audiobook}, std::pair{"P1", ItemType::podcast},
                       std::pair{"P2", ItemType::podcast}})
    c.emplace(id, CatalogItem{id, t, {1.0, 0.0}, "", ""});
  return c;
}

InteractionRecord stream(std::string u, std::string i, std::int64_t ts = 0) {
  return {std::move(u), i, i[0] == 'A' ? ItemType::audiobook : ItemType::podcast, Signal::stream, ts};
}

}  // namespace

TEST(BuildGraph, PairsComeFromSingleUsers) {
  auto g = build_colisten_graph({stream("U1", "A1"), stream("U1", "P1"), stream("U2", "P1"), stream("U2", "P2")},
                                small_catalog());
  EXPECT_EQ(rec::testing::edge_ids(g), (std::set<IdPair>{{"A1", "P1"}, {"P1", "P2"}}));
  auto s = graph_stats(g);
  EXPECT_EQ(s.edges, (std::array<std::size_t, 3>{0, 1, 1}));
  EXPECT_EQ(s.nodes, (std::array<std::size_t, 2>{3, 2}));
}

TEST(BuildGraph, SingleItemGivesNoEdges) {
  auto g = build_colisten_graph({stream("U1", "A1"), stream("U1", "A1", 5)}, small_catalog());
  EXPECT_EQ(g.num_edges(), 0u);
  auto s = graph_stats(g);
  for (auto r : kRelations) {
    EXPECT_EQ(s.edges[static_cast<std::size_t>(r)], 0u);
    EXPECT_EQ(s.degree[static_cast<std::size_t>(r)].max, 0u);
  }
}

TEST(BuildGraph, MinCoUsers) {
  std::vector<InteractionRecord> log{stream("U1", "A1"), stream("U1", "A2"), stream("U2", "A1"), stream("U2", "A2")};
  GraphBuildOptions opt;
  opt.min_co_users = 2;
  EXPECT_EQ(build_colisten_graph(log, small_catalog(), opt).num_edges(Relation::aa), 1u);
  opt.min_co_users = 3;
  EXPECT_EQ(build_colisten_graph(log, small_catalog(), opt).num_edges(), 0u);
}

TEST(BuildGraph, TriangleStats) {
  auto g = build_colisten_graph({stream("U1", "A1"), stream("U1", "A2"), stream("U2", "A2"), stream("U2", "A3"),
                                 stream("U3", "A1"), stream("U3", "A3")},
                                small_catalog());
  auto s = graph_stats(g);
  EXPECT_EQ(s.edges[static_cast<std::size_t>(Relation::aa)], 3u);
  for (const char* id : {"A1", "A2", "A3"}) EXPECT_EQ(g.degree(*g.find(id)), 2u);
  EXPECT_EQ(s.degree[static_cast<std::size_t>(Relation::aa)].min, 2u);
  EXPECT_DOUBLE_EQ(s.degree[static_cast<std::size_t>(Relation::aa)].mean, 2.0);
}

TEST(BuildGraph, WeakSignalsDoNotCreateEdgesUnlessAsked) {
  std::vector<InteractionRecord> log{stream("U1", "A1"), {"U1", "A2", ItemType::audiobook, Signal::follow, 1}};
  EXPECT_EQ(build_colisten_graph(log, small_catalog()).num_edges(), 0u);
  GraphBuildOptions opt;
  opt.all_signals = true;
  EXPECT_EQ(build_colisten_graph(log, small_catalog(), opt).num_edges(), 1u);
}

TEST(BuildGraph, Errors) {
  EXPECT_THROW(build_colisten_graph({}, small_catalog()), Error);
  try {
    build_colisten_graph({stream("U9", "A7", 42)}, small_catalog());
    FAIL();
  } catch (const Error& e) {
    std::string m = e.what();
    EXPECT_NE(m.find("A7"), std::string::npos);
    EXPECT_NE(m.find("U9"), std::string::npos);
  }
}

TEST(BuildGraph, LexicographicNodeOrderAndFeatures) {
  auto c = small_catalog();
  c.at("P2").content_vector = {0.0, 7.0};
  auto g = build_colisten_graph({stream("U1", "A1")}, c);
  EXPECT_EQ(g.item_id(0), "A1");
  EXPECT_EQ(g.item_id(2), "A3");
  EXPECT_EQ(g.item_id(3), "P1");
  EXPECT_EQ(g.type_of(3), ItemType::podcast);
  EXPECT_EQ(g.features(4)(1), 7.0);
}

TEST(BuildGraph, MatchesBruteForceOnRandomLogs) {
  Rng rng(2024);
  std::uniform_int_distribution<int> n_users(1, 50), n_items(2, 40);
  for (int trial = 0; trial < 100; ++trial) {
    const int items = n_items(rng);
    const int audio = std::uniform_int_distribution<int>(0, items)(rng);
    auto catalog = rec::testing::random_catalog(audio, items - audio, 2, rng);
    auto log = rec::testing::random_streams(catalog, n_users(rng), 0.08, rng);
    if (log.empty()) continue;
    // A few weak signals that must not create edges.
    for (int i = 0; i < 5 && audio > 0; ++i)
      log.push_back({"u0", catalog.begin()->first, ItemType::audiobook, Signal::preview, 1});
    auto g = build_colisten_graph(log, catalog);
    ASSERT_EQ(rec::testing::edge_ids(g), rec::testing::brute_force_edges(log, catalog)) << "trial " << trial;
  }
}

TEST(HeteroGraph, SymmetricSortedAndLoopFree) {
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    auto g = rec::testing::random_graph(7, 9, 3, {0.3, 0.2, 0.4}, rng);
    for (NodeId a = 0; a < g.num_nodes(); ++a)
      for (auto r : kRelations) {
        auto nb = g.neighbors(a, r);
        EXPECT_TRUE(std::is_sorted(nb.begin(), nb.end()));
        EXPECT_EQ(std::adjacent_find(nb.begin(), nb.end()), nb.end());
        for (NodeId b : nb) {
          EXPECT_NE(a, b);
          EXPECT_LT(b, g.num_nodes());
          EXPECT_EQ(relation_between(g.type_of(a), g.type_of(b)), r);
          auto back = g.neighbors(b, r);
          EXPECT_TRUE(std::binary_search(back.begin(), back.end(), a));
        }
      }
  }
}

TEST(HeteroGraph, RejectsDuplicatesAndSelfLoops) {
  std::array<std::vector<std::string>, 2> ids{{{"a", "b"}, {}}};
  EdgeSets dup;
  dup[0] = {{0, 1}, {0, 1}};
  EXPECT_THROW(HeteroGraph(ids, Mat::Zero(1, 2), dup), Error);
  EdgeSets loop;
  loop[0] = {{1, 1}};
  EXPECT_THROW(HeteroGraph(ids, Mat::Zero(1, 2), loop), Error);
}

TEST(HeteroGraph, RebuildAndSerializationAreByteIdentical) {
  Rng rng(8);
  auto catalog = rec::testing::random_catalog(12, 15, 4, rng);
  auto log = rec::testing::random_streams(catalog, 30, 0.1, rng);
  auto a = build_colisten_graph(log, catalog);
  auto b = build_colisten_graph(log, catalog);
  EXPECT_EQ(a, b);
  const auto bytes = serialize_graph(a);
  EXPECT_EQ(bytes, serialize_graph(b));
  auto c = deserialize_graph(bytes);
  EXPECT_EQ(c, a);
  EXPECT_EQ(serialize_graph(c), bytes);
  EXPECT_THROW(deserialize_graph(bytes.substr(0, bytes.size() / 2)), Error);
}

TEST(HeteroGraph, ValidationEdgeSplitPartitionsEachRelation) {
  Rng rng(12);
  auto g = rec::testing::random_graph(20, 30, 2, {0.2, 0.1, 0.1}, rng);
  auto h = split_validation_edges(g, 0.1, rng);
  for (auto r : kRelations) {
    const auto ri = static_cast<std::size_t>(r);
    const auto total = g.num_edges(r);
    EXPECT_EQ(h.validation[ri].size(), static_cast<std::size_t>(std::llround(0.1 * static_cast<double>(total))));
    EXPECT_EQ(h.validation[ri].size() + h.train.num_edges(r), total);
    for (const auto& e : h.validation[ri]) {
      EXPECT_FALSE(h.train.has_edge(e.u, e.v));
      EXPECT_TRUE(g.has_edge(e.u, e.v));
    }
  }
}
