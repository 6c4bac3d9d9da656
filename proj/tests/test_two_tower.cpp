#include <gtest/gtest.h>

#include <nlohmann/json.hpp>

#include "rec/two_tower.hpp"
#include "support.hpp"

using namespace rec;

namespace {

NodeEmbeddingTable table_from(const std::vector<std::pair<std::string, Vec>>& rows, const Catalog* catalog = nullptr) {
  NodeEmbeddingTable t;
  t.z.resize(rows.empty() ? 0 : rows.front().second.size(), static_cast<Eigen::Index>(rows.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    t.ids.push_back(rows[i].first);
    t.types.push_back(catalog ? catalog->at(rows[i].first).item_type
                              : (rows[i].first[0] == 'P' ? ItemType::podcast : ItemType::audiobook));
    t.z.col(static_cast<Eigen::Index>(i)) = rows[i].second;
  }
  t.degenerate.assign(rows.size(), false);
  t.isolated.assign(rows.size(), false);
  t.rebuild_index();
  return t;
}

Vec v2(double a, double b) {
  Vec v(2);
  v << a, b;
  return v;
}

InteractionRecord rec_of(std::string u, std::string item, Signal s, std::int64_t ts) {
  return {std::move(u), item, item[0] == 'P' ? ItemType::podcast : ItemType::audiobook, s, ts};
}

struct Toy {
  Catalog catalog;
  UserProfiles profiles;
  std::vector<InteractionRecord> log;
  NodeEmbeddingTable emb;
  std::set<std::string> users;
  FeatureWindow window{2000, 90};
};

Toy make_toy(std::uint64_t seed, int n_users = 12) {
  Toy t;
  Rng rng(seed);
  t.catalog = rec::testing::random_catalog(10, 8, 3, rng);
  std::normal_distribution<double> g;
  for (int i = 0; i < n_users; ++i) {
    UserProfile p{"u" + std::to_string(i), i % 3 ? "SE" : "US", i % 2 ? "18-24" : "25-34", {g(rng), g(rng)}};
    t.profiles.emplace(p.user_id, p);
  }
  std::bernoulli_distribution take(0.3);
  std::uniform_int_distribution<std::int64_t> ts(0, 1999);
  for (const auto& [u, p] : t.profiles) {
    t.users.insert(u);
    for (const auto& [id, item] : t.catalog)
      if (take(rng)) t.log.push_back({u, id, item.item_type, Signal::stream, ts(rng)});
  }
  std::vector<std::pair<std::string, Vec>> rows;
  for (const auto& [id, item] : t.catalog) rows.emplace_back(id, Vec::Random(4).normalized());
  t.emb = table_from(rows, &t.catalog);
  return t;
}

TowerConfig small_config() {
  TowerConfig c;
  c.widths = {8, 4, 2};
  c.categorical_dim = 2;
  c.batch_size = 8;
  c.learning_rate = 1e-2;
  return c;
}

}  // namespace

TEST(Loss2t, Examples) {
  // o_u = e0; vectors with prescribed dots against it.
  Vec u = Vec::Unit(2, 0);
  std::vector<Vec> negs{v2(0.3, 0), v2(-0.1, 0)};
  std::vector<double> ones{1, 1};
  EXPECT_NEAR(loss_2t(u, v2(0.8, 0), negs, ones), -0.7, 1e-12);
  std::vector<Vec> same{v2(0.8, 0.6)};
  std::vector<double> one{1};
  EXPECT_EQ(loss_2t(u, v2(0.8, 0.6), same, one), 0.0);
  std::vector<double> skew{2, 0};
  EXPECT_NEAR(loss_2t(u, v2(0.8, 0), negs, skew), -0.5, 1e-12);
  EXPECT_THROW(loss_2t(u, u, {}, {}), Error);
}

TEST(Features, MeanEmbeddingsAndWeakSignals) {
  auto emb = table_from({{"A1", v2(1, 0)}, {"A2", v2(0, 1)}, {"P1", v2(0.6, 0.8)}});
  TowerConfig c;
  FeatureWindow w{1000, 90};
  std::vector<InteractionRecord> log{rec_of("U", "A1", Signal::stream, 10), rec_of("U", "A2", Signal::stream, 20),
                                     rec_of("V", "A2", Signal::follow, 30), rec_of("V", "P1", Signal::stream, 40),
                                     rec_of("U", "P1", Signal::stream, 5000)};
  auto u = assemble_user_features("U", log, emb, nullptr, 0, w, c);
  EXPECT_EQ(u.mean_audiobook, v2(0.5, 0.5));
  EXPECT_EQ(u.mean_podcast, v2(0, 0));  // the podcast stream falls after the window
  EXPECT_EQ(u.interaction_counts[static_cast<std::size_t>(Signal::stream)], 2.0);

  auto v = assemble_user_features("V", log, emb, nullptr, 0, w, c);
  EXPECT_EQ(v.mean_audiobook, v2(0, 1));
  EXPECT_EQ(v.mean_podcast, v2(0.6, 0.8));
  c.weak_signals = false;
  auto v_strong = assemble_user_features("V", log, emb, nullptr, 0, w, c);
  EXPECT_EQ(v_strong.mean_audiobook, v2(0, 0));
  EXPECT_EQ(v_strong.interaction_counts[static_cast<std::size_t>(Signal::follow)], 0.0);

  auto nobody = assemble_user_features("W", log, emb, nullptr, 0, w, c);
  EXPECT_EQ(nobody.mean_audiobook, v2(0, 0));
  EXPECT_EQ(nobody.music.size(), 0);
}

TEST(Features, MeanNormAtMostOne) {
  auto t = make_toy(3);
  auto data = assemble_tower_data(t.log, t.users, t.catalog, t.profiles, t.emb, t.window, TowerConfig{});
  for (const auto& [u, f] : data.users) {
    EXPECT_LE(f.mean_audiobook.norm(), 1.0 + 1e-12);
    EXPECT_LE(f.mean_podcast.norm(), 1.0 + 1e-12);
  }
  EXPECT_EQ(data.items.size(), 10u);
}

TEST(Towers, UnitNormDeterministicAndOov) {
  auto t = make_toy(4);
  auto c = small_config();
  c.widths = {16, 8, 6};
  auto data = assemble_tower_data(t.log, t.users, t.catalog, t.profiles, t.emb, t.window, c);
  Rng rng(1);
  auto p = init_tower_params(c, data, t.profiles, t.catalog, rng);
  for (const auto& [u, f] : data.users) {
    Vec o = user_tower_forward(p, f);
    EXPECT_EQ(o.size(), 6);
    EXPECT_NEAR(o.norm(), 1.0, 1e-6);
    EXPECT_EQ(o, user_tower_forward(p, f));
  }
  for (const auto& [i, f] : data.items) EXPECT_NEAR(item_tower_forward(p, f).norm(), 1.0, 1e-6);

  auto f = data.users.begin()->second;
  f.country = "ZZ-never-seen";
  Vec unseen = user_tower_forward(p, f);
  f.country = std::string(Vocabulary::kOov);
  EXPECT_EQ(unseen, user_tower_forward(p, f));
  auto item = data.items.begin()->second;
  item.genre = "unheard-of";
  item.language = "";
  EXPECT_NO_THROW(item_tower_forward(p, item));
}

TEST(Towers, DefaultWidthsEmit128) {
  auto t = make_toy(5);
  TowerConfig c;
  auto data = assemble_tower_data(t.log, t.users, t.catalog, t.profiles, t.emb, t.window, c);
  Rng rng(1);
  auto p = init_tower_params(c, data, t.profiles, t.catalog, rng);
  EXPECT_EQ(user_tower_forward(p, data.users.begin()->second).size(), 128);
  EXPECT_EQ(item_tower_forward(p, data.items.begin()->second).size(), 128);
}

TEST(Towers, GradientMatchesFiniteDifferences) {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    auto t = make_toy(10 + seed);
    auto c = small_config();
    auto data = assemble_tower_data(t.log, t.users, t.catalog, t.profiles, t.emb, t.window, c);
    Rng rng(seed);
    auto p = init_tower_params(c, data, t.profiles, t.catalog, rng);
    // Zero biases put an all-dead hidden layer exactly on the normalization
    // singularity; move off it so central differences are meaningful.
    for (auto* tower : {&p.user, &p.item})
      for (auto& b : tower->bias) b = Vec::Random(b.size()) * 0.1;
    auto pairs = training_pairs(t.log, ItemType::audiobook);
    std::shuffle(pairs.begin(), pairs.end(), rng);
    pairs.resize(4);
    p.item_frequency = item_frequencies(training_pairs(t.log, ItemType::audiobook));
    auto grad = p.zeros_like();
    batch_loss_2t(p, data, pairs, &grad);
    const TowerParams& cg = grad;
    auto check = rec::testing::finite_difference_check([&] { return batch_loss_2t(p, data, pairs, nullptr); },
                                                       p.blocks(), cg.blocks(), 1e-6);
    EXPECT_GT(check.checked, 0u);
    EXPECT_LT(check.max_rel_error, 1e-3) << "seed " << seed << " block " << check.block << "[" << check.index
                                          << "] analytic " << check.analytic << " numeric " << check.numeric;
  }
}

TEST(Towers, EqualFrequenciesMatchUnweightedLoss) {
  auto t = make_toy(6);
  auto c = small_config();
  auto data = assemble_tower_data(t.log, t.users, t.catalog, t.profiles, t.emb, t.window, c);
  Rng rng(2);
  auto p = init_tower_params(c, data, t.profiles, t.catalog, rng);
  for (const auto& [id, f] : data.items) p.item_frequency[id] = 3.0;
  auto pairs = training_pairs(t.log, ItemType::audiobook);
  std::span<const TrainingPair> batch(pairs.data(), std::min<std::size_t>(pairs.size(), 10));

  // Unweighted in-batch loss from the public pieces.
  std::vector<std::string> items;
  std::vector<const UserFeatures*> uf;
  std::vector<const ItemFeatures*> itf;
  for (const auto& pr : batch) {
    uf.push_back(&data.users.at(pr.user_id));
    if (std::find(items.begin(), items.end(), pr.item_id) == items.end()) {
      items.push_back(pr.item_id);
      itf.push_back(&data.items.at(pr.item_id));
    }
  }
  Mat ou = user_tower_forward(p, uf);
  Mat oi = item_tower_forward(p, itf);
  double expect = 0.0;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const auto a = std::find(items.begin(), items.end(), batch[b].item_id) - items.begin();
    std::vector<Vec> negs;
    for (Eigen::Index j = 0; j < oi.cols(); ++j)
      if (j != a) negs.push_back(oi.col(j));
    std::vector<double> ones(negs.size(), 1.0);
    expect += (1.0 / static_cast<double>(batch.size())) * loss_2t(ou.col(static_cast<Eigen::Index>(b)), oi.col(a), negs, ones);
  }
  EXPECT_EQ(batch_loss_2t(p, data, batch, nullptr), expect);
}

TEST(Towers, FeatureLocality) {
  auto t = make_toy(7);
  auto c = small_config();
  auto data = assemble_tower_data(t.log, t.users, t.catalog, t.profiles, t.emb, t.window, c);
  Rng rng(3);
  auto p = init_tower_params(c, data, t.profiles, t.catalog, rng);
  const auto items = export_item_vectors(p, data);
  const auto users = export_user_vectors(p, data);

  auto log2 = t.log;
  for (const auto& [id, item] : t.catalog)
    if (item.item_type == ItemType::podcast) log2.push_back({"u0", id, ItemType::podcast, Signal::stream, 1500});
  auto data2 = assemble_tower_data(log2, t.users, t.catalog, t.profiles, t.emb, t.window, c);
  EXPECT_NE(export_user_vectors(p, data2).at("u0"), users.at("u0"));
  EXPECT_EQ(export_item_vectors(p, data2), items);

  auto cat2 = t.catalog;
  for (auto& [id, item] : cat2) {
    item.genre = "genre0";
    for (auto& x : item.content_vector) x += 1.0;
  }
  auto data3 = assemble_tower_data(t.log, t.users, cat2, t.profiles, t.emb, t.window, c);
  EXPECT_EQ(export_user_vectors(p, data3), users);
  EXPECT_NE(export_item_vectors(p, data3), items);
}

TEST(Towers, TrainingDeterministicAndImproves) {
  auto t = make_toy(8, 30);
  auto c = small_config();
  c.widths = {16, 8, 8};
  c.epochs = 10;
  auto data = assemble_tower_data(t.log, t.users, t.catalog, t.profiles, t.emb, t.window, c);
  Rng rng(4);
  auto init = init_tower_params(c, data, t.profiles, t.catalog, rng);
  auto pairs = training_pairs(t.log, ItemType::audiobook);
  init.item_frequency = item_frequencies(pairs);
  auto a = train_2t(init, data, pairs, 11);
  auto b = train_2t(init, data, pairs, 11);
  EXPECT_EQ(a.params.checksum(), b.params.checksum());
  ASSERT_EQ(a.log.size(), 10u);
  EXPECT_LT(a.log.back().train_loss, a.log.front().train_loss);
  for (const auto& [id, f] : a.params.item_frequency) EXPECT_GT(f, 0.0);
}

TEST(Towers, ExportCoversNeverStreamedItems) {
  auto t = make_toy(9);
  t.catalog.emplace("a999", CatalogItem{"a999", ItemType::audiobook, {0.1, 0.2, 0.3}, "lang9", "genre9"});
  auto c = small_config();
  auto data = assemble_tower_data(t.log, t.users, t.catalog, t.profiles, t.emb, t.window, c);
  Rng rng(5);
  auto p = init_tower_params(c, data, t.profiles, t.catalog, rng);
  auto vecs = export_item_vectors(p, data);
  EXPECT_EQ(vecs.size(), 11u);
  ASSERT_TRUE(vecs.count("a999"));
  for (const auto& [id, v] : vecs) EXPECT_NEAR(v.norm(), 1.0, 1e-6);
  EXPECT_EQ(parse_vectors(serialize_vectors(vecs)), vecs);
}

TEST(Towers, CheckpointRoundTrip) {
  auto t = make_toy(10);
  auto c = small_config();
  auto data = assemble_tower_data(t.log, t.users, t.catalog, t.profiles, t.emb, t.window, c);
  Rng rng(6);
  auto p = init_tower_params(c, data, t.profiles, t.catalog, rng);
  p.item_frequency = item_frequencies(training_pairs(t.log, ItemType::audiobook));
  auto q = deserialize_towers(serialize_towers(p));
  EXPECT_EQ(p, q);
  EXPECT_EQ(p.checksum(), q.checksum());
  EXPECT_THROW(deserialize_towers("RTWT"), Error);
}

TEST(Towers, ConfigRejectsUnknownFields) {
  nlohmann::json j = TowerConfig{};
  EXPECT_NO_THROW(j.get<TowerConfig>());
  j["width"] = 3;
  EXPECT_THROW(j.get<TowerConfig>(), Error);
}
