#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <random>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "rec/eval.hpp"
#include "rec/graph.hpp"
#include "rec/index.hpp"

namespace rec::testing {

// Catalog ids a000.., p000.. with random content vectors.
inline Catalog random_catalog(int n_audio, int n_pod, int dim, Rng& rng) {
  std::normal_distribution<double> g;
  Catalog c;
  auto add = [&](const std::string& prefix, ItemType t, int n) {
    for (int i = 0; i < n; ++i) {
      char buf[16];
      std::snprintf(buf, sizeof buf, "%s%03d", prefix.c_str(), i);
      CatalogItem item{buf, t, {}, "lang" + std::to_string(i % 2), "genre" + std::to_string(i % 3)};
      for (int k = 0; k < dim; ++k) item.content_vector.push_back(g(rng));
      c.emplace(item.item_id, item);
    }
  };
  add("a", ItemType::audiobook, n_audio);
  add("p", ItemType::podcast, n_pod);
  return c;
}

inline std::vector<InteractionRecord> random_streams(const Catalog& catalog, int n_users, double p, Rng& rng) {
  std::bernoulli_distribution take(p);
  std::uniform_int_distribution<std::int64_t> ts(0, 1000);
  std::vector<InteractionRecord> out;
  for (int u = 0; u < n_users; ++u)
    for (const auto& [id, item] : catalog)
      if (take(rng)) out.push_back({"u" + std::to_string(u), id, item.item_type, Signal::stream, ts(rng)});
  return out;
}

// Random heterogeneous graph with independent edge probabilities per relation.
inline HeteroGraph random_graph(int n_audio, int n_pod, int dim, std::array<double, 3> p, Rng& rng) {
  std::array<std::vector<std::string>, kNumItemTypes> ids;
  for (int i = 0; i < n_audio; ++i) ids[0].push_back("a" + std::to_string(1000 + i));
  for (int i = 0; i < n_pod; ++i) ids[1].push_back("p" + std::to_string(1000 + i));
  const int n = n_audio + n_pod;
  Mat features(dim, n);
  std::normal_distribution<double> g;
  for (Eigen::Index j = 0; j < features.cols(); ++j)
    for (Eigen::Index i = 0; i < features.rows(); ++i) features(i, j) = g(rng);
  EdgeSets edges;
  std::uniform_real_distribution<double> u;
  for (NodeId a = 0; a < static_cast<NodeId>(n); ++a)
    for (NodeId b = a + 1; b < static_cast<NodeId>(n); ++b) {
      const auto ta = static_cast<int>(a) < n_audio ? ItemType::audiobook : ItemType::podcast;
      const auto tb = static_cast<int>(b) < n_audio ? ItemType::audiobook : ItemType::podcast;
      const auto r = relation_between(ta, tb);
      if (u(rng) < p[static_cast<std::size_t>(r)]) edges[static_cast<std::size_t>(r)].push_back({a, b});
    }
  return HeteroGraph(std::move(ids), std::move(features), std::move(edges));
}

using IdPair = std::pair<std::string, std::string>;

// All item pairs streamed by at least `min_users` common users, found by
// checking every pair of catalog items against every user.
inline std::set<IdPair> brute_force_edges(const std::vector<InteractionRecord>& log, const Catalog& catalog,
                                          std::size_t min_users = 1) {
  std::set<std::string> users;
  for (const auto& r : log) users.insert(r.user_id);
  auto streamed = [&](const std::string& u, const std::string& item) {
    return std::any_of(log.begin(), log.end(), [&](const InteractionRecord& r) {
      return r.user_id == u && r.item_id == item && r.signal == Signal::stream;
    });
  };
  std::vector<std::string> items;
  for (const auto& [id, item] : catalog) items.push_back(id);
  std::set<IdPair> out;
  for (std::size_t i = 0; i < items.size(); ++i)
    for (std::size_t j = i + 1; j < items.size(); ++j) {
      std::size_t support = 0;
      for (const auto& u : users)
        if (streamed(u, items[i]) && streamed(u, items[j])) ++support;
      if (support >= min_users) out.insert({items[i], items[j]});
    }
  return out;
}

inline std::set<IdPair> edge_ids(const HeteroGraph& g) {
  std::set<IdPair> out;
  for (auto r : kRelations)
    for (const auto& e : g.edges(r)) {
      auto a = g.item_id(e.u), b = g.item_id(e.v);
      if (b < a) std::swap(a, b);
      out.insert({a, b});
    }
  return out;
}

// Independent recomputation straight from the metric definitions.
struct RefMetrics {
  double hr, mrr, coverage;
};

inline RefMetrics reference_metrics(const RankedLists& recs, const RelevantSets& rel, const std::set<std::string>& catalog,
                     std::size_t k) {
  double hits = 0, rr = 0;
  for (const auto& [u, items] : rel) {
    std::vector<std::string> list;
    if (auto it = recs.find(u); it != recs.end()) list = it->second;
    if (list.size() > 100) list.resize(100);
    for (std::size_t i = 0; i < list.size() && i < k; ++i)
      if (items.count(list[i])) {
        hits += 1;
        break;
      }
    for (std::size_t i = 0; i < list.size(); ++i)
      if (items.count(list[i])) {
        rr += 1.0 / static_cast<double>(i + 1);
        break;
      }
  }
  std::set<std::string> seen;
  for (const auto& [u, list] : recs)
    for (std::size_t i = 0; i < list.size() && i < 100; ++i)
      if (catalog.count(list[i])) seen.insert(list[i]);
  const double n = static_cast<double>(rel.size());
  return {hits / n, rr / n, catalog.empty() ? 0.0 : static_cast<double>(seen.size()) / static_cast<double>(catalog.size())};
}

// Score every item, sort by (score desc, id asc), drop excluded, keep k.
inline std::vector<ScoredItem> reference_topk(const std::map<std::string, Vec>& items, const Vec& q, std::size_t k,
                                       const std::set<std::string>& exclude) {
  std::vector<ScoredItem> all;
  for (const auto& [id, v] : items) {
    double score = 0.0;
    for (Eigen::Index d = 0; d < v.size(); ++d) score += v(d) * q(d);
    all.push_back({id, score});
  }
  std::sort(all.begin(), all.end(), [](const ScoredItem& a, const ScoredItem& b) {
    return a.score != b.score ? a.score > b.score : a.item_id < b.item_id;
  });
  std::vector<ScoredItem> out;
  for (const auto& s : all)
    if (!exclude.count(s.item_id) && out.size() < k) out.push_back(s);
  return out;
}

struct GradCheck {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  // Location and values of the worst entry.
  std::size_t block = 0, index = 0;
  double analytic = 0.0, numeric = 0.0;
};

// Central differences for every entry of every block; `loss` re-evaluates
// the objective with the current parameter values.
inline GradCheck finite_difference_check(const std::function<double()>& loss,
                                         const std::vector<std::span<double>>& params,
                                         const std::vector<std::span<const double>>& analytic, double eps = 1e-4) {
  GradCheck out;
  for (std::size_t b = 0; b < params.size(); ++b)
    for (std::size_t i = 0; i < params[b].size(); ++i) {
      double& x = params[b][i];
      const double saved = x;
      x = saved + eps;
      const double up = loss();
      x = saved - eps;
      const double down = loss();
      x = saved;
      const double numeric = (up - down) / (2 * eps);
      const double a = analytic[b][i];
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-6});
      const double rel = std::abs(a - numeric) / denom;
      if (rel > out.max_rel_error) out = {rel, out.checked, b, i, a, numeric};
      ++out.checked;
    }
  return out;
}

}  // namespace rec::testing
