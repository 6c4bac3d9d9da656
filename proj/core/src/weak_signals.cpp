#include "rec/weak_signals.hpp"

#include <cmath>
#include <map>
#include <set>

#include <nlohmann/json.hpp>

namespace rec {

CooccurrenceMatrix cooccurrence(const std::vector<InteractionRecord>& records) {
  std::map<std::pair<std::string_view, std::string_view>, unsigned> present;
  for (const auto& r : records) present[{r.user_id, r.item_id}] |= 1u << static_cast<unsigned>(r.signal);
  std::set<unsigned> kinds;
  for (const auto& r : records) kinds.insert(static_cast<unsigned>(r.signal));
  if (kinds.size() < 2) throw Error(ErrorKind::validation, "cooccurrence: need at least two signal types");

  CooccurrenceMatrix c;
  std::array<std::array<std::size_t, kNumSignals>, kNumSignals> both{};
  for (const auto& [pair, mask] : present)
    for (std::size_t i = 0; i < kNumSignals; ++i) {
      if (!(mask >> i & 1u)) continue;
      ++c.pairs_with[i];
      for (std::size_t j = 0; j < kNumSignals; ++j)
        if (mask >> j & 1u) ++both[i][j];
    }
  for (std::size_t i = 0; i < kNumSignals; ++i)
    for (std::size_t j = 0; j < kNumSignals; ++j) {
      if (c.pairs_with[i] == 0)
        c.m[i][j] = i == j ? 1.0 : 0.0;
      else
        c.m[i][j] = static_cast<double>(both[i][j]) / static_cast<double>(c.pairs_with[i]);
    }
  return c;
}

namespace {

double softplus(double z) { return z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }
double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

// Observations grouped by x value: the objective only depends on the
// count and number of positives per distinct x.
struct Group {
  double x = 0.0;
  double n = 0.0;
  double pos = 0.0;
};

double objective(const std::vector<Group>& g, double total, double l2, double a, double b) {
  double s = 0.0;
  for (const auto& grp : g) {
    const double z = a + b * grp.x;
    // y = 1 contributes softplus(-z), y = 0 contributes softplus(z).
    s += grp.pos * softplus(-z) + (grp.n - grp.pos) * softplus(z);
  }
  return s / total + 0.5 * l2 * b * b;
}

std::array<double, 2> gradient(const std::vector<Group>& g, double total, double l2, double a, double b) {
  double ga = 0.0, gb = 0.0;
  for (const auto& grp : g) {
    const double r = grp.n * sigmoid(a + b * grp.x) - grp.pos;
    ga += r;
    gb += r * grp.x;
  }
  return {ga / total, gb / total + l2 * b};
}

}  // namespace

LogisticFit fit_logistic_1d(std::span<const double> x, std::span<const int> y, double l2, double tolerance,
                            long max_iterations) {
  if (x.size() != y.size() || x.empty()) throw Error(ErrorKind::validation, "fit_logistic_1d: bad input sizes");
  std::map<double, Group> by_x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    auto& grp = by_x[x[i]];
    grp.x = x[i];
    grp.n += 1.0;
    grp.pos += y[i] ? 1.0 : 0.0;
  }
  std::vector<Group> groups;
  for (auto& [k, v] : by_x) groups.push_back(v);
  const double total = static_cast<double>(x.size());

  LogisticFit fit;
  double a = 0.0, b = 0.0;
  double f = objective(groups, total, l2, a, b);
  double step = 1.0;
  for (long it = 0; it < max_iterations; ++it) {
    const auto g = gradient(groups, total, l2, a, b);
    const double gnorm2 = g[0] * g[0] + g[1] * g[1];
    if (std::sqrt(gnorm2) < tolerance) {
      fit.converged = true;
      fit.iterations = it;
      break;
    }
    step *= 2.0;
    double na = a, nb = b, nf = f;
    for (int bt = 0; bt < 200; ++bt) {
      na = a - step * g[0];
      nb = b - step * g[1];
      nf = objective(groups, total, l2, na, nb);
      if (nf <= f - 1e-4 * step * gnorm2) break;
      step *= 0.5;
    }
    if (!(nf <= f)) {
      // No progress possible at machine precision.
      fit.iterations = it;
      break;
    }
    a = na;
    b = nb;
    f = nf;
    fit.iterations = it + 1;
  }
  fit.intercept = a;
  fit.coefficient = b;
  fit.odds_ratio = std::exp(b);
  fit.loss = f;
  return fit;
}

WeakSignalAnalysis weak_signal_analysis(const std::vector<InteractionRecord>& records, const Catalog& catalog,
                                        std::int64_t cutoff) {
  WeakSignalAnalysis out;
  out.cutoff = cutoff;
  out.cooccurrence = cooccurrence(records);

  std::set<std::string_view> users;
  for (const auto& r : records)
    if (r.timestamp < cutoff) users.insert(r.user_id);
  std::vector<std::string_view> audiobooks;
  for (const auto& [id, item] : catalog)
    if (item.item_type == ItemType::audiobook) audiobooks.push_back(id);

  using Key = std::pair<std::string_view, std::string_view>;
  std::map<Key, std::array<double, kNumSignals>> before;
  std::set<Key> streamed_after;
  for (const auto& r : records) {
    if (r.item_type != ItemType::audiobook) continue;
    if (r.timestamp < cutoff)
      before[{r.user_id, r.item_id}][static_cast<std::size_t>(r.signal)] += 1.0;
    else if (r.signal == Signal::stream)
      streamed_after.insert({r.user_id, r.item_id});
  }

  for (auto s : {Signal::follow, Signal::preview, Signal::intent_to_pay}) {
    SignalFit sf;
    sf.signal = s;
    std::vector<double> x;
    std::vector<int> y;
    for (auto u : users)
      for (auto a : audiobooks) {
        auto it = before.find({u, a});
        double count = 0.0;
        if (it != before.end()) {
          if (it->second[static_cast<std::size_t>(Signal::stream)] > 0) continue;
          count = it->second[static_cast<std::size_t>(s)];
        }
        x.push_back(count);
        y.push_back(streamed_after.contains({u, a}) ? 1 : 0);
      }
    sf.n = x.size();
    for (int v : y) sf.positives += static_cast<std::size_t>(v);
    if (sf.n == 0 || sf.positives == 0 || sf.positives == sf.n) {
      sf.diagnostic = "degenerate labels: " + std::to_string(sf.positives) + " positives out of " +
                      std::to_string(sf.n);
    } else {
      sf.fit = fit_logistic_1d(x, y);
      sf.fitted = true;
      if (!sf.fit.converged) sf.diagnostic = "did not reach the gradient tolerance";
    }
    out.fits.push_back(std::move(sf));
  }
  return out;
}

nlohmann::json to_json(const WeakSignalAnalysis& a) {
  nlohmann::ordered_json j;
  j["cutoff"] = a.cutoff;
  nlohmann::ordered_json m;
  for (std::size_t i = 0; i < kNumSignals; ++i) {
    nlohmann::ordered_json row;
    for (std::size_t k = 0; k < kNumSignals; ++k)
      row[std::string(to_string(static_cast<Signal>(k)))] = a.cooccurrence.m[i][k];
    m[std::string(to_string(static_cast<Signal>(i)))] = row;
  }
  j["cooccurrence"] = m;
  auto fits = nlohmann::ordered_json::array();
  for (const auto& f : a.fits) {
    nlohmann::ordered_json e;
    e["signal"] = std::string(to_string(f.signal));
    e["fitted"] = f.fitted;
    e["n"] = f.n;
    e["positives"] = f.positives;
    if (f.fitted) {
      e["intercept"] = f.fit.intercept;
      e["coefficient"] = f.fit.coefficient;
      e["odds_ratio"] = f.fit.odds_ratio;
      e["converged"] = f.fit.converged;
      e["iterations"] = f.fit.iterations;
    }
    if (!f.diagnostic.empty()) e["diagnostic"] = f.diagnostic;
    fits.push_back(e);
  }
  j["fits"] = fits;
  return nlohmann::json(j);
}

}  // namespace rec
