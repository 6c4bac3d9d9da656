#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "rec/data.hpp"

namespace rec {

/// m[i][j]: fraction of (user, item) pairs with signal i that also have
/// signal j. A signal that never occurs gets a unit row on the diagonal.
struct CooccurrenceMatrix {
  std::array<std::array<double, kNumSignals>, kNumSignals> m{};
  std::array<std::size_t, kNumSignals> pairs_with{};
};

CooccurrenceMatrix cooccurrence(const std::vector<InteractionRecord>& records);

/// Minimizes mean log-loss of sigmoid(intercept + coefficient * x) plus
/// l2 / 2 * coefficient^2 by gradient descent with backtracking.
struct LogisticFit {
  bool converged = false;
  double intercept = 0.0;
  double coefficient = 0.0;
  double odds_ratio = 1.0;
  double loss = 0.0;
  long iterations = 0;
};

LogisticFit fit_logistic_1d(std::span<const double> x, std::span<const int> y, double l2 = 1e-2,
                            double tolerance = 1e-8, long max_iterations = 5'000'000);

struct SignalFit {
  Signal signal = Signal::follow;
  bool fitted = false;
  std::string diagnostic;
  std::size_t n = 0;
  std::size_t positives = 0;
  LogisticFit fit;
};

struct WeakSignalAnalysis {
  std::int64_t cutoff = 0;
  CooccurrenceMatrix cooccurrence;
  std::vector<SignalFit> fits;  // follow, preview, intent_to_pay
};

/// Population: every (user, audiobook) pair of users active before
/// `cutoff` with no stream of that audiobook before it. x is the count of
/// the weak signal before the cutoff, y whether a stream follows.
WeakSignalAnalysis weak_signal_analysis(const std::vector<InteractionRecord>& records, const Catalog& catalog,
                                        std::int64_t cutoff);

nlohmann::json to_json(const WeakSignalAnalysis& a);

}  // namespace rec
