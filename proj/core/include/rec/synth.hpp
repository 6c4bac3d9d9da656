#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "rec/data.hpp"

namespace rec {

/// Knobs of the clustered mixture generator. Every field has a default;
/// the seed is passed separately.
struct SynthConfig {
  int n_users = 500;
  int n_podcasts = 200;
  int n_audiobooks = 80;
  // Audiobooks released at the start of the holdout window. They have no
  // train-window activity, so they only reach the model inductively.
  int n_new_audiobooks = 4;
  int n_clusters = 5;
  int content_dim = 32;
  int days = 90;
  int holdout_days = 14;

  // Poisson stream-count rate per (user, item); multiplied by `affinity`
  // when the user and item share a latent cluster.
  double affinity = 8.0;
  double podcast_rate = 0.016;
  double audiobook_rate = 0.03;
  double popularity_skew = 0.3;  // sigma of the log-normal item popularity

  double content_noise = 1.2;  // noise norm relative to the unit centroid

  // Probability that a user's first stream of an audiobook is preceded by
  // each weak signal, and the maximum lead time of that signal.
  double follow_prob = 0.35;
  double preview_prob = 0.3;
  double intent_prob = 0.2;
  int weak_lead_days = 21;
  // Stray weak signals per user that are not tied to any stream.
  double stray_follow_rate = 0.0;
  double stray_preview_rate = 0.4;
  double stray_intent_rate = 0.2;

  int n_countries = 6;
  int n_age_buckets = 5;
  int n_languages = 3;
  int n_genres = 8;
  double genre_cluster_prob = 0.6;

  void validate() const;
};

void to_json(nlohmann::json& j, const SynthConfig& c);
void from_json(const nlohmann::json& j, SynthConfig& c);

struct SynthDataset {
  std::vector<InteractionRecord> records;  // sorted by (timestamp, user, item, signal)
  Catalog catalog;
  UserProfiles users;
  // Latent structure, kept for tests and probes; not written by the CLI.
  std::map<std::string, int> user_cluster;
  std::map<std::string, int> item_cluster;
};

SynthDataset synth_generate(const SynthConfig& config, std::uint64_t seed);

}  // namespace rec
