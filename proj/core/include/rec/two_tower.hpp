#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "rec/common.hpp"
#include "rec/data.hpp"
#include "rec/hgnn.hpp"

namespace rec {

struct TowerConfig {
  std::vector<int> widths{512, 256, 128};
  int categorical_dim = 8;
  int batch_size = 128;
  int epochs = 10;
  double learning_rate = 1e-3;
  ItemType target = ItemType::audiobook;
  int window_days = 90;
  // When false, audiobook weak signals neither enter z̄_a nor the counts.
  bool weak_signals = true;
  // When false, every HGNN embedding input is replaced by zeros.
  bool hgnn_embeddings = true;

  void validate() const;
};

void to_json(nlohmann::json& j, const TowerConfig& c);
void from_json(const nlohmann::json& j, TowerConfig& c);

/// Sorted categorical values; index 0 is the out-of-vocabulary slot.
class Vocabulary {
 public:
  static constexpr std::string_view kOov = "<oov>";

  Vocabulary() = default;
  explicit Vocabulary(std::vector<std::string> values);

  std::size_t index(std::string_view value) const;
  std::size_t size() const noexcept { return values_.size() + 1; }
  const std::vector<std::string>& values() const noexcept { return values_; }
  bool operator==(const Vocabulary&) const = default;

 private:
  std::vector<std::string> values_;
};

struct UserFeatures {
  std::string country;
  std::string age_bucket;
  Vec music;
  Vec mean_audiobook;  // z̄_a
  Vec mean_podcast;    // z̄_p
  std::array<double, kNumSignals> interaction_counts{};
};

struct ItemFeatures {
  std::string language;
  std::string genre;
  Vec content;
  Vec hgnn;
};

/// Interactions in [window_end - days, window_end).
struct FeatureWindow {
  std::int64_t end = 0;
  int days = 90;
};

/// `records` may hold other users' interactions; they are ignored.
UserFeatures assemble_user_features(const std::string& user_id, std::span<const InteractionRecord> records,
                                    const NodeEmbeddingTable& embeddings, const UserProfile* profile,
                                    std::size_t music_dim, const FeatureWindow& window, const TowerConfig& config);

ItemFeatures assemble_item_features(const CatalogItem& item, const NodeEmbeddingTable& embeddings,
                                    const TowerConfig& config);

/// Features for every user in `user_ids` and every catalog item of the
/// target type. Items missing from `embeddings` get a zero HGNN input.
struct TowerData {
  std::map<std::string, UserFeatures> users;
  std::map<std::string, ItemFeatures> items;
  std::size_t music_dim = 0;
  std::size_t embedding_dim = 0;
  std::size_t content_dim = 0;
};

TowerData assemble_tower_data(const std::vector<InteractionRecord>& records, const std::set<std::string>& user_ids,
                              const Catalog& catalog, const UserProfiles& profiles,
                              const NodeEmbeddingTable& embeddings, const FeatureWindow& window,
                              const TowerConfig& config);

/// Categorical lookups followed by dense layers. Hidden layers use ReLU, the
/// last one is linear; the output is L2-normalized.
struct Tower {
  std::array<Vocabulary, 2> vocab;
  std::array<Mat, 2> tables;  // categorical_dim x vocab size
  std::size_t dense_dim = 0;  // numeric inputs after the two embeddings
  std::vector<Mat> weight;
  std::vector<Vec> bias;

  std::size_t input_dim() const;
};

struct TowerParams {
  TowerConfig config;
  Tower user;
  Tower item;
  std::size_t music_dim = 0;
  std::size_t embedding_dim = 0;
  std::size_t content_dim = 0;
  std::map<std::string, double> item_frequency;

  std::vector<std::span<double>> blocks();
  std::vector<std::span<const double>> blocks() const;
  TowerParams zeros_like() const;
  std::string checksum() const;
  bool operator==(const TowerParams& other) const;
};

/// Vocabularies come from the profiles and catalog; dimensions from `data`.
TowerParams init_tower_params(const TowerConfig& config, const TowerData& data, const UserProfiles& profiles,
                              const Catalog& catalog, Rng& rng);

std::string serialize_towers(const TowerParams& params);
TowerParams deserialize_towers(std::string bytes);
void save_towers(const std::string& path, const TowerParams& params);
TowerParams load_towers(const std::string& path);

Vec user_tower_forward(const TowerParams& params, const UserFeatures& features);
Vec item_tower_forward(const TowerParams& params, const ItemFeatures& features);
Mat user_tower_forward(const TowerParams& params, std::span<const UserFeatures* const> features);
Mat item_tower_forward(const TowerParams& params, std::span<const ItemFeatures* const> features);

/// Weighted mean over negatives of w_n (o_u.o_n - o_u.o_a).
double loss_2t(const Vec& o_u, const Vec& o_a, std::span<const Vec> negatives, std::span<const double> weights);

struct TrainingPair {
  std::string user_id;
  std::string item_id;
  auto operator<=>(const TrainingPair&) const = default;
};

/// Distinct (user, item) streams of the target type.
std::vector<TrainingPair> training_pairs(const std::vector<InteractionRecord>& train, ItemType target);

/// Number of training pairs per item.
std::map<std::string, double> item_frequencies(std::span<const TrainingPair> pairs);

/// Mean over users of the in-batch loss. Negatives for a pair are the
/// batch's distinct items other than its positive; weights are 1/frequency
/// renormalized to mean 1 over the batch's distinct items. Users with no
/// negatives are skipped. Accumulates the exact gradient when `grad` is set.
double batch_loss_2t(const TowerParams& params, const TowerData& data, std::span<const TrainingPair> batch,
                     TowerParams* grad);

struct TowerEpochLog {
  int epoch = 0;
  double train_loss = 0.0;
  double wall_seconds = 0.0;
};

nlohmann::json to_json(const TowerEpochLog& log);

struct TowerTrainResult {
  TowerParams params;
  std::vector<TowerEpochLog> log;
};

TowerTrainResult train_2t(const TowerParams& init, const TowerData& data, std::vector<TrainingPair> pairs,
                          std::uint64_t seed);

/// One normalized vector per item in data.items.
std::map<std::string, Vec> export_item_vectors(const TowerParams& params, const TowerData& data);
std::map<std::string, Vec> export_user_vectors(const TowerParams& params, const TowerData& data);

// JSON Lines: {"id": ..., "vector": [...]}
std::string serialize_vectors(const std::map<std::string, Vec>& vectors);
std::map<std::string, Vec> parse_vectors(std::string_view text);
void write_vectors(const std::string& path, const std::map<std::string, Vec>& vectors);
std::map<std::string, Vec> read_vectors(const std::string& path);

}  // namespace rec
