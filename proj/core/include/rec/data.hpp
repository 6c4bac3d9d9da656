#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "rec/common.hpp"

namespace rec {

enum class ItemType : std::uint8_t { audiobook = 0, podcast = 1 };
inline constexpr std::size_t kNumItemTypes = 2;

enum class Signal : std::uint8_t { stream = 0, follow = 1, preview = 2, intent_to_pay = 3 };
inline constexpr std::size_t kNumSignals = 4;

inline constexpr std::int64_t kSecondsPerDay = 86400;

std::string_view to_string(ItemType t);
std::string_view to_string(Signal s);
std::optional<ItemType> parse_item_type(std::string_view s);
std::optional<Signal> parse_signal(std::string_view s);

inline bool is_weak(Signal s) { return s != Signal::stream; }

struct InteractionRecord {
  std::string user_id;
  std::string item_id;
  ItemType item_type = ItemType::audiobook;
  Signal signal = Signal::stream;
  std::int64_t timestamp = 0;

  auto operator<=>(const InteractionRecord&) const = default;
};

struct CatalogItem {
  std::string item_id;
  ItemType item_type = ItemType::audiobook;
  std::vector<double> content_vector;
  std::string language;
  std::string genre;

  bool operator==(const CatalogItem&) const = default;
};

using Catalog = std::map<std::string, CatalogItem>;

/// Optional per-user side information. Absent users get empty categoricals
/// (the out-of-vocabulary slot) and a zero music vector.
struct UserProfile {
  std::string user_id;
  std::string country;
  std::string age_bucket;
  std::vector<double> music_vector;

  bool operator==(const UserProfile&) const = default;
};

using UserProfiles = std::map<std::string, UserProfile>;

struct Diagnostic {
  std::size_t line = 0;
  std::string message;
};

struct InteractionParse {
  std::vector<InteractionRecord> records;
  std::vector<Diagnostic> diagnostics;
};

// Interactions: JSON Lines with user_id, item_id, item_type, signal, timestamp.
// Malformed lines are skipped and reported; a missing file throws.
InteractionParse parse_interactions(const std::string& path);
InteractionParse parse_interactions_text(std::string_view text);
std::string serialize_interactions(const std::vector<InteractionRecord>& records);
void write_interactions(const std::string& path, const std::vector<InteractionRecord>& records);

// Catalog: JSON Lines with item_id, item_type, content_vector, language, genre.
// Any defect is fatal.
Catalog parse_catalog(const std::string& path);
Catalog parse_catalog_text(std::string_view text);
std::string serialize_catalog(const Catalog& catalog);
void write_catalog(const std::string& path, const Catalog& catalog);
std::size_t content_dim(const Catalog& catalog);

UserProfiles parse_users(const std::string& path);
std::string serialize_users(const UserProfiles& users);
void write_users(const std::string& path, const UserProfiles& users);

struct DatasetSplit {
  std::vector<InteractionRecord> train;
  std::vector<InteractionRecord> holdout;
  std::int64_t split_time = 0;
  std::vector<std::string> warnings;
};

/// Latest timestamp minus the holdout window.
std::int64_t default_split_time(const std::vector<InteractionRecord>& records,
                                int holdout_days = 14);

/// timestamp < split_time goes to train, everything else to holdout.
/// Input order is preserved within each side.
DatasetSplit timeline_split(const std::vector<InteractionRecord>& records, std::int64_t split_time);

/// Keeps only records within `days` of the latest timestamp (inclusive of
/// the boundary second). Off unless the pipeline sets a train window.
std::vector<InteractionRecord> truncate_to_window(const std::vector<InteractionRecord>& records,
                                                  int days);

struct UserSegments {
  std::set<std::string> warm;
  std::set<std::string> cold;
};

/// Warm iff the user has any train-window audiobook interaction. Only
/// users present in the holdout are segmented.
UserSegments user_segments(const DatasetSplit& split);

}  // namespace rec
