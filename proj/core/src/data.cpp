#include "rec/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

namespace rec {

using nlohmann::json;
using ordered_json = nlohmann::ordered_json;

std::string_view to_string(ItemType t) {
  return t == ItemType::audiobook ? "audiobook" : "podcast";
}

std::string_view to_string(Signal s) {
  switch (s) {
    case Signal::stream: return "stream";
    case Signal::follow: return "follow";
    case Signal::preview: return "preview";
    case Signal::intent_to_pay: return "intent_to_pay";
  }
  return "stream";
}

std::optional<ItemType> parse_item_type(std::string_view s) {
  if (s == "audiobook") return ItemType::audiobook;
  if (s == "podcast") return ItemType::podcast;
  return std::nullopt;
}

std::optional<Signal> parse_signal(std::string_view s) {
  if (s == "stream") return Signal::stream;
  if (s == "follow") return Signal::follow;
  if (s == "preview") return Signal::preview;
  if (s == "intent_to_pay") return Signal::intent_to_pay;
  return std::nullopt;
}

namespace {

template <typename Fn>
void for_each_line(std::string_view text, Fn&& fn) {
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    auto end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    ++line_no;
    auto line = text.substr(pos, end - pos);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    fn(line_no, line);
    pos = end + 1;
  }
}

bool is_blank(std::string_view line) {
  return std::all_of(line.begin(), line.end(), [](char c) { return c == ' ' || c == '\t'; });
}

std::string require_string(const json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end() || !it->is_string()) throw std::invalid_argument(std::string("missing string field '") + key + "'");
  auto s = it->get<std::string>();
  if (s.empty()) throw std::invalid_argument(std::string("empty field '") + key + "'");
  return s;
}

std::string optional_string(const json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end() || it->is_null()) return {};
  if (!it->is_string()) throw std::invalid_argument(std::string("field '") + key + "' must be a string");
  return it->get<std::string>();
}

std::vector<double> number_array(const json& j, const char* key, bool required) {
  auto it = j.find(key);
  if (it == j.end() || it->is_null()) {
    if (required) throw std::invalid_argument(std::string("missing array field '") + key + "'");
    return {};
  }
  if (!it->is_array()) throw std::invalid_argument(std::string("field '") + key + "' must be an array");
  std::vector<double> out;
  out.reserve(it->size());
  for (const auto& v : *it) {
    if (!v.is_number()) throw std::invalid_argument(std::string("non-numeric entry in '") + key + "'");
    double d = v.get<double>();
    if (!std::isfinite(d)) throw std::invalid_argument(std::string("non-finite entry in '") + key + "'");
    out.push_back(d);
  }
  return out;
}

InteractionRecord interaction_from_json(const json& j) {
  if (!j.is_object()) throw std::invalid_argument("record is not a JSON object");
  InteractionRecord r;
  r.user_id = require_string(j, "user_id");
  r.item_id = require_string(j, "item_id");
  auto type = parse_item_type(require_string(j, "item_type"));
  if (!type) throw std::invalid_argument("unknown item_type '" + j["item_type"].get<std::string>() + "'");
  r.item_type = *type;
  auto sig = parse_signal(require_string(j, "signal"));
  if (!sig) throw std::invalid_argument("unknown signal '" + j["signal"].get<std::string>() + "'");
  r.signal = *sig;
  if (is_weak(r.signal) && r.item_type != ItemType::audiobook)
    throw std::invalid_argument("weak signal '" + std::string(to_string(r.signal)) + "' on a podcast");
  auto ts = j.find("timestamp");
  if (ts == j.end() || !ts->is_number_integer()) throw std::invalid_argument("timestamp must be an integer");
  r.timestamp = ts->get<std::int64_t>();
  if (r.timestamp < 0) throw std::invalid_argument("negative timestamp");
  return r;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::io, "cannot write " + path);
  out << text;
}

}  // namespace

InteractionParse parse_interactions_text(std::string_view text) {
  InteractionParse out;
  for_each_line(text, [&](std::size_t line_no, std::string_view line) {
    if (is_blank(line)) return;
    try {
      out.records.push_back(interaction_from_json(json::parse(line)));
    } catch (const std::exception& e) {
      out.diagnostics.push_back({line_no, e.what()});
    }
  });
  return out;
}

InteractionParse parse_interactions(const std::string& path) {
  return parse_interactions_text(read_file(path));
}

std::string serialize_interactions(const std::vector<InteractionRecord>& records) {
  std::string out;
  for (const auto& r : records) {
    ordered_json j;
    j["user_id"] = r.user_id;
    j["item_id"] = r.item_id;
    j["item_type"] = to_string(r.item_type);
    j["signal"] = to_string(r.signal);
    j["timestamp"] = r.timestamp;
    out += j.dump();
    out += '\n';
  }
  return out;
}

void write_interactions(const std::string& path, const std::vector<InteractionRecord>& records) {
  write_text(path, serialize_interactions(records));
}

Catalog parse_catalog_text(std::string_view text) {
  Catalog catalog;
  std::map<std::string, std::size_t> first_line;
  std::optional<std::size_t> dim;
  std::size_t dim_line = 0;
  for_each_line(text, [&](std::size_t line_no, std::string_view line) {
    if (is_blank(line)) return;
    CatalogItem item;
    try {
      auto j = json::parse(line);
      if (!j.is_object()) throw std::invalid_argument("record is not a JSON object");
      item.item_id = require_string(j, "item_id");
      auto type = parse_item_type(require_string(j, "item_type"));
      if (!type) throw std::invalid_argument("unknown item_type");
      item.item_type = *type;
      item.content_vector = number_array(j, "content_vector", true);
      item.language = optional_string(j, "language");
      item.genre = optional_string(j, "genre");
    } catch (const std::exception& e) {
      throw Error(ErrorKind::parse, "catalog line " + std::to_string(line_no) + ": " + e.what());
    }
    if (auto it = first_line.find(item.item_id); it != first_line.end())
      throw Error(ErrorKind::parse, "catalog: duplicate item_id '" + item.item_id + "' on lines " +
                                        std::to_string(it->second) + " and " + std::to_string(line_no));
    if (!dim) {
      dim = item.content_vector.size();
      dim_line = line_no;
    } else if (*dim != item.content_vector.size()) {
      throw Error(ErrorKind::parse, "catalog: content_vector dimension " +
                                        std::to_string(item.content_vector.size()) + " on line " +
                                        std::to_string(line_no) + " differs from " + std::to_string(*dim) +
                                        " on line " + std::to_string(dim_line));
    }
    first_line.emplace(item.item_id, line_no);
    catalog.emplace(item.item_id, std::move(item));
  });
  return catalog;
}

Catalog parse_catalog(const std::string& path) { return parse_catalog_text(read_file(path)); }

std::string serialize_catalog(const Catalog& catalog) {
  std::string out;
  for (const auto& [id, item] : catalog) {
    ordered_json j;
    j["item_id"] = item.item_id;
    j["item_type"] = to_string(item.item_type);
    j["content_vector"] = item.content_vector;
    j["language"] = item.language;
    j["genre"] = item.genre;
    out += j.dump();
    out += '\n';
  }
  return out;
}

void write_catalog(const std::string& path, const Catalog& catalog) {
  write_text(path, serialize_catalog(catalog));
}

std::size_t content_dim(const Catalog& catalog) {
  return catalog.empty() ? 0 : catalog.begin()->second.content_vector.size();
}

UserProfiles parse_users(const std::string& path) {
  UserProfiles users;
  for_each_line(read_file(path), [&](std::size_t line_no, std::string_view line) {
    if (is_blank(line)) return;
    UserProfile u;
    try {
      auto j = json::parse(line);
      u.user_id = require_string(j, "user_id");
      u.country = optional_string(j, "country");
      u.age_bucket = optional_string(j, "age_bucket");
      u.music_vector = number_array(j, "music_vector", false);
    } catch (const std::exception& e) {
      throw Error(ErrorKind::parse, "users line " + std::to_string(line_no) + ": " + e.what());
    }
    if (!users.emplace(u.user_id, u).second)
      throw Error(ErrorKind::parse, "users: duplicate user_id '" + u.user_id + "' on line " +
                                        std::to_string(line_no));
  });
  return users;
}

std::string serialize_users(const UserProfiles& users) {
  std::string out;
  for (const auto& [id, u] : users) {
    ordered_json j;
    j["user_id"] = u.user_id;
    j["country"] = u.country;
    j["age_bucket"] = u.age_bucket;
    if (!u.music_vector.empty()) j["music_vector"] = u.music_vector;
    out += j.dump();
    out += '\n';
  }
  return out;
}

void write_users(const std::string& path, const UserProfiles& users) {
  write_text(path, serialize_users(users));
}

std::int64_t default_split_time(const std::vector<InteractionRecord>& records, int holdout_days) {
  if (records.empty()) throw Error(ErrorKind::validation, "split: no records");
  std::int64_t max_ts = 0;
  for (const auto& r : records) max_ts = std::max(max_ts, r.timestamp);
  return max_ts - static_cast<std::int64_t>(holdout_days) * kSecondsPerDay;
}

DatasetSplit timeline_split(const std::vector<InteractionRecord>& records, std::int64_t split_time) {
  if (records.empty()) throw Error(ErrorKind::validation, "split: no records");
  DatasetSplit split;
  split.split_time = split_time;
  for (const auto& r : records) {
    if (r.timestamp < split_time)
      split.train.push_back(r);
    else
      split.holdout.push_back(r);
  }
  if (split.train.empty()) split.warnings.push_back("split_time precedes every record: train window is empty");
  if (split.holdout.empty()) split.warnings.push_back("split_time follows every record: holdout is empty");
  return split;
}

std::vector<InteractionRecord> truncate_to_window(const std::vector<InteractionRecord>& records,
                                                  int days) {
  if (records.empty()) return {};
  std::int64_t max_ts = 0;
  for (const auto& r : records) max_ts = std::max(max_ts, r.timestamp);
  const std::int64_t start = max_ts - static_cast<std::int64_t>(days) * kSecondsPerDay;
  std::vector<InteractionRecord> out;
  for (const auto& r : records)
    if (r.timestamp >= start) out.push_back(r);
  return out;
}

UserSegments user_segments(const DatasetSplit& split) {
  std::set<std::string> touched_audiobooks;
  for (const auto& r : split.train)
    if (r.item_type == ItemType::audiobook) touched_audiobooks.insert(r.user_id);
  UserSegments seg;
  for (const auto& r : split.holdout) {
    if (touched_audiobooks.count(r.user_id))
      seg.warm.insert(r.user_id);
    else
      seg.cold.insert(r.user_id);
  }
  return seg;
}

}  // namespace rec
