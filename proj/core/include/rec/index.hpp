#pragma once

#include <map>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "rec/common.hpp"

namespace rec {

/// Exhaustive maximum-dot-product index. Rows are aligned to `ids`, which
/// are sorted.
struct RecIndex {
  std::vector<std::string> ids;
  Mat vectors;  // ids.size() x dim, one row per item

  std::size_t size() const noexcept { return ids.size(); }
  std::size_t dim() const noexcept { return static_cast<std::size_t>(vectors.cols()); }
  bool operator==(const RecIndex& other) const;
};

struct ScoredItem {
  std::string item_id;
  double score = 0.0;
  bool operator==(const ScoredItem&) const = default;
};

RecIndex build_index(const std::map<std::string, Vec>& vectors);
/// Same as the map overload, but reports duplicate ids instead of silently merging.
RecIndex build_index(std::span<const std::pair<std::string, Vec>> vectors);

/// Highest dot products first, ties by ascending id. Excluded ids never appear.
std::vector<ScoredItem> query_topk(const RecIndex& index, const Vec& query, std::size_t k,
                                   const std::set<std::string>& exclude = {});

std::string serialize_index(const RecIndex& index);
RecIndex deserialize_index(std::string bytes);
void save_index(const std::string& path, const RecIndex& index);
RecIndex load_index(const std::string& path);

}  // namespace rec
