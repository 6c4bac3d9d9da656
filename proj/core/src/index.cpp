#include "rec/index.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>

#include "rec/binio.hpp"

namespace rec {

bool RecIndex::operator==(const RecIndex& o) const {
  return ids == o.ids && vectors.rows() == o.vectors.rows() && vectors.cols() == o.vectors.cols() &&
         vectors == o.vectors;
}

RecIndex build_index(std::span<const std::pair<std::string, Vec>> vectors) {
  if (vectors.empty()) throw Error(ErrorKind::validation, "build_index: no vectors");
  std::vector<std::size_t> order(vectors.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](auto a, auto b) { return vectors[a].first < vectors[b].first; });
  const auto dim = vectors.front().second.size();
  if (dim == 0) throw Error(ErrorKind::validation, "build_index: zero-dimensional vectors");
  RecIndex index;
  index.vectors.resize(static_cast<Eigen::Index>(vectors.size()), dim);
  for (std::size_t row = 0; row < order.size(); ++row) {
    const auto& [id, v] = vectors[order[row]];
    if (!index.ids.empty() && index.ids.back() == id)
      throw Error(ErrorKind::validation, "build_index: duplicate id '" + id + "'");
    if (v.size() != dim)
      throw Error(ErrorKind::validation, "build_index: '" + id + "' has dimension " + std::to_string(v.size()) +
                                             ", expected " + std::to_string(dim));
    index.ids.push_back(id);
    index.vectors.row(static_cast<Eigen::Index>(row)) = v.transpose();
  }
  return index;
}

RecIndex build_index(const std::map<std::string, Vec>& vectors) {
  std::vector<std::pair<std::string, Vec>> list(vectors.begin(), vectors.end());
  return build_index(std::span<const std::pair<std::string, Vec>>(list));
}

std::vector<ScoredItem> query_topk(const RecIndex& index, const Vec& query, std::size_t k,
                                   const std::set<std::string>& exclude) {
  if (k == 0) throw Error(ErrorKind::validation, "query_topk: k must be >= 1");
  if (static_cast<std::size_t>(query.size()) != index.dim())
    throw Error(ErrorKind::validation, "query_topk: query has dimension " + std::to_string(query.size()) +
                                           ", index has " + std::to_string(index.dim()));
  // Summed over dimensions in order for every item, so a score never depends
  // on which SIMD or GEMV kernel Eigen picks.
  Vec scores = Vec::Zero(static_cast<Eigen::Index>(index.size()));
  for (Eigen::Index d = 0; d < index.vectors.cols(); ++d) scores += index.vectors.col(d) * query(d);
  std::vector<std::size_t> cand;
  cand.reserve(index.size());
  for (std::size_t i = 0; i < index.size(); ++i)
    if (!exclude.contains(index.ids[i])) cand.push_back(i);
  // ids are sorted, so a smaller row index means a smaller id.
  auto better = [&](std::size_t a, std::size_t b) {
    const double sa = scores(static_cast<Eigen::Index>(a));
    const double sb = scores(static_cast<Eigen::Index>(b));
    return sa != sb ? sa > sb : a < b;
  };
  const auto n = std::min(k, cand.size());
  std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(n), cand.end(), better);
  std::vector<ScoredItem> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back({index.ids[cand[i]], scores(static_cast<Eigen::Index>(cand[i]))});
  return out;
}

namespace {
constexpr std::string_view kIndexMagic = "RIDX";
constexpr std::uint32_t kIndexVersion = 1;
}  // namespace

std::string serialize_index(const RecIndex& index) {
  binio::Writer w(kIndexMagic, kIndexVersion);
  w.u64(index.size());
  w.u64(index.dim());
  w.strings(index.ids);
  std::vector<double> rows;
  rows.reserve(static_cast<std::size_t>(index.vectors.size()));
  for (Eigen::Index i = 0; i < index.vectors.rows(); ++i)
    for (Eigen::Index j = 0; j < index.vectors.cols(); ++j) rows.push_back(index.vectors(i, j));
  w.f64s(rows);
  return w.bytes();
}

RecIndex deserialize_index(std::string bytes) {
  binio::Reader r(std::move(bytes), kIndexMagic, kIndexVersion);
  const auto count = r.u64();
  const auto dim = r.u64();
  RecIndex index;
  index.ids = r.strings();
  auto rows = r.f64s();
  if (index.ids.size() != count || rows.size() != count * dim)
    throw Error(ErrorKind::parse, "index file: header disagrees with payload");
  if (!std::is_sorted(index.ids.begin(), index.ids.end()) ||
      std::adjacent_find(index.ids.begin(), index.ids.end()) != index.ids.end())
    throw Error(ErrorKind::parse, "index file: ids are not sorted and unique");
  if (!r.at_end()) throw Error(ErrorKind::parse, "index file: trailing bytes");
  index.vectors.resize(static_cast<Eigen::Index>(count), static_cast<Eigen::Index>(dim));
  std::size_t p = 0;
  for (Eigen::Index i = 0; i < index.vectors.rows(); ++i)
    for (Eigen::Index j = 0; j < index.vectors.cols(); ++j) index.vectors(i, j) = rows[p++];
  return index;
}

void save_index(const std::string& path, const RecIndex& index) {
  auto bytes = serialize_index(index);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::io, "cannot write " + path);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

RecIndex load_index(const std::string& path) { return deserialize_index(read_file(path)); }

}  // namespace rec
