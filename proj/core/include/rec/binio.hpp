#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "rec/common.hpp"

namespace rec::binio {

// Little-endian tagged container: 4-byte magic, u32 version, then payload.
// Matrices carry (rows, cols) ahead of column-major doubles.
class Writer {
 public:
  Writer(std::string_view magic, std::uint32_t version);

  void u32(std::uint32_t v);
  void u64(std::uint64_t v);
  void i64(std::int64_t v);
  void f64(double v);
  void str(std::string_view s);
  void strings(const std::vector<std::string>& list);
  void u32s(const std::vector<std::uint32_t>& list);
  void f64s(const std::vector<double>& list);
  void matrix(const Mat& m);
  void vector(const Vec& v);

  const std::string& bytes() const noexcept { return buf_; }
  void save(const std::string& path) const;

 private:
  void raw(const void* p, std::size_t n);
  std::string buf_;
};

class Reader {
 public:
  Reader(std::string bytes, std::string_view magic, std::uint32_t max_version);
  static Reader open(const std::string& path, std::string_view magic, std::uint32_t max_version);

  std::uint32_t version() const noexcept { return version_; }

  std::uint32_t u32();
  std::uint64_t u64();
  std::int64_t i64();
  double f64();
  std::string str();
  std::vector<std::string> strings();
  std::vector<std::uint32_t> u32s();
  std::vector<double> f64s();
  Mat matrix();
  Vec vector();

  bool at_end() const noexcept { return pos_ == buf_.size(); }

 private:
  void raw(void* p, std::size_t n);
  std::string buf_;
  std::size_t pos_ = 0;
  std::uint32_t version_ = 0;
};

}  // namespace rec::binio
