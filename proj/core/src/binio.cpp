#include "rec/binio.hpp"

#include <cstring>
#include <fstream>

namespace rec::binio {

namespace {
constexpr std::uint64_t kMaxLen = 1ULL << 34;
}

Writer::Writer(std::string_view magic, std::uint32_t version) {
  if (magic.size() != 4) throw Error(ErrorKind::validation, "binio: magic must be 4 bytes");
  buf_.append(magic);
  u32(version);
}

void Writer::raw(const void* p, std::size_t n) { buf_.append(static_cast<const char*>(p), n); }
void Writer::u32(std::uint32_t v) { raw(&v, sizeof v); }
void Writer::u64(std::uint64_t v) { raw(&v, sizeof v); }
void Writer::i64(std::int64_t v) { raw(&v, sizeof v); }
void Writer::f64(double v) { raw(&v, sizeof v); }

void Writer::str(std::string_view s) {
  u64(s.size());
  raw(s.data(), s.size());
}

void Writer::strings(const std::vector<std::string>& list) {
  u64(list.size());
  for (const auto& s : list) str(s);
}

void Writer::u32s(const std::vector<std::uint32_t>& list) {
  u64(list.size());
  raw(list.data(), list.size() * sizeof(std::uint32_t));
}

void Writer::f64s(const std::vector<double>& list) {
  u64(list.size());
  raw(list.data(), list.size() * sizeof(double));
}

void Writer::matrix(const Mat& m) {
  u64(static_cast<std::uint64_t>(m.rows()));
  u64(static_cast<std::uint64_t>(m.cols()));
  raw(m.data(), static_cast<std::size_t>(m.size()) * sizeof(double));
}

void Writer::vector(const Vec& v) {
  u64(static_cast<std::uint64_t>(v.size()));
  raw(v.data(), static_cast<std::size_t>(v.size()) * sizeof(double));
}

void Writer::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::io, "cannot write " + path);
  out.write(buf_.data(), static_cast<std::streamsize>(buf_.size()));
  if (!out) throw Error(ErrorKind::io, "short write to " + path);
}

Reader::Reader(std::string bytes, std::string_view magic, std::uint32_t max_version)
    : buf_(std::move(bytes)) {
  if (buf_.size() < 8 || std::string_view(buf_.data(), 4) != magic)
    throw Error(ErrorKind::parse, "binio: bad magic, expected " + std::string(magic));
  pos_ = 4;
  version_ = u32();
  if (version_ == 0 || version_ > max_version)
    throw Error(ErrorKind::parse, "binio: unsupported version " + std::to_string(version_));
}

Reader Reader::open(const std::string& path, std::string_view magic, std::uint32_t max_version) {
  return Reader(read_file(path), magic, max_version);
}

void Reader::raw(void* p, std::size_t n) {
  if (n > buf_.size() - pos_) throw Error(ErrorKind::parse, "binio: truncated container");
  std::memcpy(p, buf_.data() + pos_, n);
  pos_ += n;
}

std::uint32_t Reader::u32() { std::uint32_t v; raw(&v, sizeof v); return v; }
std::uint64_t Reader::u64() { std::uint64_t v; raw(&v, sizeof v); return v; }
std::int64_t Reader::i64() { std::int64_t v; raw(&v, sizeof v); return v; }
double Reader::f64() { double v; raw(&v, sizeof v); return v; }

std::string Reader::str() {
  const auto n = u64();
  if (n > kMaxLen) throw Error(ErrorKind::parse, "binio: string too long");
  std::string s(n, '\0');
  raw(s.data(), n);
  return s;
}

std::vector<std::string> Reader::strings() {
  const auto n = u64();
  if (n > kMaxLen) throw Error(ErrorKind::parse, "binio: list too long");
  std::vector<std::string> out;
  out.reserve(n);
  for (std::uint64_t i = 0; i < n; ++i) out.push_back(str());
  return out;
}

std::vector<std::uint32_t> Reader::u32s() {
  const auto n = u64();
  if (n > kMaxLen) throw Error(ErrorKind::parse, "binio: list too long");
  std::vector<std::uint32_t> out(n);
  raw(out.data(), n * sizeof(std::uint32_t));
  return out;
}

std::vector<double> Reader::f64s() {
  const auto n = u64();
  if (n > kMaxLen) throw Error(ErrorKind::parse, "binio: list too long");
  std::vector<double> out(n);
  raw(out.data(), n * sizeof(double));
  return out;
}

Mat Reader::matrix() {
  const auto rows = u64();
  const auto cols = u64();
  if (rows * cols > kMaxLen) throw Error(ErrorKind::parse, "binio: matrix too large");
  Mat m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  raw(m.data(), rows * cols * sizeof(double));
  return m;
}

Vec Reader::vector() {
  const auto n = u64();
  if (n > kMaxLen) throw Error(ErrorKind::parse, "binio: vector too large");
  Vec v(static_cast<Eigen::Index>(n));
  raw(v.data(), n * sizeof(double));
  return v;
}

}  // namespace rec::binio
