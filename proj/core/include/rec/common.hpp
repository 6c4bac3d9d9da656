#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

namespace rec {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

/// Seeded generator used everywhere randomness is needed.
using Rng = std::mt19937_64;

enum class ErrorKind { io, parse, validation, dependency, numeric };

std::string_view to_string(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

// 64-bit FNV-1a. Used for content hashes in manifests, not for security.
class Fnv1a {
 public:
  void update(std::string_view bytes);
  void update(std::span<const double> values);
  std::uint64_t digest() const noexcept { return state_; }
  std::string hex() const;

 private:
  std::uint64_t state_ = 0xcbf29ce484222325ULL;
};

std::string hash_hex(std::string_view bytes);
std::string read_file(const std::string& path);

/// Uniform in +-sqrt(6 / (fan_in + fan_out)).
void glorot_uniform(Mat& m, Rng& rng);

/// Adam over a fixed list of parameter blocks. The block list passed to
/// step() must have the same shapes on every call.
class Adam {
 public:
  explicit Adam(double learning_rate, double beta1 = 0.9, double beta2 = 0.999,
                double epsilon = 1e-8)
      : lr_(learning_rate), beta1_(beta1), beta2_(beta2), eps_(epsilon) {}

  void step(const std::vector<std::span<double>>& params,
            const std::vector<std::span<const double>>& grads);

  long steps() const noexcept { return t_; }

 private:
  double lr_, beta1_, beta2_, eps_;
  long t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

inline std::span<double> as_span(Mat& m) { return {m.data(), static_cast<std::size_t>(m.size())}; }
inline std::span<double> as_span(Vec& v) { return {v.data(), static_cast<std::size_t>(v.size())}; }
inline std::span<const double> as_span(const Mat& m) {
  return {m.data(), static_cast<std::size_t>(m.size())};
}
inline std::span<const double> as_span(const Vec& v) {
  return {v.data(), static_cast<std::size_t>(v.size())};
}

bool all_finite(std::span<const double> values);

}  // namespace rec
