#pragma once

#include <cmath>
#include <cstdint>
#include <iomanip>
#include <sstream>
#include <random>
#include <stdexcept>
#include <string>

namespace grrnn {

/// Shape or dimension disagreement between operands.
class ShapeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Numerically degenerate input (empty image, zero-norm feature, single-element
/// batch statistics, non-finite gradient).
class ValueError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// File or stream failure, including malformed on-disk formats.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid run configuration (bad variant/axis combination, missing inputs).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Inconsistent dataset contents (e.g. mixed writer labels in one group).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ull;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

/// Deterministic random stream. The generator is std::mt19937_64 (its output
/// sequence is fixed by the standard); all value mappings are done here rather
/// than with std::*_distribution so that results do not depend on the standard
/// library implementation.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : seed_(seed), engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform in [0,1) with 53 random bits.
  double next_real() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * next_real(); }

  /// Uniform integer in [lo, hi], both ends inclusive.
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
    const std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
    return lo + static_cast<std::int64_t>(next_u64() % span);
  }

  /// Standard normal via Box-Muller; draws two uniforms per sample.
  double normal() {
    double u1 = next_real();
    while (u1 <= 0.0) u1 = next_real();
    const double u2 = next_real();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  /// Derive an independent substream; forking is order-free in the parent.
  Rng fork(std::uint64_t stream) const { return Rng(mix64(seed_ ^ mix64(stream))); }

  std::uint64_t seed() const { return seed_; }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
};

/// Number formatting shared by every CSV emitter (stable across runs).
inline std::string format_metric(double v) {
  std::ostringstream os;
  os << std::setprecision(10) << v;
  return os.str();
}

}  // namespace grrnn
