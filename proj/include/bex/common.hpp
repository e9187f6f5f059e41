#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

namespace bex {

using Vec = Eigen::VectorXd;
// Row i of a batch is sample i.
using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Bad configuration: layer shapes, unknown keys, out-of-range hyperparameters.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// API misuse (backward without forward, step after terminal, ...).
struct UsageError : std::logic_error {
  using std::logic_error::logic_error;
};

/// NaN/Inf in a loss, gradient or parameter. Training runs abort on this.
struct NumericalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Not enough data yet (normalization stats, ensemble warmup).
struct NotReadyError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline bool all_finite(const Eigen::Ref<const Mat>& m) { return m.allFinite(); }

inline double softplus(double x) {
  // log(1 + e^x) without overflow
  return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

/// SplitMix64 finalizer; used to derive independent sub-seeds from a master seed.
inline std::uint64_t mix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

/// Derive the sub-seed for `stream` from `seed`. Distinct streams give decorrelated seeds.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  return mix64(mix64(seed) ^ mix64(stream * 0xD1B54A32D192ED03ULL + 1));
}

/// xoshiro256** generator with explicitly defined uniform/normal/categorical draws,
/// so sequences are reproducible independent of the standard library's distributions.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) { reseed(seed); }

  void reseed(std::uint64_t seed) {
    std::uint64_t x = seed;
    for (auto& s : state_) {
      x += 0x9E3779B97F4A7C15ULL;
      s = mix64(x);
    }
    has_spare_ = false;
  }

  std::uint64_t next_u64() {
    const std::uint64_t result = rotl(state_[1] * 5, 7) * 9;
    const std::uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
  }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n).
  std::size_t index(std::size_t n) {
    if (n == 0) throw UsageError("Rng::index: empty range");
    return static_cast<std::size_t>(uniform() * static_cast<double>(n));
  }

  /// Standard normal via Box-Muller; the second variate is cached.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

  /// Inverse-CDF draw: the first index whose cumulative probability exceeds u.
  template <typename Probs>
  std::size_t categorical(const Probs& p) {
    const double u = uniform();
    double acc = 0.0;
    const auto n = static_cast<std::size_t>(p.size());
    for (std::size_t i = 0; i < n; ++i) {
      acc += p[static_cast<Eigen::Index>(i)];
      if (u < acc) return i;
    }
    // rounding left a sliver above the last cumulative sum
    for (std::size_t i = n; i-- > 0;)
      if (p[static_cast<Eigen::Index>(i)] > 0) return i;
    return n - 1;
  }

 private:
  static std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

  std::uint64_t state_[4]{};
  double spare_ = 0.0;
  bool has_spare_ = false;
};

/// Named seed streams fanned out from a run's master seed.
enum class SeedStream : std::uint64_t {
  Env = 1,
  Policy = 2,
  Buffer = 3,
  Ensemble = 4,
  Selector = 5,
  Evaluation = 6,
  Init = 7,
  Model = 8,
};

inline std::uint64_t derive_seed(std::uint64_t seed, SeedStream stream) {
  return derive_seed(seed, static_cast<std::uint64_t>(stream));
}

}  // namespace bex
