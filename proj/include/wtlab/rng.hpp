#pragma once

#include <complex>
#include <cstdint>
#include <random>

namespace wtl {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

/// Pipeline stages own disjoint stream families.
enum class Stage : std::uint64_t { Noise = 1, Initial = 2, Scan = 3, Auxiliary = 4 };

/// Stream seed for (master, stage, sample):
///   splitmix64(splitmix64(master ^ splitmix64(stage)) + sample).
/// Changing any input gives an unrelated stream; the same triple always
/// reproduces the same draws.
inline std::uint64_t stream_seed(std::uint64_t master, Stage stage, std::uint64_t sample) {
  return splitmix64(splitmix64(master ^ splitmix64(static_cast<std::uint64_t>(stage))) + sample);
}

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}
  Rng(std::uint64_t master, Stage stage, std::uint64_t sample)
      : engine_(stream_seed(master, stage, sample)) {}

  double normal() { return normal_(engine_); }
  double uniform() { return uniform_(engine_); }
  /// Complex Gaussian with E|z|^2 = 1 and E z^2 = 0.
  std::complex<double> complex_normal() {
    constexpr double s = 0.70710678118654752440;
    const double re = normal_(engine_);
    const double im = normal_(engine_);
    return {s * re, s * im};
  }
  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
  std::uniform_real_distribution<double> uniform_{0.0, 1.0};
};

}  // namespace wtl
