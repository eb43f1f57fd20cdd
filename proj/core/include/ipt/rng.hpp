#pragma once

#include <cmath>
#include <cstdint>
#include <string>

#include "ipt/tensor.hpp"

namespace ipt {

/// Portable 64-bit-seed PRNG (splitmix64). Identical streams on every
/// platform; Gaussian draws use Box-Muller so noise synthesis is
/// byte-reproducible regardless of the standard library.
class Rng {
 public:
  static constexpr const char* kAlgorithm = "splitmix64";

  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  /// Uniform in [0, 1).
  double next_uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  /// Uniform in [lo, hi).
  double next_uniform(double lo, double hi) { return lo + (hi - lo) * next_uniform(); }

  /// Integer in [0, n).
  std::uint64_t next_below(std::uint64_t n) { return next_u64() % n; }

  /// Standard normal via Box-Muller; the paired draw is cached.
  double next_gauss() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = next_uniform();
    double u2 = next_uniform();
    while (u1 <= 0.0) u1 = next_uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double theta = 2.0 * M_PI * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

  std::uint64_t state() const { return state_; }
  void set_state(std::uint64_t s) {
    state_ = s;
    has_spare_ = false;
  }

 private:
  std::uint64_t state_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

/// FNV-1a, used to fold string ids into derived seeds.
inline std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

/// Per-entry seed so dataset entries are independently reproducible.
inline std::uint64_t derive_seed(std::uint64_t global_seed, std::uint64_t index,
                                 const std::string& tag) {
  Rng mix(global_seed ^ (0x9e3779b97f4a7c15ull * (index + 1)) ^ fnv1a(tag));
  return mix.next_u64();
}

inline Tensor randn(Shape shape, Rng& rng, double stddev = 1.0, double mean = 0.0) {
  Tensor t(std::move(shape));
  double* p = t.mut();
  for (std::int64_t i = 0; i < t.size(); ++i) p[i] = mean + stddev * rng.next_gauss();
  return t;
}

}  // namespace ipt
