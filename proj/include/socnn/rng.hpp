#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "socnn/error.hpp"

namespace socnn {

// Deterministic random source. All distributions are derived from the raw
// 64-bit stream by fixed arithmetic so that a seed pins the exact output
// sequence independent of the standard library implementation.
class Rng {
 public:
  explicit Rng(uint64_t seed) : gen_(seed) {}

  uint64_t next_u64() { return gen_(); }

  // Uniform in [0, 1) with 53 bits of resolution.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) {
    if (!(lo <= hi)) throw ValueError("Rng::uniform: lo > hi");
    return lo + (hi - lo) * uniform();
  }

  // Box-Muller; the second variate of each pair is cached.
  double normal(double mean = 0.0, double stddev = 1.0) {
    if (have_spare_) {
      have_spare_ = false;
      return mean + stddev * spare_;
    }
    double u1 = 0.0;
    do {
      u1 = uniform();
    } while (u1 <= 0.0);
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * 3.14159265358979323846 * u2;
    spare_ = r * std::sin(theta);
    have_spare_ = true;
    return mean + stddev * r * std::cos(theta);
  }

  // Uniform integer in [0, n).
  int uniform_int(int n) {
    if (n <= 0) throw ValueError("Rng::uniform_int: n must be positive");
    // Rejection sampling to avoid modulo bias.
    const uint64_t un = static_cast<uint64_t>(n);
    const uint64_t limit = UINT64_MAX - UINT64_MAX % un;
    uint64_t v = next_u64();
    while (v >= limit) v = next_u64();
    return static_cast<int>(v % un);
  }

  // Fisher-Yates; fixed algorithm so shuffles are reproducible everywhere.
  template <typename T>
  void shuffle(std::vector<T>& items) {
    for (int i = static_cast<int>(items.size()) - 1; i > 0; --i) {
      const int j = uniform_int(i + 1);
      std::swap(items[static_cast<size_t>(i)], items[static_cast<size_t>(j)]);
    }
  }

 private:
  std::mt19937_64 gen_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

// Combines seeds for derived streams (per item, per epoch, per vote, ...).
inline uint64_t mix_seed(uint64_t a, uint64_t b) {
  uint64_t x = a + 0x9e3779b97f4a7c15ULL + (b << 6) + (b >> 2);
  x ^= x >> 30;
  x *= 0xbf58476d1ce4e5b9ULL;
  x ^= x >> 27;
  x *= 0x94d049bb133111ebULL;
  x ^= x >> 31;
  return x;
}

}  // namespace socnn
