#pragma once

#include <cmath>
#include <cstdint>

namespace emoformer {

// SplitMix64. Stateful stream used for seeded shuffles and weight init;
// the stateless mix() is the counter-based generator behind dropout masks,
// so masks depend only on (seed, salt, index), never on call order.
class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(seed) {}

  uint64_t next_u64() {
    state_ += 0x9e3779b97f4a7c15ULL;
    return mix_bits(state_);
  }

  // Uniform in [0, 1).
  double next_double() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  // Uniform in [lo, hi).
  double uniform(double lo, double hi) {
    return lo + (hi - lo) * next_double();
  }

  // Standard normal via Box-Muller.
  double normal() {
    double u1 = next_double();
    double u2 = next_double();
    if (u1 < 1e-300) u1 = 1e-300;
    return std::sqrt(-2.0 * std::log(u1)) *
           std::cos(6.283185307179586476925287 * u2);
  }

  // Uniform integer in [0, n).
  uint64_t below(uint64_t n) { return n == 0 ? 0 : next_u64() % n; }

  static uint64_t mix_bits(uint64_t z) {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  // Counter-based hash of (seed, salt, index) to a u64.
  static uint64_t mix(uint64_t seed, uint64_t salt, uint64_t index) {
    uint64_t z = seed;
    z = mix_bits(z + 0x9e3779b97f4a7c15ULL * (salt + 1));
    z = mix_bits(z + 0x9e3779b97f4a7c15ULL * (index + 1));
    return z;
  }

  // Counter-based uniform in [0, 1).
  static double mix_double(uint64_t seed, uint64_t salt, uint64_t index) {
    return static_cast<double>(mix(seed, salt, index) >> 11) * 0x1.0p-53;
  }

 private:
  uint64_t state_;
};

// Fisher-Yates with the toolkit Rng; std::shuffle is avoided because its
// output is not pinned by the standard.
template <typename Vec>
void seeded_shuffle(Vec& v, Rng& rng) {
  if (v.empty()) return;
  for (size_t i = v.size() - 1; i > 0; --i) {
    size_t j = static_cast<size_t>(rng.below(i + 1));
    std::swap(v[i], v[j]);
  }
}

}  // namespace emoformer
