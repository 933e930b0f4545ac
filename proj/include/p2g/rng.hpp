#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <random>

#include "p2g/common.hpp"

namespace p2g {

// SplitMix64 step; used both as a generator and as a seed mixer.
inline uint64_t splitmix64(uint64_t& state) {
  uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Folds a list of values into one stream key. Independent streams for
// (seed, phase, step, instance, candidate, slot, ...) come from distinct
// argument tuples; results do not depend on evaluation order elsewhere.
inline uint64_t mix_key(std::initializer_list<uint64_t> parts) {
  uint64_t s = 0x243f6a8885a308d3ULL;
  for (uint64_t p : parts) {
    s ^= p + 0x9e3779b97f4a7c15ULL + (s << 6) + (s >> 2);
    splitmix64(s);
  }
  return splitmix64(s);
}

// mt19937_64 engine (bit-exact per the standard) with hand-rolled
// distributions, since std::*_distribution output is implementation-defined.
class Rng {
 public:
  explicit Rng(uint64_t seed) : eng_(seed) {}

  uint64_t next_u64() { return eng_(); }

  // [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

  // (0, 1]; never zero, safe under log().
  double uniform_pos() { return static_cast<double>((eng_() >> 11) + 1) * 0x1.0p-53; }

  // Box-Muller; caches the second draw.
  double normal() {
    if (has_cached_) {
      has_cached_ = false;
      return cached_;
    }
    double u1 = uniform_pos();
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 2.0 * 3.14159265358979323846 * u2;
    cached_ = r * std::sin(a);
    has_cached_ = true;
    return r * std::cos(a);
  }

  // Uniform over [0, n). Modulo bias is below 2^-50 for desk-scale n.
  int uniform_int(int n) { return static_cast<int>(eng_() % static_cast<uint64_t>(n)); }

  bool bernoulli(double p) { return uniform() < p; }

 private:
  std::mt19937_64 eng_;
  double cached_ = 0.0;
  bool has_cached_ = false;
};

// Fresh vector of standard normal draws for a given stream key.
inline Vec gaussian_vector(uint64_t key, int len) {
  Rng rng(key);
  Vec v(len);
  for (int i = 0; i < len; ++i) v[i] = rng.normal();
  return v;
}

}  // namespace p2g
