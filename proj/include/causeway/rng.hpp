#pragma once

#include <cmath>
#include <cstdint>
#include <random>

#include "causeway/errors.hpp"

namespace causeway {

// splitmix64 finalizer; used to derive child seeds from (master, indices).
inline uint64_t hash_u64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline uint64_t mix_seed(uint64_t a, uint64_t b) { return hash_u64(hash_u64(a) ^ (b + 0x9e3779b97f4a7c15ULL)); }

inline uint64_t mix_seed(uint64_t a, uint64_t b, uint64_t c) { return mix_seed(mix_seed(a, b), c); }

// Deterministic random source. std::mt19937_64 is fully specified by the
// standard; the distribution transforms below are written out explicitly
// because the std::*_distribution classes are implementation-defined and
// would break bit-exact replay across toolchains.
class Rng {
 public:
  explicit Rng(uint64_t seed) : gen_(seed) {}

  uint64_t next_u64() { return gen_(); }

  // Uniform on [0, 1), 53-bit resolution.
  double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

  // Uniform on (0, 1]; safe to feed into log().
  double uniform_pos() { return 1.0 - uniform(); }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Inclusive integer range, unbiased via rejection.
  int64_t uniform_int(int64_t lo, int64_t hi) {
    if (lo > hi) throw InvalidInputError("uniform_int: empty range");
    uint64_t range = static_cast<uint64_t>(hi - lo) + 1;
    if (range == 0) return static_cast<int64_t>(gen_());  // full 64-bit range
    uint64_t limit = UINT64_MAX - UINT64_MAX % range;
    uint64_t x;
    do {
      x = gen_();
    } while (x >= limit);
    return lo + static_cast<int64_t>(x % range);
  }

  bool bernoulli(double p) { return uniform() < p; }

  // Box-Muller without caching, so draw counts stay predictable.
  double normal() {
    double u1 = uniform_pos();
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  // Marsaglia-Tsang; shape < 1 boosted through Gamma(shape+1) * U^(1/shape).
  double gamma(double shape, double scale) {
    if (shape <= 0.0 || scale <= 0.0) throw InvalidConfigError("gamma: parameters must be positive");
    if (shape < 1.0) {
      double u = uniform_pos();
      return gamma(shape + 1.0, scale) * std::pow(u, 1.0 / shape);
    }
    double d = shape - 1.0 / 3.0;
    double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
      double x, v;
      do {
        x = normal();
        v = 1.0 + c * x;
      } while (v <= 0.0);
      v = v * v * v;
      double u = uniform_pos();
      if (std::log(u) < 0.5 * x * x + d - d * v + d * std::log(v)) return d * v * scale;
    }
  }

  double gumbel() { return -std::log(-std::log(uniform_pos())); }

  // Fisher-Yates; permutes indices 0..n-1.
  template <class IntVec>
  void shuffle(IntVec& v) {
    for (size_t i = v.size(); i > 1; --i) {
      size_t j = static_cast<size_t>(uniform_int(0, static_cast<int64_t>(i) - 1));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::mt19937_64 gen_;
};

}  // namespace causeway
