#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

namespace arcgen {

// Deterministic RNG with fixed semantics on every platform. std::mt19937 is
// portable but the <random> distributions are not, so the distributions are
// implemented here directly (splitmix64 core, 53-bit uniforms, Box-Muller
// normals).
class Rng {
public:
  explicit Rng(uint64_t seed = 0) : state_(seed + 0x9e3779b97f4a7c15ULL) {}

  uint64_t next_u64() {
    uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  // Uniform in [0, 1).
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [lo, hi] inclusive. Uses rejection to stay unbiased.
  int64_t uniform_int(int64_t lo, int64_t hi) {
    uint64_t span = static_cast<uint64_t>(hi - lo) + 1;
    if (span == 0) return lo + static_cast<int64_t>(next_u64());
    uint64_t limit = UINT64_MAX - UINT64_MAX % span;
    uint64_t v;
    do {
      v = next_u64();
    } while (v >= limit);
    return lo + static_cast<int64_t>(v % span);
  }

  bool bernoulli(double p) { return uniform() < p; }

  double normal(double mean = 0.0, double stddev = 1.0) {
    if (have_spare_) {
      have_spare_ = false;
      return mean + stddev * spare_;
    }
    double u1, u2;
    do {
      u1 = uniform();
    } while (u1 <= 0.0);
    u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return mean + stddev * r * std::cos(a);
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      size_t j = static_cast<size_t>(uniform_int(0, static_cast<int64_t>(i) - 1));
      std::swap(v[i - 1], v[j]);
    }
  }

  // Derives an independent stream, e.g. one per training job.
  Rng fork(uint64_t salt) {
    uint64_t s = next_u64();
    return Rng(s ^ (salt * 0x9e3779b97f4a7c15ULL + 0x632be59bd9b4e019ULL));
  }

private:
  uint64_t state_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

// Order-independent seed derivation: job i of a run seeded with `master`
// always sees the same stream no matter how jobs are scheduled.
inline uint64_t derive_seed(uint64_t master, uint64_t salt) {
  uint64_t z = master ^ (salt * 0x9e3779b97f4a7c15ULL + 0x1d8e4e27c47d124fULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace arcgen
