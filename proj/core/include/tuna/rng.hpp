#pragma once

#include <cstdint>

namespace tuna {

// xoshiro256** seeded through splitmix64. Every source of randomness in the
// library flows through an explicitly passed Rng so that a run is
// reproducible bit-for-bit from a single seed, independent of the platform's
// std::random distributions.
class Rng {
  public:
    explicit Rng(uint64_t seed);

    uint64_t next_u64();

    // Uniform in [0, 1).
    double uniform();

    // Standard normal via Box-Muller (two uniforms per draw, no caching).
    double normal();

    // Normal(0, stddev^2) resampled until |z| <= 2*stddev.
    double truncated_normal(double stddev);

    // Uniform integer in [lo, hi] inclusive.
    int64_t uniform_int(int64_t lo, int64_t hi);

    // Derive an independent child stream without advancing this generator.
    Rng fork(uint64_t stream) const;

  private:
    uint64_t state_[4];
};

}  // namespace tuna
