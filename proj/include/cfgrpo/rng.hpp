// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <random>

namespace cfgrpo {

// Seeded generator with portable uniform/normal draws. The std
// distributions are implementation-defined, so draws are derived from
// raw engine output to keep runs identical across standard libraries.
class Rng {
  public:
    explicit Rng(uint64_t seed);

    uint64_t next_u64() { return engine_(); }
    double uniform();                       // [0, 1)
    double uniform(double lo, double hi);   // [lo, hi)
    double normal();
    double normal(double mean, double sd) { return mean + sd * normal(); }
    uint64_t below(uint64_t n);             // [0, n)
    bool bernoulli(double p) { return uniform() < p; }

    // Independent stream keyed by (seed, tag).
    static Rng derive(uint64_t seed, uint64_t tag);

  private:
    std::mt19937_64 engine_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

uint64_t mix_seed(uint64_t seed, uint64_t tag);

} // namespace cfgrpo
