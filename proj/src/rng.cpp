// SPDX-License-Identifier: Apache-2.0
#include "cfgrpo/rng.hpp"

#include <cmath>

namespace cfgrpo {

namespace {

uint64_t splitmix64(uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

} // namespace

uint64_t mix_seed(uint64_t seed, uint64_t tag) {
    return splitmix64(splitmix64(seed) ^ (tag * 0xD1B54A32D192ED03ULL));
}

Rng::Rng(uint64_t seed) : engine_(splitmix64(seed)) {}

Rng Rng::derive(uint64_t seed, uint64_t tag) { return Rng(mix_seed(seed, tag)); }

double Rng::uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

double Rng::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

double Rng::normal() {
    if (has_spare_) {
        has_spare_ = false;
        return spare_;
    }
    double u1 = 0.0;
    do {
        u1 = uniform();
    } while (u1 <= 0.0);
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double t = 2.0 * M_PI * u2;
    spare_ = r * std::sin(t);
    has_spare_ = true;
    return r * std::cos(t);
}

uint64_t Rng::below(uint64_t n) {
    // rejection to avoid modulo bias
    const uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    uint64_t x;
    do {
        x = engine_();
    } while (x >= limit);
    return x % n;
}

} // namespace cfgrpo
