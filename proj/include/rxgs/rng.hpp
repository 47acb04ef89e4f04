// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <cmath>
#include <string_view>

namespace rxgs {

// Deterministic PRNG used everywhere in the project.
//
// All randomness flows from a single 64-bit run seed. Independent module
// streams are carved out by hashing (seed, stream tag, counter) into a
// SplitMix64 state, so adding or reordering call sites in one module never
// perturbs another module's stream. Distributions are implemented by hand
// (not <random>) so outputs are identical across standard libraries.
class Rng {
public:
    explicit Rng(uint64_t state) : state_(state) {}

    uint64_t next_u64() {
        state_ += 0x9e3779b97f4a7c15ull;
        uint64_t z = state_;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    // Uniform in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [0, n). n must be > 0.
    uint64_t below(uint64_t n) { return next_u64() % n; }

    // Standard normal via Box-Muller.
    double normal() {
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(kTau * u2);
    }

private:
    static constexpr double kTau = 6.28318530717958647692;
    uint64_t state_;
};

namespace detail {
inline uint64_t fnv1a(std::string_view s, uint64_t h = 0xcbf29ce484222325ull) {
    for (const char c : s) {
        h ^= static_cast<uint8_t>(c);
        h *= 0x100000001b3ull;
    }
    return h;
}
inline uint64_t mix64(uint64_t z) {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}
}  // namespace detail

// Derive an independent stream seed from the run seed, a tag naming the
// consumer ("trainer.sample", "scene.init", ...) and an optional counter.
inline Rng derive_stream(uint64_t seed, std::string_view tag, uint64_t counter = 0) {
    uint64_t h = detail::fnv1a(tag);
    h = detail::mix64(h ^ detail::mix64(seed));
    h = detail::mix64(h ^ detail::mix64(counter ^ 0xa5a5a5a5a5a5a5a5ull));
    return Rng(h);
}

}  // namespace rxgs
