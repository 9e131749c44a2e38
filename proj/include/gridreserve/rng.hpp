#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "gridreserve/common.hpp"

namespace gridreserve {

/// Counter-based pseudo random generator built on splitmix64.
///
/// Draws depend only on (key, counter), so independent streams can be derived
/// for parallel scenario evaluation and replayed bit-exactly regardless of
/// execution order or platform. All distribution transforms are implemented
/// in-house (Box-Muller, inverse CDF) rather than via std::<distribution>,
/// whose output is not pinned by the standard.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : key_(mix(seed)), counter_(0) {}

    /// Independent stream for scenario `index` under a run-level seed.
    /// Scenario i uses seed XOR-folded with i so the draw sequence of one
    /// scenario never depends on how many others ran before it.
    static Rng stream(std::uint64_t seed, std::uint64_t index) {
        Rng r(seed ^ (0x9e3779b97f4a7c15ULL * (index + 1)));
        return r;
    }

    std::uint64_t next_u64() { return mix(key_ + 0x9e3779b97f4a7c15ULL * (++counter_)); }

    /// Uniform in [0, 1) with 53 significant bits.
    double uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

    bool bernoulli(double p) { return uniform01() < p; }

    /// Standard normal via Box-Muller; the spare deviate is cached.
    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = uniform01();
        double u2 = uniform01();
        // u1 = 0 would take log(0); nudge to the smallest representable draw.
        if (u1 <= 0.0) u1 = 0x1.0p-53;
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(a);
        have_spare_ = true;
        return r * std::cos(a);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    /// Exponential with given rate (mean 1/rate).
    double exponential(double rate) {
        if (rate <= 0.0) throw DomainError("exponential: rate must be positive");
        double u = uniform01();
        if (u >= 1.0) u = 1.0 - 0x1.0p-53;
        return -std::log1p(-u) / rate;
    }

private:
    static std::uint64_t mix(std::uint64_t z) {
        z += 0x9e3779b97f4a7c15ULL;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    std::uint64_t key_;
    std::uint64_t counter_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

} // namespace gridreserve
