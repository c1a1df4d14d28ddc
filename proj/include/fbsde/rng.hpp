#pragma once

#include <cmath>
#include <cstdint>

namespace fbsde {

/// Stream tags keep draws for different purposes statistically independent
/// even when they share (seed, b, n, i) coordinates.
enum class Stream : uint64_t {
    MainIncrement = 1,
    FineIncrement = 2,
    JumpCount     = 3,
    JumpSize      = 4,
    GridFirstStep = 5,
    ParamInit     = 6,
    EvalNoise     = 7,
    BiasLab       = 8,
    Reference     = 9,
    TrainIter     = 10,
};

/// Counter-based generator: every variate is a pure function of
/// (seed, stream, b, n, i, k), so any sub-array of a noise bundle can be
/// regenerated independently and in any order.
class CounterRng {
  public:
    CounterRng(uint64_t seed, Stream stream, uint64_t b = 0, uint64_t n = 0, uint64_t i = 0)
        : key_(mix(mix(mix(mix(seed ^ 0x9e3779b97f4a7c15ULL, static_cast<uint64_t>(stream)), b), n), i)),
          counter_(0) {}

    /// Next raw 64-bit word.
    uint64_t next_u64() { return mix(key_, counter_++); }

    /// Uniform in (0, 1): never returns 0, so log() is safe.
    double next_uniform() {
        const uint64_t u = next_u64() >> 11; // 53 bits
        return (static_cast<double>(u) + 0.5) * 0x1.0p-53;
    }

    /// Standard normal via Box-Muller; draws are not cached across calls so
    /// the stream stays a pure function of the counter.
    double next_normal() {
        const double u1 = next_uniform();
        const double u2 = next_uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
    }

    /// Poisson count by inversion of exponential gaps (mean is tiny in all
    /// uses here, so the loop terminates almost immediately).
    int next_poisson(double mean) {
        if (mean <= 0.0) return 0;
        const double limit = std::exp(-mean);
        double prod = 1.0;
        int k = 0;
        while (true) {
            prod *= next_uniform();
            if (prod <= limit) return k;
            ++k;
        }
    }

  private:
    // splitmix64-style avalanche of (state, word).
    static uint64_t mix(uint64_t h, uint64_t w) {
        uint64_t z = h + 0x9e3779b97f4a7c15ULL + w * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    uint64_t key_;
    uint64_t counter_;
};

} // namespace fbsde
