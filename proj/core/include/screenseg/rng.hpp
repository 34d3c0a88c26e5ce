#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace screenseg {

// Seeded random source. All sampling goes through explicit methods built on
// the raw mt19937_64 stream, so sequences are identical across platforms and
// standard library versions (std::*_distribution is implementation-defined).
class Rng {
public:
    explicit Rng(uint64_t seed) : engine_(seed), seed_(seed) {}

    // Uniform in [0, 1) with 53-bit resolution.
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [0, n), rejection sampled so draws are exact.
    uint64_t below(uint64_t n) {
        if (n <= 1) return 0;
        const uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        uint64_t x;
        do {
            x = engine_();
        } while (x >= limit);
        return x % n;
    }

    // Signed integer in [lo, hi] inclusive.
    int64_t range(int64_t lo, int64_t hi) {
        return lo + static_cast<int64_t>(below(static_cast<uint64_t>(hi - lo + 1)));
    }

    bool bernoulli(double p) { return uniform() < p; }

    // Standard normal via Box-Muller (cached spare for the pair).
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = 0.0;
        while (u1 == 0.0) u1 = uniform();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 2.0 * M_PI * u2;
        spare_ = r * std::sin(theta);
        has_spare_ = true;
        return r * std::cos(theta);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    // Derive an independent child stream from the construction seed (does not
    // consume engine state). Mixing follows splitmix64 so children are
    // decorrelated even for adjacent stream ids.
    Rng fork(uint64_t stream) const {
        uint64_t z = seed_ + 0x9E3779B97F4A7C15ULL * (stream + 1);
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return Rng(z ^ (z >> 31));
    }

    // Fisher-Yates shuffle driven by this stream.
    template <typename Vec>
    void shuffle(Vec& v) {
        for (size_t i = v.size(); i > 1; --i) {
            size_t j = static_cast<size_t>(below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    std::mt19937_64 engine_;
    uint64_t seed_ = 0;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

}  // namespace screenseg
