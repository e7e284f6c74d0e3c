#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "trusttune/hash.hpp"

namespace trusttune {

// Deterministic RNG with fully specified output. mt19937_64 is pinned by the
// standard; the floating-point draws below avoid std::*_distribution, whose
// results are implementation-defined.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    // Uniform in [0, 1) with 53 random bits.
    double uniform01() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

    // Standard normal via Box-Muller with a cached spare.
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = uniform01();
        double u2 = uniform01();
        double r = std::sqrt(-2.0 * std::log1p(-u1));
        double theta = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(theta);
        has_spare_ = true;
        return r * std::cos(theta);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    // Uniform integer in [0, n), n > 0. Rejection keeps the draw unbiased.
    std::uint64_t uniform_index(std::uint64_t n) {
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        std::uint64_t x = next_u64();
        while (x >= limit) x = next_u64();
        return x % n;
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(uniform_index(i));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    std::mt19937_64 engine_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

// The four named per-run streams. Changing the fine-tuning method must never
// perturb the data-order stream; every consumer owns exactly one stream.
struct RngStreams {
    Rng init;
    Rng data;
    Rng noise;
    Rng probe;

    explicit RngStreams(std::uint64_t master_seed)
        : init(stream_seed(master_seed, "init")),
          data(stream_seed(master_seed, "data-order")),
          noise(stream_seed(master_seed, "noise")),
          probe(stream_seed(master_seed, "probe-init")) {}
};

}  // namespace trusttune
