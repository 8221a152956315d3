// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstdint>

namespace laprox {

/**
 * @brief Deterministic pseudo-random generator: xoshiro256** seeded via splitmix64.
 *
 * The same seed produces a bit-identical value stream on every platform, which is what
 * makes every experiment in this project reproducible byte-for-byte. Gaussian variates
 * use the Box-Muller transform (with a cached spare) rather than std::normal_distribution,
 * whose output is implementation-defined.
 */
class Rng {
public:
    explicit Rng(std::uint64_t seed);

    /// Next raw 64-bit value of the xoshiro256** stream.
    std::uint64_t next_u64();

    /// Uniform double in [0, 1) with 53-bit resolution.
    double uniform();

    /// Uniform double in [lo, hi).
    double uniform(double lo, double hi);

    /// Uniform integer in [0, n). Uses rejection sampling, so the stream advances a
    /// variable number of steps; only sequence determinism is guaranteed.
    std::uint64_t uniform_index(std::uint64_t n);

    /// Standard normal variate (Box-Muller).
    double normal();

    /// Mixes a base seed with a stream id into an independent-looking seed, so that
    /// parallel trials can each own a generator without sharing state.
    static std::uint64_t derive(std::uint64_t base, std::uint64_t stream);

private:
    std::array<std::uint64_t, 4> state_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

}  // namespace laprox
