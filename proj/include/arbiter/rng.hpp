#pragma once

#include <cstdint>
#include <random>

namespace arbiter {

using Rng = std::mt19937_64;

/// Named sub-streams of one run seed. Each consumer draws from its own stream so that
/// swapping the policy never perturbs the data sequence.
enum class Stream : std::uint64_t { environment = 0, policy = 1, shuffle = 2, init = 3, service = 4 };

inline Rng make_rng(std::uint64_t seed, Stream stream) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(stream)};
    return Rng(seq);
}

}  // namespace arbiter
