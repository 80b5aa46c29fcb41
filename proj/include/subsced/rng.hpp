#pragma once

#include <cstdint>
#include <random>

namespace subsced {

// Independent generator for replicate `index` of an experiment seeded with
// `master_seed`. seed_seq mixes all four 32-bit words, so neighbouring indices
// give unrelated Mersenne Twister states.
inline std::mt19937_64 rng_stream(std::uint64_t master_seed, std::uint64_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(master_seed), static_cast<std::uint32_t>(master_seed >> 32),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32)};
  return std::mt19937_64(seq);
}

}  // namespace subsced
