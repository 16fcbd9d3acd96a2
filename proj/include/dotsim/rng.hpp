#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace dotsim {

using Rng = std::mt19937_64;

// Independent, reproducible generator for a (seed, stream...) tuple.
inline Rng make_rng(std::initializer_list<std::uint64_t> key) {
  std::seed_seq seq(key.begin(), key.end());
  return Rng(seq);
}

// Stream tags so that different consumers of the same seed never share draws.
namespace stream {
inline constexpr std::uint64_t kInit = 0x1001;
inline constexpr std::uint64_t kNegatives = 0x1002;
inline constexpr std::uint64_t kEvalNegatives = 0x1003;
inline constexpr std::uint64_t kSynthTables = 0x2001;
inline constexpr std::uint64_t kSynthPairs = 0x2002;
inline constexpr std::uint64_t kSynthNoise = 0x2003;
inline constexpr std::uint64_t kSynthFresh = 0x2004;
inline constexpr std::uint64_t kSynthTrain = 0x2005;
inline constexpr std::uint64_t kBench = 0x3001;
}  // namespace stream

}  // namespace dotsim
