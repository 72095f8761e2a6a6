#pragma once

#include <cstdint>
#include <random>
#include <span>

namespace retrodiff {

using Rng = std::mt19937_64;

// Independent generator for (seed, stream, index). Used so per-sample work can
// run in any order and still draw the same numbers.
inline Rng make_rng(std::uint64_t seed, std::uint64_t stream = 0, std::uint64_t index = 0) {
  std::seed_seq seq{std::uint32_t(seed), std::uint32_t(seed >> 32), std::uint32_t(stream),
                    std::uint32_t(stream >> 32), std::uint32_t(index), std::uint32_t(index >> 32)};
  return Rng(seq);
}

template <typename T>
void fill_normal(Rng& rng, std::span<T> out, double stddev = 1.0) {
  std::normal_distribution<double> dist(0.0, stddev);
  for (auto& v : out) v = T(dist(rng));
}

// Stream ids keep unrelated consumers of one seed apart.
namespace streams {
inline constexpr std::uint64_t vocabulary = 1;
inline constexpr std::uint64_t caption = 2;
inline constexpr std::uint64_t render = 3;
inline constexpr std::uint64_t encoder = 4;
inline constexpr std::uint64_t init = 5;
inline constexpr std::uint64_t train = 6;
inline constexpr std::uint64_t sample = 7;
inline constexpr std::uint64_t split = 8;
inline constexpr std::uint64_t mismatch = 9;
}  // namespace streams

}  // namespace retrodiff
