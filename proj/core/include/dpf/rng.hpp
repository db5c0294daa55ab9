#pragma once

#include <cstdint>
#include <random>

namespace dpf {

using Rng = std::mt19937_64;

/// SplitMix64 finalizer; used to derive independent stream seeds.
constexpr std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Seed for sub-stream `index` of purpose `stream` under a run seed.
constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream,
                                    std::uint64_t index = 0) {
  return mix64(mix64(seed ^ mix64(stream)) + index);
}

// Named stream ids so distinct consumers of one run seed never collide.
namespace stream {
inline constexpr std::uint64_t init = 1;
inline constexpr std::uint64_t shuffle = 2;
inline constexpr std::uint64_t finetune_shuffle = 3;
inline constexpr std::uint64_t data = 4;
inline constexpr std::uint64_t noise = 5;
inline constexpr std::uint64_t sampler = 6;
inline constexpr std::uint64_t problem = 7;
inline constexpr std::uint64_t start = 8;
inline constexpr std::uint64_t snip = 9;
}  // namespace stream

inline Rng make_rng(std::uint64_t seed, std::uint64_t stream_id, std::uint64_t index = 0) {
  return Rng(derive_seed(seed, stream_id, index));
}

}  // namespace dpf
