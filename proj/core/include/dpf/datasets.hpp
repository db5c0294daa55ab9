#pragma once

#include <cstdint>

#include "dpf/nn.hpp"

namespace dpf {

struct Split {
  Dataset train;
  Dataset test;
};

/// k Gaussian clusters in d dimensions. Class c is centred at e_c / sqrt(2), so
/// every pair of means is exactly 1 apart; requires 2 <= k <= d. Classes are
/// balanced to within one sample and split 80/20 per class.
Split make_blobs(std::size_t k, std::size_t d, std::size_t n, double noise, std::uint64_t seed);

/// k interleaved 2-D spiral arms with isotropic Gaussian jitter, split 80/20 per class.
Split make_spirals(std::size_t k, std::size_t n, double noise, std::uint64_t seed);

}  // namespace dpf
