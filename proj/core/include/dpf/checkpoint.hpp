#pragma once

// Binary checkpoint, little-endian:
//   "DPFC", u32 version, u64 layer count, per layer (u64 in, u64 out,
//   u8 activation, u8 prunable weights, u8 prunable bias), u64 dim,
//   dim f64 dense weights, ceil(dim/8) packed mask bytes (LSB first),
//   dim f64 momentum, i64 step, u64 rng seed, u64 rng epoch.
//
// The data-order generator is a pure function of (seed, epoch), so those two
// numbers are the complete rng state.

#include <cstdint>
#include <filesystem>
#include <vector>

#include "dpf/nn.hpp"
#include "dpf/trainers.hpp"

namespace dpf {

struct Checkpoint {
  std::vector<LayerSpec> layers;
  std::vector<double> dense;
  std::vector<std::uint8_t> mask;  // one byte per coordinate in memory
  std::vector<double> momentum;
  std::int64_t step = 0;
  std::uint64_t rng_seed = 0;
  std::uint64_t rng_epoch = 0;  // next epoch to run

  bool operator==(const Checkpoint&) const = default;
};

Checkpoint make_checkpoint(const std::vector<LayerSpec>& layers, const TrainState& state,
                           std::uint64_t seed, std::uint64_t next_epoch);

/// Rebuilds the training state on the layout implied by the stored layers.
TrainState restore_state(const Checkpoint& ckpt);

/// Writes atomically (temporary file, then rename). Throws std::runtime_error on I/O failure.
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);

/// Throws FormatError on a missing file, bad magic, version or truncated data.
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace dpf
