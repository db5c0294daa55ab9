#include "dpf/checkpoint.hpp"

#include <fstream>
#include <stdexcept>

#include "binary_io.hpp"
#include "dpf/error.hpp"

namespace dpf {
namespace {

constexpr std::uint32_t kVersion = 1;
constexpr std::uint64_t kMaxLayers = 1u << 16;

}  // namespace

Checkpoint make_checkpoint(const std::vector<LayerSpec>& layers, const TrainState& state,
                           std::uint64_t seed, std::uint64_t next_epoch) {
  Checkpoint c;
  c.layers = layers;
  c.dense = state.x.values;
  c.mask.assign(state.mask.bits().begin(), state.mask.bits().end());
  c.momentum = state.v.values;
  c.step = state.t;
  c.rng_seed = seed;
  c.rng_epoch = next_epoch;
  return c;
}

TrainState restore_state(const Checkpoint& ckpt) {
  const auto layout = make_layout(ckpt.layers);
  if (ckpt.dense.size() != layout->dim() || ckpt.momentum.size() != layout->dim() ||
      ckpt.mask.size() != layout->dim()) {
    throw FormatError("checkpoint vectors do not match its layer specs");
  }
  Mask mask;
  try {
    mask = Mask(layout, ckpt.mask);
  } catch (const std::invalid_argument& e) {
    throw FormatError(std::string("checkpoint mask invalid: ") + e.what());
  }
  auto state = TrainState::start(ParamVector(layout, ckpt.dense), std::move(mask));
  state.v = ParamVector(layout, ckpt.momentum);
  state.t = ckpt.step;
  return state;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open " + tmp.string() + " for writing");
    binary::put_magic(out, "DPFC");
    binary::put<std::uint32_t>(out, kVersion);
    binary::put<std::uint64_t>(out, ckpt.layers.size());
    for (const auto& l : ckpt.layers) {
      binary::put<std::uint64_t>(out, l.in_dim);
      binary::put<std::uint64_t>(out, l.out_dim);
      binary::put<std::uint8_t>(out, static_cast<std::uint8_t>(l.activation));
      binary::put<std::uint8_t>(out, l.prunable_weights ? 1 : 0);
      binary::put<std::uint8_t>(out, l.prunable_bias ? 1 : 0);
    }
    binary::put<std::uint64_t>(out, ckpt.dense.size());
    binary::put_doubles(out, ckpt.dense);
    binary::put_bytes(out, pack_bits(ckpt.mask));
    binary::put_doubles(out, ckpt.momentum);
    binary::put<std::int64_t>(out, ckpt.step);
    binary::put<std::uint64_t>(out, ckpt.rng_seed);
    binary::put<std::uint64_t>(out, ckpt.rng_epoch);
    out.flush();
    if (!out) throw std::runtime_error("failed writing " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open checkpoint " + path.string());
  const std::string what = "checkpoint " + path.string();
  binary::expect_magic(in, "DPFC", what);
  if (binary::get<std::uint32_t>(in, what) != kVersion) {
    throw FormatError("unsupported version in " + what);
  }
  Checkpoint c;
  const auto n_layers = binary::get<std::uint64_t>(in, what);
  if (n_layers == 0 || n_layers > kMaxLayers) throw FormatError("bad layer count in " + what);
  for (std::uint64_t i = 0; i < n_layers; ++i) {
    LayerSpec l;
    l.in_dim = binary::get<std::uint64_t>(in, what);
    l.out_dim = binary::get<std::uint64_t>(in, what);
    const auto act = binary::get<std::uint8_t>(in, what);
    if (act > 1) throw FormatError("bad activation in " + what);
    l.activation = static_cast<Activation>(act);
    l.prunable_weights = binary::get<std::uint8_t>(in, what) != 0;
    l.prunable_bias = binary::get<std::uint8_t>(in, what) != 0;
    c.layers.push_back(l);
  }
  std::uint64_t expected = 0;
  for (const auto& l : c.layers) {
    if (l.in_dim == 0 || l.out_dim == 0) throw FormatError("zero layer dimension in " + what);
    expected += l.in_dim * l.out_dim + l.out_dim;
  }
  const auto dim = binary::get<std::uint64_t>(in, what);
  if (dim != expected) throw FormatError("parameter count does not match layers in " + what);
  c.dense = binary::get_doubles(in, dim, what);
  c.mask = unpack_bits(binary::get_bytes(in, (dim + 7) / 8, what), dim);
  c.momentum = binary::get_doubles(in, dim, what);
  c.step = binary::get<std::int64_t>(in, what);
  c.rng_seed = binary::get<std::uint64_t>(in, what);
  c.rng_epoch = binary::get<std::uint64_t>(in, what);
  return c;
}

}  // namespace dpf
