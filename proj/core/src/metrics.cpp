#include "dpf/metrics.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>

#include <json.hpp>

#include "binary_io.hpp"

namespace dpf {
namespace {

void check_pair(const Mask& a, const Mask& b) {
  if (a.size() != b.size()) {
    throw std::invalid_argument("mask length mismatch (" + std::to_string(a.size()) + " vs " +
                                std::to_string(b.size()) + ")");
  }
}

std::string fmt17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

constexpr std::uint32_t kMaskLogVersion = 1;

}  // namespace

void MaskHistory::push(std::int64_t step, Mask mask) {
  if (!entries_.empty() && step <= entries_.back().step) {
    throw std::invalid_argument("mask history steps must be strictly increasing");
  }
  entries_.push_back({step, std::move(mask)});
  if (retain_ > 0 && entries_.size() > retain_) entries_.erase(entries_.begin());
}

double mask_iou(const Mask& a, const Mask& b) {
  check_pair(a, b);
  const auto& layout = *a.layout();
  std::size_t inter = 0;
  std::size_t uni = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (!layout.prunable(i)) continue;
    const bool ka = a.kept(i);
    const bool kb = b.kept(i);
    inter += (ka && kb) ? 1 : 0;
    uni += (ka || kb) ? 1 : 0;
  }
  if (uni == 0) return 1.0;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

std::size_t flip_count(const Mask& a, const Mask& b) {
  check_pair(a, b);
  const auto& layout = *a.layout();
  std::size_t flips = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (layout.prunable(i) && a.bits()[i] != b.bits()[i]) ++flips;
  }
  return flips;
}

double flip_ratio(const Mask& a, const Mask& b) {
  const auto flips = flip_count(a, b);
  const auto n = a.layout()->num_prunable();
  if (n == 0) return 0.0;
  return static_cast<double>(flips) / static_cast<double>(n);
}

std::vector<double> last_change_curve(const MaskHistory& history, std::int64_t epochs,
                                      std::int64_t steps_per_epoch) {
  if (history.empty()) throw std::invalid_argument("last_change_curve: empty mask history");
  if (epochs < 1 || steps_per_epoch < 1) {
    throw std::invalid_argument("last_change_curve: epochs and steps_per_epoch must be positive");
  }
  const auto entries = history.entries();
  const auto& layout = *entries.front().mask.layout();
  const std::size_t dim = layout.dim();

  // Epoch of the latest event at which each coordinate changed; -1 if never.
  std::vector<std::int64_t> last_change(dim, -1);
  for (std::size_t k = 1; k < entries.size(); ++k) {
    const auto prev = entries[k - 1].mask.bits();
    const auto cur = entries[k].mask.bits();
    const std::int64_t epoch = entries[k].step / steps_per_epoch;
    for (std::size_t i = 0; i < dim; ++i) {
      if (prev[i] != cur[i]) last_change[i] = epoch;
    }
  }

  std::vector<std::int64_t> count_at(static_cast<std::size_t>(epochs) + 1, 0);
  for (std::size_t i = 0; i < dim; ++i) {
    if (!layout.prunable(i) || last_change[i] < 0) continue;
    // Changed after epoch e for every e < last_change[i].
    const auto upto = std::min<std::int64_t>(last_change[i], epochs - 1);
    ++count_at[static_cast<std::size_t>(upto)];
  }
  std::vector<double> curve(static_cast<std::size_t>(epochs), 0.0);
  const double n = static_cast<double>(std::max<std::size_t>(layout.num_prunable(), 1));
  std::int64_t suffix = 0;
  for (std::int64_t e = epochs - 1; e >= 0; --e) {
    suffix += count_at[static_cast<std::size_t>(e + 1)];
    curve[static_cast<std::size_t>(e)] = static_cast<double>(suffix) / n;
  }
  return curve;
}

void write_records(std::ostream& out, std::span<const StepRecord> records, RecordFormat format) {
  if (format == RecordFormat::csv) {
    out << kCsvHeader << '\n';
    for (const auto& r : records) {
      out << r.step << ',' << r.epoch << ',' << fmt17(r.lr) << ',' << fmt17(r.train_loss) << ','
          << fmt17(r.train_acc) << ',' << fmt17(r.test_loss) << ',' << fmt17(r.test_acc) << ','
          << fmt17(r.sparsity_target) << ',' << fmt17(r.sparsity_achieved) << ','
          << fmt17(r.delta) << ',' << r.flips << ',' << fmt17(r.iou) << '\n';
    }
    return;
  }
  auto arr = nlohmann::json::array();
  for (const auto& r : records) {
    arr.push_back({{"step", r.step},
                   {"epoch", r.epoch},
                   {"lr", r.lr},
                   {"train_loss", r.train_loss},
                   {"train_acc", r.train_acc},
                   {"test_loss", r.test_loss},
                   {"test_acc", r.test_acc},
                   {"sparsity_target", r.sparsity_target},
                   {"sparsity_achieved", r.sparsity_achieved},
                   {"delta", r.delta},
                   {"flips", r.flips},
                   {"iou", r.iou}});
  }
  out << arr.dump(2) << '\n';
}

void emit(std::span<const StepRecord> records, const std::filesystem::path& path,
          RecordFormat format) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  write_records(out, records, format);
  out.flush();
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

void write_mask_history(const MaskHistory& history, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  const auto entries = history.entries();
  const std::uint64_t dim = entries.empty() ? 0 : entries.front().mask.size();
  binary::put_magic(out, "DPFM");
  binary::put<std::uint32_t>(out, kMaskLogVersion);
  binary::put<std::uint64_t>(out, dim);
  binary::put<std::uint64_t>(out, entries.size());
  for (const auto& e : entries) {
    binary::put<std::int64_t>(out, e.step);
    binary::put_bytes(out, pack_bits(e.mask.bits()));
  }
  out.flush();
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

MaskHistory read_mask_history(const std::filesystem::path& path, const LayoutPtr& layout) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open mask log " + path.string());
  const std::string what = "mask log " + path.string();
  binary::expect_magic(in, "DPFM", what);
  if (binary::get<std::uint32_t>(in, what) != kMaskLogVersion) {
    throw FormatError("unsupported version in " + what);
  }
  const auto dim = binary::get<std::uint64_t>(in, what);
  const auto count = binary::get<std::uint64_t>(in, what);
  if (count > 0 && dim != layout->dim()) throw FormatError("layout mismatch in " + what);
  MaskHistory history;
  for (std::uint64_t k = 0; k < count; ++k) {
    const auto step = binary::get<std::int64_t>(in, what);
    const auto packed = binary::get_bytes(in, (dim + 7) / 8, what);
    history.push(step, Mask(layout, unpack_bits(packed, dim)));
  }
  return history;
}

}  // namespace dpf
