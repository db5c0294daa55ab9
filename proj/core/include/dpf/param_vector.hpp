#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <vector>

namespace dpf {

enum class SegmentKind : std::uint8_t { weight, bias, flat };

/// Contiguous run of coordinates belonging to one tensor of one layer.
/// Weight segments are `rows x cols` row-major with one row per output neuron.
struct Segment {
  std::size_t offset = 0;
  std::size_t size = 0;
  std::size_t layer = 0;
  SegmentKind kind = SegmentKind::flat;
  std::size_t rows = 0;
  std::size_t cols = 0;
  bool prunable = true;
};

/// Partition of a flat parameter vector into layer tensors, with prunability
/// flags. Segments must be an exact, ordered, disjoint cover of [0, dim).
class Layout {
 public:
  Layout() = default;
  explicit Layout(std::vector<Segment> segments);

  /// Single segment covering `dim` coordinates, all sharing `prunable`.
  static std::shared_ptr<const Layout> flat(std::size_t dim, bool prunable = true);

  std::size_t dim() const { return prunable_.size(); }
  std::size_t num_prunable() const { return num_prunable_; }
  std::size_t num_layers() const { return num_layers_; }
  std::span<const Segment> segments() const { return segments_; }
  bool prunable(std::size_t i) const { return prunable_[i] != 0; }
  std::span<const std::uint8_t> prunable_flags() const { return prunable_; }

  bool operator==(const Layout& other) const;

 private:
  std::vector<Segment> segments_;
  std::vector<std::uint8_t> prunable_;
  std::size_t num_prunable_ = 0;
  std::size_t num_layers_ = 0;
};

using LayoutPtr = std::shared_ptr<const Layout>;

/// Flat f64 weight vector with its layer partition.
struct ParamVector {
  LayoutPtr layout;
  std::vector<double> values;

  ParamVector() = default;
  ParamVector(LayoutPtr layout_in, std::vector<double> values_in);
  static ParamVector zeros(LayoutPtr layout_in);

  std::size_t size() const { return values.size(); }
  double& operator[](std::size_t i) { return values[i]; }
  double operator[](std::size_t i) const { return values[i]; }
  std::span<double> span() { return values; }
  std::span<const double> span() const { return values; }
};

/// Binary keep-mask aligned with a layout. Non-prunable coordinates are always 1.
class Mask {
 public:
  Mask() = default;
  /// Throws std::invalid_argument on length mismatch, non-binary entries, or a
  /// zero bit on a non-prunable coordinate.
  Mask(LayoutPtr layout, std::vector<std::uint8_t> bits);

  static Mask ones(LayoutPtr layout);

  const LayoutPtr& layout() const { return layout_; }
  std::span<const std::uint8_t> bits() const { return bits_; }
  std::size_t size() const { return bits_.size(); }
  bool kept(std::size_t i) const { return bits_[i] != 0; }
  std::size_t num_pruned() const { return num_pruned_; }
  std::size_t num_kept() const { return bits_.size() - num_pruned_; }

  /// Fraction of prunable coordinates with bit 0 (0 when nothing is prunable).
  double sparsity() const;

  bool operator==(const Mask& other) const { return bits_ == other.bits_; }

 private:
  LayoutPtr layout_;
  std::vector<std::uint8_t> bits_;
  std::size_t num_pruned_ = 0;
};

/// Elementwise AND of two masks over the same layout.
Mask intersect(const Mask& a, const Mask& b);

/// LSB-first bit packing used in checkpoints and mask logs.
std::vector<std::uint8_t> pack_bits(std::span<const std::uint8_t> bits);
std::vector<std::uint8_t> unpack_bits(std::span<const std::uint8_t> packed, std::size_t count);

}  // namespace dpf
