#include "dpf/param_vector.hpp"

#include <algorithm>
#include <stdexcept>
#include <string>

namespace dpf {

Layout::Layout(std::vector<Segment> segments) : segments_(std::move(segments)) {
  std::size_t cursor = 0;
  for (const auto& seg : segments_) {
    if (seg.offset != cursor) {
      throw std::invalid_argument("layout segments must be contiguous; gap or overlap at offset " +
                                  std::to_string(seg.offset));
    }
    if (seg.kind == SegmentKind::weight && seg.rows * seg.cols != seg.size) {
      throw std::invalid_argument("weight segment shape does not match its size");
    }
    cursor += seg.size;
    num_layers_ = std::max(num_layers_, seg.layer + 1);
  }
  prunable_.resize(cursor, 0);
  for (const auto& seg : segments_) {
    if (!seg.prunable) continue;
    std::fill_n(prunable_.begin() + static_cast<std::ptrdiff_t>(seg.offset), seg.size, 1);
    num_prunable_ += seg.size;
  }
}

LayoutPtr Layout::flat(std::size_t dim, bool prunable) {
  Segment seg;
  seg.offset = 0;
  seg.size = dim;
  seg.layer = 0;
  seg.kind = SegmentKind::flat;
  seg.rows = 1;
  seg.cols = dim;
  seg.prunable = prunable;
  return std::make_shared<const Layout>(std::vector<Segment>{seg});
}

bool Layout::operator==(const Layout& other) const {
  if (segments_.size() != other.segments_.size()) return false;
  for (std::size_t i = 0; i < segments_.size(); ++i) {
    const auto& a = segments_[i];
    const auto& b = other.segments_[i];
    if (a.offset != b.offset || a.size != b.size || a.layer != b.layer || a.kind != b.kind ||
        a.rows != b.rows || a.cols != b.cols || a.prunable != b.prunable) {
      return false;
    }
  }
  return true;
}

ParamVector::ParamVector(LayoutPtr layout_in, std::vector<double> values_in)
    : layout(std::move(layout_in)), values(std::move(values_in)) {
  if (!layout) throw std::invalid_argument("ParamVector requires a layout");
  if (values.size() != layout->dim()) {
    throw std::invalid_argument("ParamVector length " + std::to_string(values.size()) +
                                " does not match layout dim " + std::to_string(layout->dim()));
  }
}

ParamVector ParamVector::zeros(LayoutPtr layout_in) {
  const auto dim = layout_in->dim();
  return ParamVector(std::move(layout_in), std::vector<double>(dim, 0.0));
}

Mask::Mask(LayoutPtr layout, std::vector<std::uint8_t> bits)
    : layout_(std::move(layout)), bits_(std::move(bits)) {
  if (!layout_) throw std::invalid_argument("Mask requires a layout");
  if (bits_.size() != layout_->dim()) {
    throw std::invalid_argument("mask length " + std::to_string(bits_.size()) +
                                " does not match layout dim " + std::to_string(layout_->dim()));
  }
  for (std::size_t i = 0; i < bits_.size(); ++i) {
    if (bits_[i] > 1) throw std::invalid_argument("mask bits must be 0 or 1");
    if (bits_[i] == 0) {
      if (!layout_->prunable(i)) {
        throw std::invalid_argument("mask prunes non-prunable coordinate " + std::to_string(i));
      }
      ++num_pruned_;
    }
  }
}

Mask Mask::ones(LayoutPtr layout) {
  const auto dim = layout->dim();
  return Mask(std::move(layout), std::vector<std::uint8_t>(dim, 1));
}

double Mask::sparsity() const {
  const auto n = layout_ ? layout_->num_prunable() : 0;
  if (n == 0) return 0.0;
  return static_cast<double>(num_pruned_) / static_cast<double>(n);
}

Mask intersect(const Mask& a, const Mask& b) {
  if (a.size() != b.size()) throw std::invalid_argument("intersect: mask length mismatch");
  std::vector<std::uint8_t> bits(a.size());
  for (std::size_t i = 0; i < bits.size(); ++i) bits[i] = a.bits()[i] & b.bits()[i];
  return Mask(a.layout(), std::move(bits));
}

std::vector<std::uint8_t> pack_bits(std::span<const std::uint8_t> bits) {
  std::vector<std::uint8_t> packed((bits.size() + 7) / 8, 0);
  for (std::size_t i = 0; i < bits.size(); ++i) {
    if (bits[i]) packed[i / 8] |= static_cast<std::uint8_t>(1u << (i % 8));
  }
  return packed;
}

std::vector<std::uint8_t> unpack_bits(std::span<const std::uint8_t> packed, std::size_t count) {
  if (packed.size() * 8 < count) throw std::invalid_argument("unpack_bits: not enough bytes");
  std::vector<std::uint8_t> bits(count);
  for (std::size_t i = 0; i < count; ++i) bits[i] = (packed[i / 8] >> (i % 8)) & 1u;
  return bits;
}

}  // namespace dpf
