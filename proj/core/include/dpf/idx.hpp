#pragma once

#include <cstddef>
#include <filesystem>
#include <vector>

#include "dpf/nn.hpp"

namespace dpf::idx {

inline constexpr std::uint32_t kImageMagic = 0x00000803;
inline constexpr std::uint32_t kLabelMagic = 0x00000801;

struct Images {
  std::size_t count = 0;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> pixels;  // count * rows * cols, scaled to [0, 1]
};

/// Reads a big-endian IDX3 u8 image file. Throws FormatError naming the path.
Images read_images(const std::filesystem::path& path);

/// Reads a big-endian IDX1 u8 label file. Throws FormatError naming the path.
std::vector<int> read_labels(const std::filesystem::path& path);

/// Images flattened to rows of `rows * cols` features, paired with labels.
Dataset load(const std::filesystem::path& images, const std::filesystem::path& labels);

}  // namespace dpf::idx
