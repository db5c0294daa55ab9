#include "dpf/idx.hpp"

#include <array>
#include <fstream>
#include <iterator>

#include "dpf/error.hpp"

namespace dpf::idx {
namespace {

std::vector<unsigned char> slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open IDX file " + path.string());
  return std::vector<unsigned char>(std::istreambuf_iterator<char>(in), {});
}

std::uint32_t read_be32(const std::vector<unsigned char>& bytes, std::size_t at,
                        const std::filesystem::path& path) {
  if (at + 4 > bytes.size()) throw FormatError("truncated IDX header in " + path.string());
  return (std::uint32_t{bytes[at]} << 24) | (std::uint32_t{bytes[at + 1]} << 16) |
         (std::uint32_t{bytes[at + 2]} << 8) | std::uint32_t{bytes[at + 3]};
}

}  // namespace

Images read_images(const std::filesystem::path& path) {
  const auto bytes = slurp(path);
  const auto magic = read_be32(bytes, 0, path);
  if (magic != kImageMagic) throw FormatError("bad IDX image magic in " + path.string());
  Images img;
  img.count = read_be32(bytes, 4, path);
  img.rows = read_be32(bytes, 8, path);
  img.cols = read_be32(bytes, 12, path);
  const std::size_t n = img.count * img.rows * img.cols;
  if (bytes.size() < 16 + n) throw FormatError("truncated IDX image payload in " + path.string());
  img.pixels.resize(n);
  for (std::size_t i = 0; i < n; ++i) img.pixels[i] = static_cast<double>(bytes[16 + i]) / 255.0;
  return img;
}

std::vector<int> read_labels(const std::filesystem::path& path) {
  const auto bytes = slurp(path);
  const auto magic = read_be32(bytes, 0, path);
  if (magic != kLabelMagic) throw FormatError("bad IDX label magic in " + path.string());
  const std::size_t n = read_be32(bytes, 4, path);
  if (bytes.size() < 8 + n) throw FormatError("truncated IDX label payload in " + path.string());
  std::vector<int> labels(n);
  for (std::size_t i = 0; i < n; ++i) labels[i] = bytes[8 + i];
  return labels;
}

Dataset load(const std::filesystem::path& images, const std::filesystem::path& labels) {
  auto img = read_images(images);
  auto lab = read_labels(labels);
  if (img.count != lab.size()) {
    throw FormatError("image/label count mismatch between " + images.string() + " and " +
                      labels.string());
  }
  return make_batch(img.rows * img.cols, std::move(img.pixels), std::move(lab));
}

}  // namespace dpf::idx
