#include "dpf/datasets.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

#include "dpf/rng.hpp"

namespace dpf {
namespace {

struct Sample {
  std::vector<double> features;
  int label;
};

// Per class, the first 80% (rounded) of its samples go to train.
Split stratified(const std::vector<Sample>& samples, std::size_t k, std::size_t cols) {
  std::vector<std::size_t> per_class(k, 0);
  for (const auto& s : samples) ++per_class[static_cast<std::size_t>(s.label)];
  std::vector<std::size_t> seen(k, 0);
  std::vector<double> tr_x, te_x;
  std::vector<int> tr_y, te_y;
  for (const auto& s : samples) {
    const auto c = static_cast<std::size_t>(s.label);
    const std::size_t n_train = (per_class[c] * 8 + 5) / 10;
    if (seen[c]++ < n_train) {
      tr_x.insert(tr_x.end(), s.features.begin(), s.features.end());
      tr_y.push_back(s.label);
    } else {
      te_x.insert(te_x.end(), s.features.begin(), s.features.end());
      te_y.push_back(s.label);
    }
  }
  return {make_batch(cols, std::move(tr_x), std::move(tr_y)),
          make_batch(cols, std::move(te_x), std::move(te_y))};
}

}  // namespace

Split make_blobs(std::size_t k, std::size_t d, std::size_t n, double noise, std::uint64_t seed) {
  if (k < 2) throw std::invalid_argument("make_blobs: need at least 2 classes");
  if (d < k) throw std::invalid_argument("make_blobs: dim must be at least the number of classes");
  if (n < k) throw std::invalid_argument("make_blobs: fewer samples than classes");
  if (!(noise >= 0.0)) throw std::invalid_argument("make_blobs: noise must be non-negative");
  auto rng = make_rng(seed, stream::data);
  std::normal_distribution<double> normal(0.0, 1.0);
  const double centre = 1.0 / std::numbers::sqrt2;
  std::vector<Sample> samples;
  samples.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto c = i % k;
    Sample s{std::vector<double>(d), static_cast<int>(c)};
    for (std::size_t j = 0; j < d; ++j) {
      s.features[j] = (j == c ? centre : 0.0) + noise * normal(rng);
    }
    samples.push_back(std::move(s));
  }
  return stratified(samples, k, d);
}

Split make_spirals(std::size_t k, std::size_t n, double noise, std::uint64_t seed) {
  if (k < 2) throw std::invalid_argument("make_spirals: need at least 2 classes");
  if (n < k) throw std::invalid_argument("make_spirals: fewer samples than classes");
  if (!(noise >= 0.0)) throw std::invalid_argument("make_spirals: noise must be non-negative");
  auto rng = make_rng(seed, stream::data);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::vector<Sample> samples;
  samples.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto c = i % k;
    const double r = unif(rng);
    const double theta = 4.0 * r + 2.0 * std::numbers::pi * static_cast<double>(c) / static_cast<double>(k);
    Sample s{{r * std::cos(theta) + noise * normal(rng), r * std::sin(theta) + noise * normal(rng)},
             static_cast<int>(c)};
    samples.push_back(std::move(s));
  }
  return stratified(samples, k, 2);
}

}  // namespace dpf
