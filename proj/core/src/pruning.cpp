#include "dpf/pruning.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

#include "dpf/log.hpp"

namespace dpf {
namespace {

void check_sparsity(double sparsity) {
  if (!(sparsity >= 0.0 && sparsity <= 1.0)) {
    throw std::invalid_argument("target sparsity must lie in [0, 1], got " +
                                std::to_string(sparsity));
  }
}

std::size_t prune_count(double sparsity, std::size_t n) {
  const auto k = static_cast<std::size_t>(std::llround(sparsity * static_cast<double>(n)));
  return std::min(k, n);
}

// Zeroes the k lowest-scoring entries of `candidates` (ties: lower index first).
void prune_lowest(std::span<const double> scores, std::vector<std::size_t>& candidates,
                  std::size_t k, std::vector<std::uint8_t>& bits) {
  if (k == 0) return;
  auto less = [&](std::size_t a, std::size_t b) {
    return scores[a] < scores[b] || (scores[a] == scores[b] && a < b);
  };
  if (k < candidates.size()) {
    std::nth_element(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(k - 1),
                     candidates.end(), less);
  }
  for (std::size_t j = 0; j < k; ++j) bits[candidates[j]] = 0;
}

}  // namespace

void SparsitySchedule::validate() const {
  if (!(initial >= 0.0 && initial <= final && final <= 1.0)) {
    throw std::invalid_argument("sparsity schedule requires 0 <= initial <= final <= 1");
  }
  if (ramp_steps < 1) throw std::invalid_argument("sparsity schedule ramp must be >= 1 step");
  if (update_every < 1) throw std::invalid_argument("sparsity schedule update_every must be >= 1");
  if (start_step < 0) throw std::invalid_argument("sparsity schedule start must be >= 0");
}

SparsitySchedule SparsitySchedule::constant(double sparsity) {
  SparsitySchedule s;
  s.initial = sparsity;
  s.final = sparsity;
  return s;
}

double sparsity_at(const SparsitySchedule& schedule, std::int64_t step) {
  if (step < schedule.start_step) return schedule.initial;
  const std::int64_t elapsed = step - schedule.start_step;
  if (elapsed >= schedule.ramp_steps) return schedule.final;
  const std::int64_t quantized = (elapsed / schedule.update_every) * schedule.update_every;
  const double remaining =
      1.0 - static_cast<double>(quantized) / static_cast<double>(schedule.ramp_steps);
  const double s =
      schedule.final + (schedule.initial - schedule.final) * remaining * remaining * remaining;
  return std::clamp(s, schedule.initial, schedule.final);
}

Mask mask_from_scores(std::span<const double> scores, const LayoutPtr& layout, double sparsity,
                      PruneScope scope) {
  check_sparsity(sparsity);
  if (scores.size() != layout->dim()) throw std::invalid_argument("score length mismatch");
  std::vector<std::uint8_t> bits(layout->dim(), 1);
  std::vector<std::size_t> candidates;

  if (scope == PruneScope::global) {
    candidates.reserve(layout->num_prunable());
    for (std::size_t i = 0; i < layout->dim(); ++i) {
      if (layout->prunable(i)) candidates.push_back(i);
    }
    prune_lowest(scores, candidates, prune_count(sparsity, candidates.size()), bits);
  } else {
    for (std::size_t layer = 0; layer < layout->num_layers(); ++layer) {
      candidates.clear();
      for (const auto& seg : layout->segments()) {
        if (seg.layer != layer || !seg.prunable) continue;
        for (std::size_t i = 0; i < seg.size; ++i) candidates.push_back(seg.offset + i);
      }
      std::sort(candidates.begin(), candidates.end());
      prune_lowest(scores, candidates, prune_count(sparsity, candidates.size()), bits);
    }
  }
  return Mask(layout, std::move(bits));
}

Mask magnitude_mask(const ParamVector& params, double sparsity, PruneScope scope) {
  std::vector<double> scores(params.size());
  std::transform(params.values.begin(), params.values.end(), scores.begin(),
                 [](double v) { return std::abs(v); });
  return mask_from_scores(scores, params.layout, sparsity, scope);
}

Mask snip_mask(const MLPModel& model, const ParamVector& params, const Batch& batch,
               double sparsity) {
  check_sparsity(sparsity);
  auto fwd = forward(model, params, batch);
  const auto grad = backward(model, params, batch, fwd.cache);
  std::vector<double> saliency(params.size());
  bool any = false;
  for (std::size_t i = 0; i < saliency.size(); ++i) {
    saliency[i] = std::abs(params[i] * grad[i]);
    if (params.layout->prunable(i) && saliency[i] != 0.0) any = true;
  }
  if (!any) {
    log_warning("snip_mask: all saliencies are zero, falling back to magnitude pruning");
    return magnitude_mask(params, sparsity, PruneScope::global);
  }
  return mask_from_scores(saliency, params.layout, sparsity, PruneScope::global);
}

Mask row_group_l2(const ParamVector& params, const MLPModel& model, double sparsity) {
  check_sparsity(sparsity);
  const auto& layout = params.layout;
  if (layout->dim() != model.params.size()) {
    throw std::invalid_argument("row_group_l2: params do not match model");
  }
  struct Group {
    double norm;
    std::size_t layer;
    std::size_t row;
    std::size_t offset;
    std::size_t size;
  };
  std::vector<Group> groups;
  for (const auto& seg : layout->segments()) {
    if (seg.kind != SegmentKind::weight || !seg.prunable) continue;
    for (std::size_t r = 0; r < seg.rows; ++r) {
      const std::size_t off = seg.offset + r * seg.cols;
      double sq = 0.0;
      for (std::size_t c = 0; c < seg.cols; ++c) sq += params[off + c] * params[off + c];
      groups.push_back({std::sqrt(sq), seg.layer, r, off, seg.cols});
    }
  }
  if (groups.empty()) throw std::invalid_argument("row_group_l2: model has no prunable weight rows");

  std::sort(groups.begin(), groups.end(), [](const Group& a, const Group& b) {
    if (a.norm != b.norm) return a.norm < b.norm;
    if (a.layer != b.layer) return a.layer < b.layer;
    return a.row < b.row;
  });

  std::vector<std::uint8_t> bits(layout->dim(), 1);
  const double target = sparsity * static_cast<double>(layout->num_prunable());
  std::size_t pruned = 0;
  for (const auto& g : groups) {
    // Small slack so that exact targets such as 0.5 * 8 are not overshot by rounding.
    if (static_cast<double>(pruned) >= target - 1e-9) break;
    std::fill_n(bits.begin() + static_cast<std::ptrdiff_t>(g.offset), g.size, 0);
    pruned += g.size;
  }
  return Mask(layout, std::move(bits));
}

ParamVector apply_mask(const ParamVector& params, const Mask& mask) {
  if (params.size() != mask.size()) {
    throw std::invalid_argument("apply_mask: length mismatch (" + std::to_string(params.size()) +
                                " vs " + std::to_string(mask.size()) + ")");
  }
  ParamVector out = params;
  const auto bits = mask.bits();
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (bits[i] == 0) out[i] = 0.0;
  }
  return out;
}

double delta_of(std::span<const double> x, std::span<const double> x_hat) {
  if (x.size() != x_hat.size()) throw std::invalid_argument("delta_of: length mismatch");
  double num = 0.0;
  double den = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double diff = x[i] - x_hat[i];
    num += diff * diff;
    den += x[i] * x[i];
  }
  if (den == 0.0) {
    log(LogLevel::debug, "delta_of: zero reference vector, returning 0");
    return 0.0;
  }
  return num / den;
}

ParamVector scaled_sign(const ParamVector& params) {
  const auto& layout = *params.layout;
  double l1 = 0.0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (layout.prunable(i)) l1 += std::abs(params[i]);
  }
  ParamVector out = params;
  if (layout.num_prunable() == 0) return out;
  const double scale = l1 / static_cast<double>(layout.num_prunable());
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (layout.prunable(i)) out[i] = params[i] < 0.0 ? -scale : scale;
  }
  return out;
}

Compressed compress(const Compressor& compressor, const ParamVector& params, const MLPModel* model,
                    const Batch* batch, double sparsity) {
  auto with_mask = [&](Mask mask) {
    auto masked = apply_mask(params, mask);
    return Compressed{std::move(masked), std::move(mask)};
  };
  return std::visit(
      [&](const auto& c) -> Compressed {
        using T = std::decay_t<decltype(c)>;
        if constexpr (std::is_same_v<T, MagnitudeCompressor>) {
          return with_mask(magnitude_mask(params, sparsity, c.scope));
        } else if constexpr (std::is_same_v<T, SnipCompressor>) {
          if (model == nullptr || batch == nullptr) {
            throw std::invalid_argument("snip compressor requires a model and a batch");
          }
          return with_mask(snip_mask(*model, params, *batch, sparsity));
        } else if constexpr (std::is_same_v<T, RowGroupCompressor>) {
          if (model == nullptr) throw std::invalid_argument("row-group compressor requires a model");
          return with_mask(row_group_l2(params, *model, sparsity));
        } else {
          return Compressed{scaled_sign(params), std::nullopt};
        }
      },
      compressor);
}

}  // namespace dpf
