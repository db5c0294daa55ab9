#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <variant>

#include "dpf/nn.hpp"
#include "dpf/param_vector.hpp"

namespace dpf {

/// Cubic gradual-pruning ramp in optimizer steps:
///   s_t = s_f + (s_i - s_f) * (1 - (t - t0) / ramp)^3   for t0 <= t < t0 + ramp,
/// held at s_i before the ramp and at s_f after it. Inside the ramp, t is
/// floored to a multiple of `update_every` after t0 so the target moves in
/// discrete increments.
struct SparsitySchedule {
  double initial = 0.0;
  double final = 0.0;
  std::int64_t start_step = 0;
  std::int64_t ramp_steps = 1;
  std::int64_t update_every = 1;

  void validate() const;

  static SparsitySchedule constant(double sparsity);
};

double sparsity_at(const SparsitySchedule& schedule, std::int64_t step);

enum class PruneScope : std::uint8_t { global, layerwise };

/// Prunes round(sparsity * n) prunable coordinates with the lowest score, over
/// all prunable coordinates (global) or per layer (layerwise). Ties on score
/// prune the lower index first.
Mask mask_from_scores(std::span<const double> scores, const LayoutPtr& layout, double sparsity,
                      PruneScope scope);

Mask magnitude_mask(const ParamVector& params, double sparsity, PruneScope scope);

/// Connection sensitivity |w_i * g_i| on one batch, global scope. Falls back to
/// magnitude_mask when every saliency is zero.
Mask snip_mask(const MLPModel& model, const ParamVector& params, const Batch& batch,
               double sparsity);

/// Structured pruning: each output-neuron row of a prunable weight matrix is
/// one group. Whole rows with the smallest l2 norm are removed until the pruned
/// fraction of prunable weights reaches `sparsity`.
Mask row_group_l2(const ParamVector& params, const MLPModel& model, double sparsity);

ParamVector apply_mask(const ParamVector& params, const Mask& mask);

/// ||x - x_hat||^2 / ||x||^2, or 0 when x is the zero vector.
double delta_of(std::span<const double> x, std::span<const double> x_hat);

struct MagnitudeCompressor {
  PruneScope scope = PruneScope::global;
};
struct SnipCompressor {};
struct RowGroupCompressor {};
/// (||x_P||_1 / |P|) * sign(x_P) on prunable coordinates P; sign(0) = +1.
struct ScaledSignCompressor {};

using Compressor =
    std::variant<MagnitudeCompressor, SnipCompressor, RowGroupCompressor, ScaledSignCompressor>;

struct Compressed {
  ParamVector params;
  std::optional<Mask> mask;
};

/// `model` is required for the snip and row-group variants, `batch` for snip.
Compressed compress(const Compressor& compressor, const ParamVector& params, const MLPModel* model,
                    const Batch* batch, double sparsity);

ParamVector scaled_sign(const ParamVector& params);

}  // namespace dpf
