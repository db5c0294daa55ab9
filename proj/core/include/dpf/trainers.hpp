#pragma once

// Training strategies sharing one step engine: dense SGD, pruning before
// training, one-shot pruning after training (+ fine-tuning), incremental
// pruning, and dynamic pruning with feedback (DPF).
//
// DPF keeps a dense model x_t, evaluates the stochastic gradient at the pruned
// model x_hat_t = m_t * x_t and applies it to x_t:
//
//   x_{t+1} = x_t - lr_t * g(m_t * x_t) = x_t - lr_t * g(x_t + e_t),  e_t = x_hat_t - x_t.
//
// The mask is recomputed from the dense weights every `reparam_period` steps,
// so coordinates pruned too early can grow back.

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "dpf/metrics.hpp"
#include "dpf/nn.hpp"
#include "dpf/pruning.hpp"

namespace dpf {

enum class Saliency : std::uint8_t { magnitude, snip };

struct Dense {};
struct BeforeTraining {
  Saliency saliency = Saliency::magnitude;
};
struct OneShotFinetune {};
struct Incremental {
  bool monotone = false;
};
struct Dpf {};

using Strategy = std::variant<Dense, BeforeTraining, OneShotFinetune, Incremental, Dpf>;

std::string strategy_name(const Strategy& strategy);

struct ConstantLr {
  double rate = 0.1;
};
/// rate = initial / factor^(number of milestones <= t)
struct StepDecayLr {
  double initial = 0.1;
  std::vector<std::int64_t> milestones;
  double factor = 10.0;
};
/// rate = 4 / (mu (t + 2))
struct Theorem1Lr {
  double mu = 1.0;
};
/// rate = c / sqrt(horizon)
struct Theorem2Lr {
  double c = 1.0;
  std::int64_t horizon = 1;
};

using LRSchedule = std::variant<ConstantLr, StepDecayLr, Theorem1Lr, Theorem2Lr>;

double learning_rate(const LRSchedule& schedule, std::int64_t step);
void validate(const LRSchedule& schedule);

enum class MaskCriterion : std::uint8_t { magnitude, row_group_l2 };

struct TrainConfig {
  Strategy strategy = Dpf{};
  LRSchedule lr = ConstantLr{0.1};
  double momentum = 0.9;  // Nesterov
  double weight_decay = 0.0;
  std::size_t batch_size = 32;
  std::int64_t epochs = 10;
  std::int64_t reparam_period = 16;
  SparsitySchedule schedule;
  PruneScope scope = PruneScope::global;
  MaskCriterion criterion = MaskCriterion::magnitude;
  std::uint64_t seed = 0;
  std::int64_t finetune_epochs = 0;
  std::optional<double> finetune_lr;  // defaults to the last training rate
  std::int64_t eval_every = 1;

  /// Throws std::invalid_argument describing the first violated constraint.
  void validate() const;
};

std::int64_t steps_per_epoch(std::size_t samples, std::size_t batch_size);

struct TrainState {
  ParamVector x;       // dense weights
  ParamVector v;       // momentum buffer on the dense trajectory
  Mask mask;
  std::int64_t t = 0;
  ParamVector x_hat;   // mask applied to x
  std::vector<double> error;  // x_hat - x
  double grad_norm = 0.0;     // ||g|| of the last step, diagnostic only

  static TrainState start(ParamVector x0, Mask mask);

  /// Recomputes x_hat and error from x and mask.
  void refresh();
};

/// Nesterov momentum: v <- momentum * v + g;  x <- x - lr * (g + momentum * v).
void momentum_update(std::span<double> x, std::span<double> v, std::span<const double> g,
                     double lr, double momentum);

/// backward(point) + weight_decay * point.
ParamVector stochastic_gradient(const MLPModel& model, const ParamVector& point,
                                const Batch& batch, double weight_decay);

/// One DPF step: gradient at x_hat, update applied to the dense weights.
/// Throws NumericalFailure on a non-finite gradient.
TrainState dpf_step(TrainState state, const MLPModel& model, const Batch& batch, double lr,
                    const TrainConfig& cfg);

/// The same step written as an error-feedback update: gradient at x + e.
TrainState dpf_step_error_feedback(TrainState state, const MLPModel& model, const Batch& batch,
                                   double lr, const TrainConfig& cfg);

/// Fixed-subnetwork step: gradient masked, weights kept on the mask support.
TrainState masked_step(TrainState state, const MLPModel& model, const Batch& batch, double lr,
                       const TrainConfig& cfg);

/// Mask from `source` under the configured criterion and scope.
Mask build_mask(const ParamVector& source, const MLPModel& model, double sparsity,
                const TrainConfig& cfg);

/// Fires when reparam_period divides t: recompute the mask from the dense
/// weights at sparsity_at(t). Incremental strategies hard-prune the weights and,
/// when monotone, intersect with the previous mask.
TrainState maybe_update_mask(TrainState state, const MLPModel& model, const TrainConfig& cfg);

bool mask_update_due(const TrainConfig& cfg, std::int64_t step);

struct TrainResult {
  ParamVector final_dense;
  ParamVector final_sparse;
  Mask mask;
  std::vector<StepRecord> records;
  MaskHistory history;
  TrainState state;
  std::int64_t steps_per_epoch = 0;
  std::int64_t epochs_completed = 0;
  double max_grad_norm = 0.0;  // running max ||g(x_hat)||, diagnostic only
  bool completed = false;      // false when stopped early via RunOptions::stop_epoch
};

struct RunOptions {
  const TrainState* resume = nullptr;  // state at the end of `start_epoch` epochs
  std::int64_t start_epoch = 0;
  std::int64_t stop_epoch = -1;        // run epochs [start_epoch, stop_epoch); -1 = all
  std::function<void(const TrainState&, std::int64_t epochs_done)> on_epoch_end;
};

/// Runs the configured strategy. `test` may be null, in which case test
/// metrics are NaN.
TrainResult run_training(const MLPModel& model, const Dataset& train, const Dataset* test,
                         const TrainConfig& cfg, const RunOptions& options = {});

/// Retrains with the mask fixed for cfg.finetune_epochs at a constant rate
/// (cfg.finetune_lr, else the last training rate). Momentum starts at zero.
ParamVector finetune(const MLPModel& model, const ParamVector& x_start, const Mask& mask,
                     const Dataset& train, const TrainConfig& cfg);

/// Reinitializes the weights from `init_seed` and trains the fixed subnetwork
/// given by `mask` for cfg.epochs with cfg.lr.
ParamVector lottery_retrain(const std::vector<LayerSpec>& specs, const Mask& mask,
                            std::uint64_t init_seed, const Dataset& train, const TrainConfig& cfg);

}  // namespace dpf
