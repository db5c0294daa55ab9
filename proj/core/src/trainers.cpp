#include "dpf/trainers.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "dpf/error.hpp"
#include "dpf/log.hpp"
#include "dpf/rng.hpp"

namespace dpf {
namespace {

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

bool is_dynamic(const Strategy& s) {
  return std::holds_alternative<Dpf>(s) || std::holds_alternative<Incremental>(s);
}

double l2_norm(std::span<const double> v) {
  double sq = 0.0;
  for (double x : v) sq += x * x;
  return std::sqrt(sq);
}

void check_finite(std::span<const double> g) {
  for (double x : g) {
    if (!std::isfinite(x)) throw NumericalFailure("non-finite stochastic gradient");
  }
}

std::vector<std::size_t> epoch_permutation(std::size_t n, std::uint64_t seed, std::uint64_t stream_id,
                                           std::int64_t epoch) {
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  auto rng = make_rng(seed, stream_id, static_cast<std::uint64_t>(epoch));
  std::shuffle(perm.begin(), perm.end(), rng);
  return perm;
}

Batch batch_at(const Dataset& data, const std::vector<std::size_t>& perm, std::int64_t b,
               std::size_t batch_size) {
  const std::size_t begin = static_cast<std::size_t>(b) * batch_size;
  const std::size_t end = std::min(begin + batch_size, perm.size());
  return select_rows(data, std::span<const std::size_t>(perm).subspan(begin, end - begin));
}

// Fixed-mask training shared by before-training, fine-tuning and lottery retraining.
TrainState train_fixed_mask(const MLPModel& model, TrainState state, const Dataset& train,
                            const TrainConfig& cfg, std::int64_t epochs,
                            const std::function<double(std::int64_t)>& rate,
                            std::uint64_t shuffle_stream) {
  const auto spe = steps_per_epoch(train.rows, cfg.batch_size);
  for (std::int64_t epoch = 0; epoch < epochs; ++epoch) {
    const auto perm = epoch_permutation(train.rows, cfg.seed, shuffle_stream, epoch);
    for (std::int64_t b = 0; b < spe; ++b) {
      const auto batch = batch_at(train, perm, b, cfg.batch_size);
      state = masked_step(std::move(state), model, batch, rate(state.t), cfg);
    }
  }
  return state;
}

struct RecordContext {
  const MLPModel& model;
  const Dataset& train;
  const Dataset* test;
};

StepRecord make_record(const RecordContext& ctx, const ParamVector& dense, const ParamVector& sparse,
                       const Mask& mask, std::int64_t step, std::int64_t epoch, double lr,
                       double target) {
  StepRecord r;
  r.step = step;
  r.epoch = epoch;
  r.lr = lr;
  const auto tr = evaluate(ctx.model, sparse, ctx.train);
  r.train_loss = tr.loss;
  r.train_acc = tr.accuracy;
  if (ctx.test != nullptr && !ctx.test->empty()) {
    const auto te = evaluate(ctx.model, sparse, *ctx.test);
    r.test_loss = te.loss;
    r.test_acc = te.accuracy;
  } else {
    r.test_loss = std::numeric_limits<double>::quiet_NaN();
    r.test_acc = std::numeric_limits<double>::quiet_NaN();
  }
  r.sparsity_target = target;
  r.sparsity_achieved = mask.sparsity();
  r.delta = delta_of(dense.values, sparse.values);
  return r;
}

}  // namespace

std::string strategy_name(const Strategy& strategy) {
  return std::visit(Overloaded{
                        [](const Dense&) { return std::string("dense"); },
                        [](const BeforeTraining&) { return std::string("before_training"); },
                        [](const OneShotFinetune&) { return std::string("one_shot_ft"); },
                        [](const Incremental&) { return std::string("incremental"); },
                        [](const Dpf&) { return std::string("dpf"); },
                    },
                    strategy);
}

double learning_rate(const LRSchedule& schedule, std::int64_t step) {
  return std::visit(
      Overloaded{
          [](const ConstantLr& s) { return s.rate; },
          [step](const StepDecayLr& s) {
            double rate = s.initial;
            for (auto m : s.milestones) {
              if (step >= m) rate /= s.factor;
            }
            return rate;
          },
          [step](const Theorem1Lr& s) { return 4.0 / (s.mu * static_cast<double>(step + 2)); },
          [](const Theorem2Lr& s) { return s.c / std::sqrt(static_cast<double>(s.horizon)); },
      },
      schedule);
}

void validate(const LRSchedule& schedule) {
  std::visit(Overloaded{
                 [](const ConstantLr& s) {
                   if (!(s.rate > 0.0)) throw std::invalid_argument("learning rate must be > 0");
                 },
                 [](const StepDecayLr& s) {
                   if (!(s.initial > 0.0)) throw std::invalid_argument("learning rate must be > 0");
                   if (!(s.factor > 0.0)) throw std::invalid_argument("decay factor must be > 0");
                 },
                 [](const Theorem1Lr& s) {
                   if (!(s.mu > 0.0)) throw std::invalid_argument("mu must be > 0");
                 },
                 [](const Theorem2Lr& s) {
                   if (!(s.c > 0.0) || s.horizon < 1) {
                     throw std::invalid_argument("constant rate needs c > 0 and horizon >= 1");
                   }
                 },
             },
             schedule);
}

void TrainConfig::validate() const {
  dpf::validate(lr);
  schedule.validate();
  if (!(momentum >= 0.0 && momentum < 1.0)) throw std::invalid_argument("momentum must lie in [0, 1)");
  if (!(weight_decay >= 0.0)) throw std::invalid_argument("weight decay must be >= 0");
  if (batch_size < 1) throw std::invalid_argument("batch size must be >= 1");
  if (epochs < 0) throw std::invalid_argument("epochs must be >= 0");
  if (reparam_period < 1) throw std::invalid_argument("reparameterization period must be >= 1");
  if (finetune_epochs < 0) throw std::invalid_argument("finetune epochs must be >= 0");
  if (finetune_lr && !(*finetune_lr > 0.0)) throw std::invalid_argument("finetune lr must be > 0");
  if (eval_every < 1) throw std::invalid_argument("eval_every must be >= 1");
}

std::int64_t steps_per_epoch(std::size_t samples, std::size_t batch_size) {
  if (batch_size == 0) throw std::invalid_argument("batch size must be >= 1");
  return static_cast<std::int64_t>((samples + batch_size - 1) / batch_size);
}

TrainState TrainState::start(ParamVector x0, Mask mask) {
  TrainState s;
  s.v = ParamVector::zeros(x0.layout);
  s.x = std::move(x0);
  s.mask = std::move(mask);
  s.refresh();
  return s;
}

void TrainState::refresh() {
  x_hat = apply_mask(x, mask);
  error.resize(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) error[i] = x_hat[i] - x[i];
}

void momentum_update(std::span<double> x, std::span<double> v, std::span<const double> g,
                     double lr, double momentum) {
  for (std::size_t i = 0; i < x.size(); ++i) {
    v[i] = momentum * v[i] + g[i];
    x[i] -= lr * (g[i] + momentum * v[i]);
  }
}

ParamVector stochastic_gradient(const MLPModel& model, const ParamVector& point,
                                const Batch& batch, double weight_decay) {
  auto fwd = forward(model, point, batch);
  auto g = backward(model, point, batch, fwd.cache);
  if (weight_decay != 0.0) {
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += weight_decay * point[i];
  }
  check_finite(g.values);
  return g;
}

TrainState dpf_step(TrainState state, const MLPModel& model, const Batch& batch, double lr,
                    const TrainConfig& cfg) {
  const auto g = stochastic_gradient(model, state.x_hat, batch, cfg.weight_decay);
  momentum_update(state.x.values, state.v.values, g.values, lr, cfg.momentum);
  state.grad_norm = l2_norm(g.values);
  ++state.t;
  state.refresh();
  return state;
}

TrainState dpf_step_error_feedback(TrainState state, const MLPModel& model, const Batch& batch,
                                   double lr, const TrainConfig& cfg) {
  ParamVector perturbed = state.x;
  for (std::size_t i = 0; i < perturbed.size(); ++i) perturbed[i] = state.x[i] + state.error[i];
  const auto g = stochastic_gradient(model, perturbed, batch, cfg.weight_decay);
  momentum_update(state.x.values, state.v.values, g.values, lr, cfg.momentum);
  state.grad_norm = l2_norm(g.values);
  ++state.t;
  state.refresh();
  return state;
}

TrainState masked_step(TrainState state, const MLPModel& model, const Batch& batch, double lr,
                       const TrainConfig& cfg) {
  auto g = stochastic_gradient(model, state.x_hat, batch, cfg.weight_decay);
  const auto bits = state.mask.bits();
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (bits[i] == 0) g[i] = 0.0;
  }
  momentum_update(state.x.values, state.v.values, g.values, lr, cfg.momentum);
  state.grad_norm = l2_norm(g.values);
  state.x = apply_mask(state.x, state.mask);
  ++state.t;
  state.refresh();
  return state;
}

Mask build_mask(const ParamVector& source, const MLPModel& model, double sparsity,
                const TrainConfig& cfg) {
  if (cfg.criterion == MaskCriterion::row_group_l2) return row_group_l2(source, model, sparsity);
  return magnitude_mask(source, sparsity, cfg.scope);
}

bool mask_update_due(const TrainConfig& cfg, std::int64_t step) {
  return step % cfg.reparam_period == 0;
}

TrainState maybe_update_mask(TrainState state, const MLPModel& model, const TrainConfig& cfg) {
  if (!mask_update_due(cfg, state.t)) return state;
  const double target = sparsity_at(cfg.schedule, state.t);
  Mask next = build_mask(state.x, model, target, cfg);
  if (const auto* inc = std::get_if<Incremental>(&cfg.strategy)) {
    if (inc->monotone) next = intersect(state.mask, next);
    state.mask = std::move(next);
    state.x = apply_mask(state.x, state.mask);
  } else {
    state.mask = std::move(next);
  }
  state.refresh();
  return state;
}

TrainResult run_training(const MLPModel& model, const Dataset& train, const Dataset* test,
                         const TrainConfig& cfg, const RunOptions& options) {
  cfg.validate();
  if (train.rows == 0) throw std::invalid_argument("training set is empty");
  const auto spe = steps_per_epoch(train.rows, cfg.batch_size);
  const std::int64_t stop = options.stop_epoch < 0 ? cfg.epochs : std::min(options.stop_epoch, cfg.epochs);
  const RecordContext ctx{model, train, test};
  const bool dynamic = is_dynamic(cfg.strategy);

  if (dynamic && options.resume == nullptr) {
    const std::int64_t total = cfg.epochs * spe;
    const std::int64_t last_update = ((total - 1) / cfg.reparam_period) * cfg.reparam_period;
    const double reached = sparsity_at(cfg.schedule, last_update);
    if (reached < cfg.schedule.final) {
      log_warning("final sparsity " + std::to_string(cfg.schedule.final) +
                  " is never applied: the last mask update (step " + std::to_string(last_update) +
                  ") targets " + std::to_string(reached));
    }
  }

  TrainResult result;
  result.steps_per_epoch = spe;

  TrainState state;
  if (options.resume != nullptr) {
    state = *options.resume;
  } else {
    Mask mask = Mask::ones(model.params.layout);
    ParamVector x0 = model.params;
    if (const auto* bt = std::get_if<BeforeTraining>(&cfg.strategy)) {
      const double target = cfg.schedule.final;
      if (bt->saliency == Saliency::snip) {
        const auto perm = epoch_permutation(train.rows, cfg.seed, stream::snip, 0);
        const auto batch = batch_at(train, perm, 0, cfg.batch_size);
        mask = snip_mask(model, x0, batch, target);
      } else {
        mask = build_mask(x0, model, target, cfg);
      }
      x0 = apply_mask(x0, mask);
    }
    state = TrainState::start(std::move(x0), std::move(mask));
  }

  Mask record_mask = state.mask;
  std::int64_t flips_since_record = 0;
  // Step at which the mask in force was built; its target is what records report.
  std::int64_t mask_step = state.t == 0 ? 0 : ((state.t - 1) / cfg.reparam_period) * cfg.reparam_period;
  auto note_update = [&](const Mask& before) {
    flips_since_record += static_cast<std::int64_t>(flip_count(before, state.mask));
    result.history.push(state.t, state.mask);
    mask_step = state.t;
  };
  auto current_target = [&](std::int64_t step) {
    return std::visit(Overloaded{
                          [](const Dense&) { return 0.0; },
                          [&](const BeforeTraining&) { return cfg.schedule.final; },
                          [](const OneShotFinetune&) { return 0.0; },
                          [&](const Incremental&) { return sparsity_at(cfg.schedule, step); },
                          [&](const Dpf&) { return sparsity_at(cfg.schedule, step); },
                      },
                      cfg.strategy);
  };
  auto push_record = [&](const ParamVector& dense, const ParamVector& sparse, const Mask& mask,
                         std::int64_t step, std::int64_t epoch, double lr, double target,
                         double delta_override = -1.0) {
    auto r = make_record(ctx, dense, sparse, mask, step, epoch, lr, target);
    if (delta_override >= 0.0) r.delta = delta_override;
    r.flips = flips_since_record;
    r.iou = mask_iou(record_mask, mask);
    result.records.push_back(r);
    record_mask = mask;
    flips_since_record = 0;
  };

  for (std::int64_t epoch = options.start_epoch; epoch < stop; ++epoch) {
    const auto perm = epoch_permutation(train.rows, cfg.seed, stream::shuffle, epoch);
    for (std::int64_t b = 0; b < spe; ++b) {
      const auto batch = batch_at(train, perm, b, cfg.batch_size);
      const double lr = learning_rate(cfg.lr, state.t);
      if (dynamic && mask_update_due(cfg, state.t)) {
        const Mask before = state.mask;
        state = maybe_update_mask(std::move(state), model, cfg);
        note_update(before);
      }
      if (std::holds_alternative<BeforeTraining>(cfg.strategy) ||
          std::holds_alternative<Incremental>(cfg.strategy)) {
        state = masked_step(std::move(state), model, batch, lr, cfg);
      } else {
        state = dpf_step(std::move(state), model, batch, lr, cfg);
      }
      result.max_grad_norm = std::max(result.max_grad_norm, state.grad_norm);
    }
    const std::int64_t done = epoch + 1;
    const bool last = done == cfg.epochs;
    if (!last && done % cfg.eval_every == 0) {
      push_record(state.x, state.x_hat, state.mask, state.t, done,
                  learning_rate(cfg.lr, std::max<std::int64_t>(state.t - 1, 0)),
                  current_target(mask_step));
    }
    if (options.on_epoch_end) options.on_epoch_end(state, done);
  }
  result.epochs_completed = stop;

  if (stop < cfg.epochs) {
    result.final_dense = state.x;
    result.final_sparse = state.x_hat;
    result.mask = state.mask;
    result.state = std::move(state);
    return result;
  }

  const std::int64_t total_steps = state.t;
  const double last_lr = learning_rate(cfg.lr, std::max<std::int64_t>(total_steps - 1, 0));
  if (dynamic && mask_update_due(cfg, state.t)) {
    const Mask before = state.mask;
    state = maybe_update_mask(std::move(state), model, cfg);
    note_update(before);
  }

  if (std::holds_alternative<OneShotFinetune>(cfg.strategy)) {
    const double target = cfg.schedule.final;
    Mask mask = build_mask(state.x, model, target, cfg);
    const ParamVector pruned = apply_mask(state.x, mask);
    const double delta = delta_of(state.x.values, pruned.values);
    flips_since_record += static_cast<std::int64_t>(flip_count(record_mask, mask));
    ParamVector sparse = cfg.finetune_epochs > 0 ? finetune(model, pruned, mask, train, cfg) : pruned;
    const std::int64_t ft_steps = cfg.finetune_epochs * spe;
    push_record(state.x, sparse, mask, total_steps + ft_steps, cfg.epochs + cfg.finetune_epochs,
                cfg.finetune_epochs > 0 ? cfg.finetune_lr.value_or(last_lr) : last_lr, target, delta);
    result.final_dense = state.x;
    result.final_sparse = std::move(sparse);
    result.mask = std::move(mask);
  } else {
    push_record(state.x, state.x_hat, state.mask, state.t, cfg.epochs, last_lr,
                current_target(mask_step));
    result.final_dense = state.x;
    result.final_sparse = state.x_hat;
    result.mask = state.mask;
  }
  result.state = std::move(state);
  result.completed = true;
  return result;
}

ParamVector finetune(const MLPModel& model, const ParamVector& x_start, const Mask& mask,
                     const Dataset& train, const TrainConfig& cfg) {
  if (cfg.finetune_epochs == 0) return apply_mask(x_start, mask);
  const auto spe = steps_per_epoch(train.rows, cfg.batch_size);
  const std::int64_t trained = cfg.epochs * spe;
  const double rate = cfg.finetune_lr.value_or(learning_rate(cfg.lr, std::max<std::int64_t>(trained - 1, 0)));
  auto state = TrainState::start(apply_mask(x_start, mask), mask);
  state = train_fixed_mask(model, std::move(state), train, cfg, cfg.finetune_epochs,
                           [rate](std::int64_t) { return rate; }, stream::finetune_shuffle);
  return state.x_hat;
}

ParamVector lottery_retrain(const std::vector<LayerSpec>& specs, const Mask& mask,
                            std::uint64_t init_seed, const Dataset& train, const TrainConfig& cfg) {
  cfg.validate();
  const auto model = init_model(specs, init_seed);
  if (mask.size() != model.params.size()) throw std::invalid_argument("lottery mask does not fit model");
  const Mask fitted(model.params.layout, std::vector<std::uint8_t>(mask.bits().begin(), mask.bits().end()));
  auto state = TrainState::start(apply_mask(model.params, fitted), fitted);
  state = train_fixed_mask(model, std::move(state), train, cfg, cfg.epochs,
                           [&cfg](std::int64_t t) { return learning_rate(cfg.lr, t); },
                           stream::shuffle);
  return state.x_hat;
}

}  // namespace dpf
