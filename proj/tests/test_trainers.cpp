#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <limits>

#include "dpf/datasets.hpp"
#include "dpf/error.hpp"
#include "dpf/trainers.hpp"
#include "support.hpp"

using namespace dpf;

namespace {

struct Fixture {
  Split data;
  MLPModel model;
};

Fixture small_task(std::uint64_t seed) {
  return {make_blobs(3, 8, 300, 0.5, seed), init_model(mlp_specs(std::vector<std::size_t>{8, 16, 16, 3}), seed)};
}

TrainConfig small_config(Strategy strategy, double sparsity, std::uint64_t seed, std::int64_t epochs = 6) {
  auto cfg = dpf::testing::blob_config(strategy, sparsity, epochs, 240, seed);
  cfg.reparam_period = 4;
  cfg.schedule.update_every = 1;
  return cfg;
}

bool bit_equal(const std::vector<double>& a, const std::vector<double>& b) {
  return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

Batch first_rows(const Dataset& d, std::size_t n) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  return select_rows(d, idx);
}

}  // namespace

TEST(LearningRate, Schedules) {
  EXPECT_DOUBLE_EQ(learning_rate(ConstantLr{0.3}, 1000), 0.3);
  const StepDecayLr decay{1.0, {10, 20}, 10.0};
  EXPECT_DOUBLE_EQ(learning_rate(decay, 9), 1.0);
  EXPECT_DOUBLE_EQ(learning_rate(decay, 10), 0.1);
  EXPECT_NEAR(learning_rate(decay, 25), 0.01, 1e-18);
  EXPECT_DOUBLE_EQ(learning_rate(Theorem1Lr{0.5}, 6), 1.0);
  EXPECT_DOUBLE_EQ(learning_rate(Theorem2Lr{2.0, 16}, 3), 0.5);
}

TEST(LearningRate, ValidationRejectsNonPositive) {
  EXPECT_THROW(validate(ConstantLr{0.0}), std::invalid_argument);
  EXPECT_THROW(validate(Theorem1Lr{-1.0}), std::invalid_argument);
  EXPECT_THROW(validate(Theorem2Lr{1.0, 0}), std::invalid_argument);
}

TEST(Config, Validation) {
  TrainConfig cfg;
  EXPECT_NO_THROW(cfg.validate());
  cfg.reparam_period = 0;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
  cfg.reparam_period = 16;
  cfg.momentum = 1.0;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
  cfg.momentum = 0.9;
  cfg.weight_decay = -1e-4;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
}

TEST(Momentum, NesterovFormula) {
  std::vector<double> x{1.0}, v{0.5};
  const std::vector<double> g{2.0};
  momentum_update(x, v, g, 0.1, 0.9);
  EXPECT_DOUBLE_EQ(v[0], 0.9 * 0.5 + 2.0);
  EXPECT_DOUBLE_EQ(x[0], 1.0 - 0.1 * (2.0 + 0.9 * v[0]));
}

TEST(Momentum, PrunedQuadraticWeightIsFrozen) {
  // f(x) = x^2 / 2 with x = 1 masked to 0: the gradient at the pruned point is 0.
  std::vector<double> x{1.0}, v{0.0};
  const double x_hat = 0.0;
  const std::vector<double> g{x_hat};
  momentum_update(x, v, g, 0.5, 0.0);
  EXPECT_EQ(x[0], 1.0);
}

TEST(DpfStep, IdentityMaskIsSgd) {
  auto fx = small_task(1);
  auto cfg = small_config(Dpf{}, 0.0, 1);
  cfg.momentum = 0.0;
  const auto batch = first_rows(fx.data.train, 16);
  auto s = TrainState::start(fx.model.params, Mask::ones(fx.model.params.layout));
  const auto next = dpf_step(s, fx.model, batch, 0.05, cfg);
  auto fwd = forward(fx.model, fx.model.params, batch);
  const auto g = backward(fx.model, fx.model.params, batch, fwd.cache);
  for (std::size_t i = 0; i < g.size(); ++i) EXPECT_EQ(next.x[i], fx.model.params[i] - 0.05 * g[i]);
  EXPECT_EQ(next.t, 1);
}

TEST(DpfStep, ErrorFeedbackFormIsBitIdentical) {
  auto fx = small_task(2);
  auto cfg = small_config(Dpf{}, 0.8, 2);
  cfg.weight_decay = 1e-4;
  const auto mask = magnitude_mask(fx.model.params, 0.8, PruneScope::global);
  auto a = TrainState::start(fx.model.params, mask);
  auto b = a;
  for (std::size_t k = 0; k < 5; ++k) {
    const auto batch = first_rows(fx.data.train, 8 + k);
    a = dpf_step(std::move(a), fx.model, batch, 0.1, cfg);
    b = dpf_step_error_feedback(std::move(b), fx.model, batch, 0.1, cfg);
    ASSERT_TRUE(bit_equal(a.x.values, b.x.values));
    ASSERT_TRUE(bit_equal(a.v.values, b.v.values));
  }
}

TEST(DpfStep, CachesStayConsistent) {
  auto fx = small_task(3);
  const auto cfg = small_config(Dpf{}, 0.5, 3);
  auto s = TrainState::start(fx.model.params, magnitude_mask(fx.model.params, 0.5, PruneScope::global));
  s = dpf_step(std::move(s), fx.model, first_rows(fx.data.train, 10), 0.1, cfg);
  EXPECT_EQ(s.x_hat.values, apply_mask(s.x, s.mask).values);
  for (std::size_t i = 0; i < s.x.size(); ++i) EXPECT_EQ(s.error[i], s.x_hat[i] - s.x[i]);
}

TEST(DpfStep, NonFiniteGradientAborts) {
  auto fx = small_task(4);
  const auto cfg = small_config(Dpf{}, 0.0, 4);
  auto p = fx.model.params;
  p[0] = std::numeric_limits<double>::infinity();
  auto s = TrainState::start(p, Mask::ones(p.layout));
  EXPECT_THROW(dpf_step(s, fx.model, first_rows(fx.data.train, 4), 0.1, cfg), NumericalFailure);
}

TEST(MaskUpdate, FiresOnPeriod) {
  TrainConfig cfg;
  cfg.reparam_period = 16;
  EXPECT_TRUE(mask_update_due(cfg, 16));
  EXPECT_TRUE(mask_update_due(cfg, 32));
  EXPECT_FALSE(mask_update_due(cfg, 17));
}

TEST(MaskUpdate, MonotoneIntersectsPrevious) {
  const auto layout = Layout::flat(3);
  MLPModel dummy;
  TrainConfig cfg;
  cfg.strategy = Incremental{true};
  cfg.reparam_period = 1;
  cfg.schedule = SparsitySchedule::constant(1.0 / 3.0);
  // new magnitude mask on [5, 0.1, 3] is [1, 0, 1]; the previous mask [0, 1, 1]
  auto s = TrainState::start(ParamVector(layout, {5.0, 0.1, 3.0}), Mask(layout, {0, 1, 1}));
  s.t = 1;
  s = maybe_update_mask(std::move(s), dummy, cfg);
  EXPECT_EQ(std::vector<std::uint8_t>(s.mask.bits().begin(), s.mask.bits().end()),
            (std::vector<std::uint8_t>{0, 0, 1}));
}

TEST(RunTraining, DenseEqualsDpfAtZeroSparsity) {
  auto fx = small_task(5);
  const auto dense = run_training(fx.model, fx.data.train, &fx.data.test, small_config(Dense{}, 0.0, 5));
  const auto dpf = run_training(fx.model, fx.data.train, &fx.data.test, small_config(Dpf{}, 0.0, 5));
  EXPECT_TRUE(bit_equal(dense.final_dense.values, dpf.final_dense.values));
  EXPECT_TRUE(bit_equal(dense.final_sparse.values, dpf.final_sparse.values));
}

TEST(RunTraining, Deterministic) {
  auto fx = small_task(6);
  const auto cfg = small_config(Dpf{}, 0.8, 6);
  const auto a = run_training(fx.model, fx.data.train, &fx.data.test, cfg);
  const auto b = run_training(fx.model, fx.data.train, &fx.data.test, cfg);
  EXPECT_TRUE(bit_equal(a.final_dense.values, b.final_dense.values));
  EXPECT_EQ(a.mask, b.mask);
}

TEST(RunTraining, DpfReachesTargetSparsity) {
  auto fx = small_task(7);
  const auto r = run_training(fx.model, fx.data.train, &fx.data.test, small_config(Dpf{}, 0.9, 7));
  const double n = static_cast<double>(fx.model.params.layout->num_prunable());
  EXPECT_LE(std::abs(r.mask.sparsity() - 0.9), 1.0 / n);
  EXPECT_EQ(r.final_sparse.values, apply_mask(r.final_dense, r.mask).values);
  for (const auto& rec : r.records) EXPECT_LE(std::abs(rec.sparsity_achieved - rec.sparsity_target), 1.0 / n);
}

TEST(RunTraining, DpfReactivatesPrunedWeights) {
  auto fx = small_task(8);
  const auto r = run_training(fx.model, fx.data.train, nullptr, small_config(Dpf{}, 0.9, 8));
  const auto entries = r.history.entries();
  bool regrew = false;
  for (std::size_t k = 1; k < entries.size() && !regrew; ++k) {
    for (std::size_t i = 0; i < entries[k].mask.size(); ++i) {
      if (!entries[k - 1].mask.kept(i) && entries[k].mask.kept(i)) {
        regrew = true;
        break;
      }
    }
  }
  EXPECT_TRUE(regrew);
}

TEST(RunTraining, MonotoneIncrementalNeverRegrows) {
  auto fx = small_task(8);
  const auto r = run_training(fx.model, fx.data.train, nullptr, small_config(Incremental{true}, 0.9, 8));
  const auto entries = r.history.entries();
  ASSERT_GT(entries.size(), 2u);
  for (std::size_t k = 1; k < entries.size(); ++k) {
    for (std::size_t i = 0; i < entries[k].mask.size(); ++i) {
      if (entries[k].mask.kept(i)) EXPECT_TRUE(entries[k - 1].mask.kept(i));
    }
  }
}

TEST(RunTraining, BeforeTrainingConservesSupport) {
  auto fx = small_task(9);
  for (auto sal : {Saliency::magnitude, Saliency::snip}) {
    const auto r = run_training(fx.model, fx.data.train, nullptr, small_config(BeforeTraining{sal}, 0.7, 9));
    for (std::size_t i = 0; i < r.final_dense.size(); ++i) {
      if (r.mask.kept(i)) {
        EXPECT_EQ(r.final_dense[i], r.final_sparse[i]);
      } else {
        EXPECT_EQ(r.final_dense[i], 0.0);
        EXPECT_EQ(r.final_sparse[i], 0.0);
      }
    }
  }
}

TEST(RunTraining, OneShotMasksOnlyAtTheEnd) {
  auto fx = small_task(10);
  const auto dense = run_training(fx.model, fx.data.train, nullptr, small_config(Dense{}, 0.0, 10));
  const auto shot = run_training(fx.model, fx.data.train, nullptr, small_config(OneShotFinetune{}, 0.8, 10));
  EXPECT_TRUE(bit_equal(dense.final_dense.values, shot.final_dense.values));
  EXPECT_EQ(shot.mask, magnitude_mask(dense.final_dense, 0.8, PruneScope::global));
}

TEST(RunTraining, StopAndResumeMatchesFullRun) {
  auto fx = small_task(11);
  const auto cfg = small_config(Dpf{}, 0.8, 11);
  const auto full = run_training(fx.model, fx.data.train, nullptr, cfg);
  RunOptions first;
  first.stop_epoch = 3;
  const auto half = run_training(fx.model, fx.data.train, nullptr, cfg, first);
  EXPECT_FALSE(half.completed);
  RunOptions second;
  second.resume = &half.state;
  second.start_epoch = 3;
  const auto rest = run_training(fx.model, fx.data.train, nullptr, cfg, second);
  EXPECT_TRUE(bit_equal(full.final_dense.values, rest.final_dense.values));
}

TEST(Finetune, ZeroEpochsIsApplyMask) {
  auto fx = small_task(12);
  auto cfg = small_config(OneShotFinetune{}, 0.5, 12);
  cfg.finetune_epochs = 0;
  const auto mask = magnitude_mask(fx.model.params, 0.5, PruneScope::global);
  EXPECT_EQ(finetune(fx.model, fx.model.params, mask, fx.data.train, cfg).values,
            apply_mask(fx.model.params, mask).values);
}

TEST(Finetune, StaysOnSupportAndDoesNotHurtTrainLoss) {
  auto fx = small_task(13);
  auto cfg = small_config(Dpf{}, 0.8, 13);
  const auto r = run_training(fx.model, fx.data.train, nullptr, cfg);
  cfg.finetune_epochs = 3;
  const auto tuned = finetune(fx.model, r.final_sparse, r.mask, fx.data.train, cfg);
  for (std::size_t i = 0; i < tuned.size(); ++i) {
    if (!r.mask.kept(i)) EXPECT_EQ(tuned[i], 0.0);
  }
  EXPECT_LE(evaluate(fx.model, tuned, fx.data.train).loss,
            evaluate(fx.model, r.final_sparse, fx.data.train).loss + 1e-3);
}

TEST(Lottery, OutputInsideMaskSupport) {
  auto fx = small_task(14);
  const auto specs = fx.model.layers;
  const auto mask = magnitude_mask(fx.model.params, 0.75, PruneScope::global);
  const auto w = lottery_retrain(specs, mask, 14, fx.data.train, small_config(Dense{}, 0.0, 14));
  for (std::size_t i = 0; i < w.size(); ++i) {
    if (!mask.kept(i)) EXPECT_EQ(w[i], 0.0);
  }
}

TEST(Lottery, AllOnesMaskIsDenseTraining) {
  auto fx = small_task(15);
  const auto cfg = small_config(Dense{}, 0.0, 15);
  const auto model = init_model(fx.model.layers, 15);
  const auto dense = run_training(model, fx.data.train, nullptr, cfg);
  const auto w = lottery_retrain(fx.model.layers, Mask::ones(model.params.layout), 15, fx.data.train, cfg);
  for (std::size_t i = 0; i < w.size(); ++i) EXPECT_NEAR(w[i], dense.final_dense[i], 1e-12);
}

TEST(StepsPerEpoch, CeilDivision) {
  EXPECT_EQ(steps_per_epoch(240, 32), 8);
  EXPECT_EQ(steps_per_epoch(256, 32), 8);
  EXPECT_EQ(steps_per_epoch(1, 32), 1);
}
