#pragma once

// Shared fixtures and straight-line oracles for the unit and acceptance tests.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <vector>

#include "dpf/datasets.hpp"
#include "dpf/nn.hpp"
#include "dpf/trainers.hpp"

namespace dpf::testing {

inline std::vector<LayerSpec> blob_specs(std::size_t d = 20, std::size_t k = 4,
                                         std::vector<std::size_t> hidden = {64, 64}) {
  std::vector<std::size_t> w{d};
  w.insert(w.end(), hidden.begin(), hidden.end());
  w.push_back(k);
  return mlp_specs(w);
}

/// Training config for the desk-scale blobs task: step-decay at 50/75%,
/// cubic ramp ending at 75% of training with one update per epoch.
inline TrainConfig blob_config(Strategy strategy, double sparsity, std::int64_t epochs,
                               std::size_t train_rows, std::uint64_t seed) {
  TrainConfig cfg;
  cfg.strategy = strategy;
  cfg.batch_size = 32;
  cfg.epochs = epochs;
  cfg.seed = seed;
  const auto spe = steps_per_epoch(train_rows, cfg.batch_size);
  cfg.lr = StepDecayLr{0.1, {epochs * spe / 2, epochs * spe * 3 / 4}, 10.0};
  cfg.schedule.initial = 0.0;
  cfg.schedule.final = sparsity;
  cfg.schedule.start_step = 0;
  cfg.schedule.ramp_steps = std::max<std::int64_t>(1, epochs * spe * 3 / 4);
  cfg.schedule.update_every = spe;
  return cfg;
}

/// Mean softmax cross-entropy computed directly from the layer formulas.
inline double reference_loss(const std::vector<LayerSpec>& specs, const std::vector<double>& p,
                             const Batch& batch) {
  double total = 0.0;
  for (std::size_t n = 0; n < batch.rows; ++n) {
    std::vector<double> a(batch.row(n).begin(), batch.row(n).end());
    std::size_t off = 0;
    for (const auto& l : specs) {
      std::vector<double> z(l.out_dim, 0.0);
      for (std::size_t o = 0; o < l.out_dim; ++o) {
        double s = 0.0;
        for (std::size_t i = 0; i < l.in_dim; ++i) s += p[off + o * l.in_dim + i] * a[i];
        z[o] = s + p[off + l.out_dim * l.in_dim + o];
        if (l.activation == Activation::relu) z[o] = std::max(0.0, z[o]);
      }
      off += l.out_dim * l.in_dim + l.out_dim;
      a = std::move(z);
    }
    const double m = *std::max_element(a.begin(), a.end());
    double se = 0.0;
    for (double v : a) se += std::exp(v - m);
    total += (m + std::log(se)) - a[static_cast<std::size_t>(batch.labels[n])];
  }
  return total / static_cast<double>(batch.rows);
}

/// Central differences of reference_loss.
inline std::vector<double> reference_fd(const std::vector<LayerSpec>& specs, std::vector<double> p,
                                        const Batch& batch, double h) {
  std::vector<double> g(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double orig = p[i];
    p[i] = orig + h;
    const double up = reference_loss(specs, p, batch);
    p[i] = orig - h;
    const double down = reference_loss(specs, p, batch);
    p[i] = orig;
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

/// max_i |a_i - b_i| / (1 + |b_i|)
inline double max_rel_error(const std::vector<double>& a, const std::vector<double>& b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    worst = std::max(worst, std::abs(a[i] - b[i]) / (1.0 + std::abs(b[i])));
  }
  return worst;
}

/// For each epoch e, the fraction of prunable coordinates whose bit differs
/// between some consecutive pair of masks recorded in an epoch later than e.
inline std::vector<double> brute_force_last_change(const MaskHistory& h, std::int64_t epochs,
                                                   std::int64_t spe) {
  const auto entries = h.entries();
  const auto& layout = *entries.front().mask.layout();
  std::vector<double> curve(static_cast<std::size_t>(epochs), 0.0);
  for (std::int64_t e = 0; e < epochs; ++e) {
    std::size_t count = 0;
    for (std::size_t i = 0; i < layout.dim(); ++i) {
      if (!layout.prunable(i)) continue;
      bool changed = false;
      for (std::size_t k = 1; k < entries.size() && !changed; ++k) {
        const auto ev = std::min<std::int64_t>(entries[k].step / spe, epochs - 1);
        if (ev > e && entries[k - 1].mask.bits()[i] != entries[k].mask.bits()[i]) changed = true;
      }
      count += changed ? 1 : 0;
    }
    curve[static_cast<std::size_t>(e)] =
        static_cast<double>(count) / static_cast<double>(layout.num_prunable());
  }
  return curve;
}

}  // namespace dpf::testing
