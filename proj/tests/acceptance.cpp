// Acceptance suite: one PASS/FAIL line per criterion.
//   acceptance            run all criteria
//   acceptance --criterion N

#include <chrono>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>

#include "dpf/checkpoint.hpp"
#include "dpf/commands.hpp"
#include "dpf/convex_lab.hpp"
#include "dpf/metrics.hpp"
#include "dpf/pruning.hpp"
#include "support.hpp"

namespace fs = std::filesystem;
using namespace dpf;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof(buf), f, args...);
  return buf;
}

std::string join(const std::vector<double>& v) {
  std::string s = "[";
  for (std::size_t i = 0; i < v.size(); ++i) s += fmt(i ? ", %.4g" : "%.4g", v[i]);
  return s + "]";
}

bool same_bits(const std::vector<double>& a, const std::vector<double>& b) {
  return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

// Theorem-harness problem: d = 50, kappa = 100, unit gradient noise, eigenbasis axis-aligned.
lab::QuadraticProblem thm_problem(std::uint64_t seed) {
  return lab::make_quadratic(50, 0.01, 1.0, seed, 1.0, false);
}

Outcome c1_error_feedback() {
  const auto split = make_blobs(4, 20, 1000, 0.5, 11);
  const auto model = init_model(testing::blob_specs(), 11);
  auto cfg = testing::blob_config(Dpf{}, 0.9, 40, split.train.rows, 11);
  cfg.weight_decay = 1e-4;
  const auto spe = steps_per_epoch(split.train.rows, cfg.batch_size);
  auto state = TrainState::start(model.params, Mask::ones(model.params.layout));
  std::size_t mismatches = 0, updates = 0, pruned_steps = 0;
  for (std::int64_t t = 0; t < 1000; ++t) {
    if (mask_update_due(cfg, state.t)) {
      state = maybe_update_mask(std::move(state), model, cfg);
      ++updates;
    }
    if (state.mask.num_pruned() > 0) ++pruned_steps;
    std::vector<std::size_t> rows;
    for (std::size_t k = 0; k < cfg.batch_size; ++k) {
      rows.push_back((static_cast<std::size_t>(t % spe) * cfg.batch_size + k * 7 + static_cast<std::size_t>(t)) %
                     split.train.rows);
    }
    const auto batch = select_rows(split.train, rows);
    const double lr = learning_rate(cfg.lr, state.t);
    auto a = dpf_step(state, model, batch, lr, cfg);
    auto b = dpf_step_error_feedback(state, model, batch, lr, cfg);
    if (!same_bits(a.x.values, b.x.values) || !same_bits(a.v.values, b.v.values)) ++mismatches;
    state = std::move(a);
  }
  return {mismatches == 0 && pruned_steps > 900,
          fmt("1000 steps, %zu mask updates, %zu steps with pruning, %zu mismatching steps",
              updates, pruned_steps, mismatches)};
}

Outcome c2_gradient_oracle() {
  Rng rng(20240601);
  std::uniform_int_distribution<std::size_t> width(2, 9), depth(1, 3), rows(1, 8);
  std::normal_distribution<double> normal(0.0, 1.0);
  double worst = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<std::size_t> w{width(rng)};
    const auto hidden = depth(rng);
    for (std::size_t i = 0; i < hidden; ++i) w.push_back(width(rng));
    w.push_back(std::max<std::size_t>(2, width(rng) / 2));
    // Nonzero biases keep ReLU pre-activations off the kink at 0.
    auto model = init_model(mlp_specs(w), 1000 + trial);
    for (auto& v : model.params.values) v += 0.1 * normal(rng);
    const std::size_t n = rows(rng);
    std::vector<double> x(n * w.front());
    for (auto& v : x) v = normal(rng);
    std::vector<int> y(n);
    for (auto& v : y) v = static_cast<int>(rng() % w.back());
    const auto batch = make_batch(w.front(), x, y);
    auto fwd = forward(model, model.params, batch);
    const auto bp = backward(model, model.params, batch, fwd.cache);
    const auto fd = testing::reference_fd(model.layers, model.params.values, batch, 1e-5);
    worst = std::max(worst, testing::max_rel_error(bp.values, fd));
  }
  return {worst <= 1e-6, fmt("20 random pairs, max relative error %.3g (limit 1e-6)", worst)};
}

Outcome c3_theorem1_rate() {
  const std::vector<std::int64_t> horizons{100, 1000, 10000, 100000};
  lab::LabOptions opt;
  opt.trace_stride = 1 << 30;
  std::vector<double> med;
  int diverged = 0;
  for (auto T : horizons) {
    std::vector<double> v;
    for (std::uint64_t s = 0; s < 10; ++s) {
      const auto r = lab::run_theorem1(thm_problem(s), 0.0, T, s, opt);
      v.push_back(r.sampled_value);
      diverged += r.diverged ? 1 : 0;
    }
    med.push_back(lab::median(v));
  }
  const std::vector<double> hs(horizons.begin(), horizons.end());
  const auto slope = lab::loglog_slope(hs, med);
  const bool ok = slope && *slope >= -1.3 && *slope <= -0.7;
  return {ok, fmt("median sampled suboptimality %s, slope %s (want [-1.3, -0.7]), %d runs flagged divergent",
                  join(med).c_str(), slope ? fmt("%.3f", *slope).c_str() : "undefined", diverged)};
}

Outcome c4_theorem1_neighborhood() {
  lab::LabOptions opt;
  opt.trace_stride = 1 << 30;
  std::vector<double> v4, v5, term5;
  for (std::uint64_t s = 0; s < 10; ++s) {
    const auto p = thm_problem(s);
    v4.push_back(lab::run_theorem1(p, 0.5, 10000, s, opt).sampled_value);
    const auto r = lab::run_theorem1(p, 0.5, 100000, s, opt);
    v5.push_back(r.sampled_value);
    term5.push_back(p.smoothness * r.avg_pruning_term);
  }
  const double m4 = lab::median(v4), m5 = lab::median(v5), mt = lab::median(term5);
  const bool ok = m5 >= 0.5 * m4 && m5 >= 0.01 * mt;
  return {ok, fmt("median suboptimality T=1e4: %.4g, T=1e5: %.4g (ratio %.3f, want >= 0.5); "
                  "L*avg pruning term %.4g (want suboptimality >= %.4g)",
                  m4, m5, m5 / m4, mt, 0.01 * mt)};
}

Outcome c5_theorem2_rate() {
  const auto toy = lab::make_double_well(20, 0.05, 0.5);
  const std::vector<std::int64_t> horizons{100, 1000, 10000};
  lab::LabOptions opt;
  opt.trace_stride = 1 << 30;
  std::vector<double> med;
  for (auto T : horizons) {
    std::vector<double> v;
    for (std::uint64_t s = 0; s < 10; ++s) v.push_back(lab::run_theorem2(toy, 0.0, T, s, opt).expected_value);
    med.push_back(lab::median(v));
  }
  const std::vector<double> hs(horizons.begin(), horizons.end());
  const auto slope = lab::loglog_slope(hs, med);
  const bool ok = slope && *slope >= -0.8 && *slope <= -0.2;
  return {ok, fmt("median mean squared gradient norm %s, slope %s (want [-0.8, -0.2])", join(med).c_str(),
                  slope ? fmt("%.3f", *slope).c_str() : "undefined")};
}

Outcome c6_dpf_vs_one_shot() {
  std::vector<double> dpf_q, one_q;
  for (std::uint64_t s = 0; s < 20; ++s) {
    const auto r = lab::one_shot_compare(thm_problem(s), 0.9, 10000, s);
    dpf_q.push_back(r.dpf_value);
    one_q.push_back(r.one_shot_value);
  }
  const double mq_dpf = lab::median(dpf_q), mq_one = lab::median(one_q);

  std::vector<double> dpf_acc, one_acc;
  for (std::uint64_t s = 0; s < 5; ++s) {
    const auto split = make_blobs(4, 20, 1000, 0.5, s);
    const auto model = init_model(testing::blob_specs(), s);
    const auto a = run_training(model, split.train, &split.test,
                                testing::blob_config(Dpf{}, 0.9, 40, split.train.rows, s));
    const auto b = run_training(model, split.train, &split.test,
                                testing::blob_config(OneShotFinetune{}, 0.9, 40, split.train.rows, s));
    dpf_acc.push_back(evaluate(model, a.final_sparse, split.test).accuracy);
    one_acc.push_back(evaluate(model, b.final_sparse, split.test).accuracy);
  }
  const double ma_dpf = lab::median(dpf_acc), ma_one = lab::median(one_acc);
  const bool quad_ok = mq_dpf <= mq_one;
  const bool blob_ok = ma_dpf >= ma_one;
  return {quad_ok && blob_ok,
          fmt("quadratic median f(x_hat_T)-f*: DPF %.4g vs one-shot %.4g (%s); "
              "blobs median test accuracy: DPF %.4f vs one-shot %.4f (%s)",
              mq_dpf, mq_one, quad_ok ? "ok" : "violated", ma_dpf, ma_one, blob_ok ? "ok" : "violated")};
}

Outcome c7_schedule() {
  SparsitySchedule s;
  s.initial = 0.0;
  s.final = 0.8;
  s.start_step = 100;
  s.ramp_steps = 1000;
  const double mid = sparsity_at(s, 600);
  bool monotone = true;
  double prev = -1.0;
  for (std::int64_t t = 0; t <= 1500; ++t) {
    const double v = sparsity_at(s, t);
    if (v < prev) monotone = false;
    prev = v;
  }
  const bool ends = sparsity_at(s, 100) == 0.0 && sparsity_at(s, 1100) == 0.8 && sparsity_at(s, 0) == 0.0 &&
                    sparsity_at(s, 5000) == 0.8;
  const bool ok = ends && monotone && std::abs(mid - 0.7) <= 1e-12;
  return {ok, fmt("endpoints exact: %s, monotone over [0, 1500]: %s, midpoint %.17g (want 0.7 within 1e-12)",
                  ends ? "yes" : "no", monotone ? "yes" : "no", mid)};
}

Outcome c8_mask_convergence() {
  std::vector<double> first, last;
  bool curves_ok = true;
  for (std::uint64_t s = 0; s < 5; ++s) {
    const auto split = make_blobs(4, 20, 1000, 0.5, s);
    const auto model = init_model(testing::blob_specs(), s);
    const auto cfg = testing::blob_config(Dpf{}, 0.9, 40, split.train.rows, s);
    const auto r = run_training(model, split.train, &split.test, cfg);
    const auto total = r.state.t;
    const auto entries = r.history.entries();
    double f = 0.0, l = 0.0;
    for (std::size_t k = 1; k < entries.size(); ++k) {
      const auto flips = static_cast<double>(flip_count(entries[k - 1].mask, entries[k].mask));
      if (entries[k].step < total / 4) f += flips;
      if (entries[k].step >= total - total / 4) l += flips;
    }
    first.push_back(f);
    last.push_back(l);
    const auto curve = last_change_curve(r.history, cfg.epochs, r.steps_per_epoch);
    const auto oracle = testing::brute_force_last_change(r.history, cfg.epochs, r.steps_per_epoch);
    if (curve != oracle) curves_ok = false;
    for (std::size_t e = 1; e < curve.size(); ++e) {
      if (curve[e] > curve[e - 1]) curves_ok = false;
    }
  }
  const double mf = lab::median(first), ml = lab::median(last);
  return {ml < mf && curves_ok,
          fmt("median flips first quarter %.0f, last quarter %.0f; last-change curves non-increasing and "
              "equal to brute force: %s",
              mf, ml, curves_ok ? "yes" : "no")};
}

Outcome c9_incremental_monotone() {
  const auto split = make_blobs(4, 20, 1000, 0.5, 9);
  const auto model = init_model(testing::blob_specs(), 9);
  auto cfg = testing::blob_config(Incremental{true}, 0.9, 40, split.train.rows, 9);
  cfg.schedule.update_every = 1;  // move the target at every mask update
  const auto r = run_training(model, split.train, nullptr, cfg);
  const auto entries = r.history.entries();
  std::size_t violations = 0;
  Mask prev = Mask::ones(model.params.layout);
  for (const auto& e : entries) {
    for (std::size_t i = 0; i < prev.size(); ++i) {
      if (e.mask.bits()[i] && !prev.bits()[i]) ++violations;
    }
    prev = e.mask;
  }
  return {r.state.t >= 1000 && violations == 0 && !entries.empty(),
          fmt("%lld steps, %zu mask updates checked, %zu support growths, final sparsity %.4f",
              static_cast<long long>(r.state.t), entries.size(), violations, r.mask.sparsity())};
}

Outcome c10_scaled_sign() {
  Rng rng(77);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_int_distribution<std::size_t> len(1, 200);
  double worst = 0.0;
  for (int k = 0; k < 100; ++k) {
    const auto n = len(rng);
    std::vector<double> v(n);
    for (auto& x : v) x = normal(rng) * std::exp(normal(rng));
    const ParamVector x(Layout::flat(n), v);
    const auto c = compress(ScaledSignCompressor{}, x, nullptr, nullptr, 0.0);
    const double measured = delta_of(x.values, c.params.values);
    double l1 = 0.0, l2 = 0.0;
    for (double e : v) {
      l1 += std::abs(e);
      l2 += e * e;
    }
    const double closed = 1.0 - l1 * l1 / (static_cast<double>(n) * l2);
    worst = std::max(worst, std::abs(measured - closed));
  }
  return {worst <= 1e-12, fmt("100 random vectors, max |delta - closed form| = %.3g (limit 1e-12)", worst)};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Outcome c11_determinism_resume() {
  const auto root = fs::temp_directory_path() / ("dpf_acceptance_" + std::to_string(::getpid()));
  fs::remove_all(root);
  fs::create_directories(root);
  const std::string base =
      R"("seed": 5, "strategy.name": "dpf", "train.epochs": 10, "data.samples": 600,
         "prune.final_sparsity": 0.8, "model.hidden": [32, 32], "optim.weight_decay": 0.0001)";
  auto write_cfg = [&](const std::string& name, const std::string& extra) {
    const auto path = root / (name + ".json");
    std::ofstream(path) << "{\"run_id\": \"" << name << "\", " << base << extra << "}";
    return path.string();
  };
  CommandOptions o;
  o.out = (root / "runs").string();
  o.config = write_cfg("a", "");
  int rc = cmd_train(o);
  o.config = write_cfg("b", "");
  rc |= cmd_train(o);
  o.config = write_cfg("split", R"(, "checkpoint.every": 5)");
  rc |= cmd_train(o);
  o.config = write_cfg("resumed", ", \"checkpoint.resume_from\": \"" +
                                      (root / "runs" / "split" / "epoch_5.ckpt").string() + "\"");
  rc |= cmd_train(o);

  const auto runs = root / "runs";
  const bool metrics_same = rc == 0 && !slurp(runs / "a" / "metrics.csv").empty() &&
                            slurp(runs / "a" / "metrics.csv") == slurp(runs / "b" / "metrics.csv");
  bool resume_same = false;
  if (rc == 0) {
    const auto straight = load_checkpoint(runs / "a" / "dense.ckpt");
    const auto resumed = load_checkpoint(runs / "resumed" / "dense.ckpt");
    resume_same = straight == resumed &&
                  slurp(runs / "a" / "sparse.ckpt") == slurp(runs / "resumed" / "sparse.ckpt");
  }
  fs::remove_all(root);
  return {metrics_same && resume_same,
          fmt("exit codes ok: %s, metrics.csv byte-identical: %s, 5+5 resume bit-identical to 10 epochs: %s",
              rc == 0 ? "yes" : "no", metrics_same ? "yes" : "no", resume_same ? "yes" : "no")};
}

Outcome c12_sampler() {
  const std::int64_t T = 9;
  const std::size_t draws = 1000000;
  auto rng = make_rng(12, stream::sampler);
  std::vector<std::size_t> counts(T + 1, 0);
  for (std::size_t k = 0; k < draws; ++k) ++counts[static_cast<std::size_t>(lab::sample_iterate_thm1(T, rng))];
  double worst = 0.0;
  for (std::int64_t t = 0; t <= T; ++t) {
    const double p = 2.0 * static_cast<double>(t + 1) / static_cast<double>((T + 1) * (T + 2));
    const double se = std::sqrt(static_cast<double>(draws) * p * (1.0 - p));
    worst = std::max(worst, std::abs(static_cast<double>(counts[t]) - static_cast<double>(draws) * p) / se);
  }
  return {worst <= 3.0, fmt("T=9, 1e6 draws, worst bin deviation %.2f standard errors (limit 3)", worst)};
}

struct Criterion {
  int id;
  const char* name;
  double budget_s;
  std::function<Outcome()> run;
};

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> all{
      {1, "error-feedback identity", 10, c1_error_feedback},
      {2, "gradient oracle", 30, c2_gradient_oracle},
      {3, "strongly convex rate", 120, c3_theorem1_rate},
      {4, "strongly convex neighborhood", 120, c4_theorem1_neighborhood},
      {5, "non-convex rate", 120, c5_theorem2_rate},
      {6, "DPF vs one-shot", 300, c6_dpf_vs_one_shot},
      {7, "sparsity schedule", 60, c7_schedule},
      {8, "mask convergence", 300, c8_mask_convergence},
      {9, "incremental monotonicity", 60, c9_incremental_monotone},
      {10, "scaled-sign compressor", 60, c10_scaled_sign},
      {11, "determinism and resume", 120, c11_determinism_resume},
      {12, "iterate sampler", 60, c12_sampler},
  };
  int only = 0;
  for (int i = 1; i < argc; ++i) {
    if (std::strcmp(argv[i], "--criterion") == 0 && i + 1 < argc) {
      only = std::atoi(argv[++i]);
    } else {
      std::cerr << "usage: acceptance [--criterion N]\n";
      return 2;
    }
  }
  int failures = 0, ran = 0;
  for (const auto& c : all) {
    if (only != 0 && c.id != only) continue;
    ++ran;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const bool in_time = secs < c.budget_s;
    const bool pass = o.pass && in_time;
    failures += pass ? 0 : 1;
    std::cout << (pass ? "PASS" : "FAIL") << " criterion " << c.id << " (" << c.name << "): " << o.detail
              << fmt(" [%.2f s, budget %.0f s%s]", secs, c.budget_s, in_time ? "" : ", exceeded") << std::endl;
  }
  if (ran == 0) {
    std::cerr << "no criterion " << only << '\n';
    return 2;
  }
  return failures == 0 ? 0 : 1;
}
