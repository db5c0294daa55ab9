#include "dpf/commands.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <mutex>
#include <thread>

#include <json.hpp>

#include "dpf/checkpoint.hpp"
#include "dpf/config.hpp"
#include "dpf/convex_lab.hpp"
#include "dpf/error.hpp"
#include "dpf/log.hpp"
#include "dpf/metrics.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace dpf {
namespace {

std::mutex g_err_mutex;

void report_error(const std::string& message) {
  std::lock_guard<std::mutex> lock(g_err_mutex);
  std::cerr << "dpflab: " << message << '\n';
}

template <class F>
int guarded(F&& body) {
  try {
    return body();
  } catch (const NumericalFailure& e) {
    report_error(std::string("numerical failure: ") + e.what());
    return kExitNumerical;
  } catch (const ConfigError& e) {
    report_error(std::string("config error: ") + e.what());
    return kExitConfig;
  } catch (const FormatError& e) {
    report_error(std::string("input error: ") + e.what());
    return kExitConfig;
  } catch (const std::exception& e) {
    report_error(e.what());
    return kExitConfig;
  }
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << text;
  out.flush();
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

std::string fmt17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

json number_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

// Scratch directory next to the destination; moved into place by commit().
class StagedDir {
 public:
  explicit StagedDir(fs::path final_dir)
      : final_(std::move(final_dir)),
        scratch_(final_.parent_path() / ("." + final_.filename().string() + ".partial")) {
    fs::create_directories(final_.parent_path());
    fs::remove_all(scratch_);
    fs::create_directories(scratch_);
  }
  StagedDir(const StagedDir&) = delete;
  StagedDir& operator=(const StagedDir&) = delete;
  ~StagedDir() {
    if (!committed_) {
      std::error_code ec;
      fs::remove_all(scratch_, ec);
    }
  }

  const fs::path& path() const { return scratch_; }

  void commit() {
    fs::remove_all(final_);
    fs::rename(scratch_, final_);
    committed_ = true;
  }

 private:
  fs::path final_;
  fs::path scratch_;
  bool committed_ = false;
};

std::size_t infer_classes(const Split& split, std::size_t configured, const std::string& kind) {
  if (kind != "idx") return configured;
  int top = 0;
  for (int y : split.train.labels) top = std::max(top, y);
  for (int y : split.test.labels) top = std::max(top, y);
  return std::max<std::size_t>(2, static_cast<std::size_t>(top) + 1);
}

struct Prepared {
  ExperimentConfig cfg;
  Split data;
  std::vector<LayerSpec> specs;
  TrainConfig train;
};

Prepared prepare(const std::string& config_text, const CommandOptions& opts) {
  Prepared p;
  p.cfg = parse_experiment_config(config_text);
  if (opts.seed) p.cfg.seed = *opts.seed;
  if (!opts.out.empty()) p.cfg.output_dir = opts.out;
  p.data = load_data(p.cfg.data, p.cfg.seed);
  if (p.data.train.empty() || p.data.test.empty()) throw ConfigError("dataset split is empty");
  if (p.data.train.cols != p.data.test.cols) throw ConfigError("train/test feature widths differ");
  p.specs = model_specs(p.cfg, p.data.train.cols,
                        infer_classes(p.data, p.cfg.data.classes, p.cfg.data.kind));
  p.train = to_train_config(p.cfg, p.data.train.rows);
  try {
    p.train.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  return p;
}

json eval_json(const Evaluation& e) { return {{"loss", number_or_null(e.loss)}, {"accuracy", e.accuracy}}; }

int train_one(const std::string& config_text, const CommandOptions& opts) {
  auto p = prepare(config_text, opts);
  const auto& cfg = p.cfg;
  const auto model = init_model(p.specs, cfg.seed);

  std::optional<TrainState> resume;
  std::int64_t start_epoch = 0;
  if (!cfg.resume_from.empty()) {
    const auto ckpt = load_checkpoint(cfg.resume_from);
    if (ckpt.layers != p.specs) throw ConfigError("checkpoint model does not match the config");
    if (ckpt.rng_seed != cfg.seed) throw ConfigError("checkpoint seed does not match the config seed");
    if (ckpt.rng_epoch > static_cast<std::uint64_t>(cfg.epochs)) {
      throw ConfigError("checkpoint is past the configured number of epochs");
    }
    resume = restore_state(ckpt);
    start_epoch = static_cast<std::int64_t>(ckpt.rng_epoch);
  }

  StagedDir dir(fs::path(cfg.output_dir) / cfg.run_id);
  RunOptions ro;
  ro.resume = resume ? &*resume : nullptr;
  ro.start_epoch = start_epoch;
  if (cfg.checkpoint_every > 0) {
    ro.on_epoch_end = [&](const TrainState& state, std::int64_t done) {
      if (done % cfg.checkpoint_every != 0) return;
      save_checkpoint(make_checkpoint(p.specs, state, cfg.seed, static_cast<std::uint64_t>(done)),
                      dir.path() / ("epoch_" + std::to_string(done) + ".ckpt"));
    };
  }
  log_info("training " + cfg.run_id + " (" + cfg.strategy + ")");
  const auto result = run_training(model, p.data.train, &p.data.test, p.train, ro);

  emit(result.records, dir.path() / "metrics.csv", RecordFormat::csv);
  emit(result.records, dir.path() / "metrics.json", RecordFormat::json);
  write_mask_history(result.history, dir.path() / "masks.bin");

  const auto final_epoch = static_cast<std::uint64_t>(cfg.epochs);
  save_checkpoint(make_checkpoint(p.specs, result.state, cfg.seed, final_epoch),
                  dir.path() / "dense.ckpt");
  auto sparse_state = TrainState::start(result.final_sparse, result.mask);
  sparse_state.t = result.state.t;
  save_checkpoint(make_checkpoint(p.specs, sparse_state, cfg.seed, final_epoch),
                  dir.path() / "sparse.ckpt");

  if (!result.history.empty()) {
    const auto curve = last_change_curve(result.history, cfg.epochs, result.steps_per_epoch);
    std::string csv = "epoch,fraction\n";
    for (std::size_t e = 0; e < curve.size(); ++e) csv += std::to_string(e) + "," + fmt17(curve[e]) + "\n";
    write_file(dir.path() / "last_change.csv", csv);
  }

  const auto sparse_train = evaluate(model, result.final_sparse, p.data.train);
  const auto sparse_test = evaluate(model, result.final_sparse, p.data.test);
  const auto dense_test = evaluate(model, result.final_dense, p.data.test);
  const auto& layout = *model.params.layout;
  std::size_t nonzero = 0;
  for (std::size_t i = 0; i < layout.dim(); ++i) {
    if (layout.prunable(i) && result.final_sparse[i] != 0.0) ++nonzero;
  }
  const double target = std::holds_alternative<Dense>(p.train.strategy) ? 0.0 : cfg.sparsity_final;
  json summary = {
      {"kind", "train"},
      {"run_id", cfg.run_id},
      {"strategy", cfg.strategy},
      {"seed", cfg.seed},
      {"epochs", cfg.epochs},
      {"steps", result.state.t},
      {"steps_per_epoch", result.steps_per_epoch},
      {"train_loss", number_or_null(sparse_train.loss)},
      {"train_acc", sparse_train.accuracy},
      {"test_loss", number_or_null(sparse_test.loss)},
      {"test_acc", sparse_test.accuracy},
      {"dense", eval_json(dense_test)},
      {"sparsity_target", target},
      {"sparsity_achieved", result.mask.sparsity()},
      {"num_params", layout.dim()},
      {"num_prunable", layout.num_prunable()},
      {"num_nonzero_prunable", nonzero},
      {"mask_updates", result.history.size()},
      {"max_grad_norm", result.max_grad_norm},
  };
  write_file(dir.path() / "summary.json", summary.dump(2) + "\n");
  write_file(dir.path() / "config.json", to_canonical_json(cfg));
  dir.commit();
  return kExitOk;
}

struct LabRun {
  std::int64_t horizon;
  std::uint64_t seed;
};

std::vector<double> medians_by_horizon(const std::vector<std::int64_t>& horizons,
                                       const std::vector<LabRun>& runs,
                                       const std::vector<double>& values) {
  std::vector<double> out;
  for (auto T : horizons) {
    std::vector<double> v;
    for (std::size_t i = 0; i < runs.size(); ++i) {
      if (runs[i].horizon == T) v.push_back(values[i]);
    }
    out.push_back(lab::median(v));
  }
  return out;
}

json slope_json(const std::vector<std::int64_t>& horizons, const std::vector<double>& medians) {
  std::vector<double> hs(horizons.begin(), horizons.end());
  const auto s = lab::loglog_slope(hs, medians);
  return s && std::isfinite(*s) ? json(*s) : json(nullptr);
}

int convexlab_one(const std::string& config_text, const CommandOptions& opts) {
  auto cfg = parse_lab_config(config_text);
  if (opts.seed) cfg.seed = *opts.seed;
  if (!opts.out.empty()) cfg.output_dir = opts.out;

  std::vector<LabRun> runs;
  for (auto T : cfg.horizons) {
    for (std::size_t k = 0; k < cfg.seeds; ++k) runs.push_back({T, cfg.seed + k});
  }
  std::vector<std::uint64_t> seeds;
  for (std::size_t k = 0; k < cfg.seeds; ++k) seeds.push_back(cfg.seed + k);

  lab::LabOptions base;
  base.reparam_period = cfg.reparam_period;
  base.pilot_steps = cfg.pilot_steps;
  base.trace_stride = std::numeric_limits<std::int64_t>::max();

  auto quadratic = [&](std::uint64_t seed) {
    auto problem = lab::make_quadratic(cfg.dim, cfg.mu, cfg.smoothness, seed, cfg.noise, cfg.rotate);
    return problem;
  };

  json records = json::array();
  json summary = {{"experiment", cfg.experiment},
                  {"sparsity", cfg.sparsity},
                  {"horizons", cfg.horizons}};

  if (cfg.experiment == "one_shot") {
    std::vector<lab::OneShotComparison> out(runs.size());
    run_pool(runs.size(), grid_threads(), [&](std::size_t i) {
      out[i] = lab::one_shot_compare(quadratic(runs[i].seed), cfg.sparsity, runs[i].horizon,
                                     runs[i].seed, base);
      return 0;
    });
    std::vector<double> dpf, one;
    for (std::size_t i = 0; i < runs.size(); ++i) {
      const auto& r = out[i];
      records.push_back({{"T", runs[i].horizon}, {"seed", runs[i].seed}, {"sparsity", cfg.sparsity},
                         {"arm", "one_shot"}, {"result", number_or_null(r.one_shot_value)},
                         {"pruning_term", number_or_null(r.one_shot_pruning_term)},
                         {"delta", number_or_null(r.one_shot_delta)}});
      records.push_back({{"T", runs[i].horizon}, {"seed", runs[i].seed}, {"sparsity", cfg.sparsity},
                         {"arm", "dpf"}, {"result", number_or_null(r.dpf_value)},
                         {"pruning_term", number_or_null(r.dpf_pruning_term)},
                         {"delta", number_or_null(r.dpf_mean_delta)}});
      one.push_back(r.one_shot_value);
      dpf.push_back(r.dpf_value);
    }
    const auto m_one = medians_by_horizon(cfg.horizons, runs, one);
    const auto m_dpf = medians_by_horizon(cfg.horizons, runs, dpf);
    summary["seeds"] = {{"one_shot", seeds}, {"dpf", seeds}};
    summary["median_result"] = {{"one_shot", m_one}, {"dpf", m_dpf}};
    summary["slope"] = {{"one_shot", slope_json(cfg.horizons, m_one)},
                        {"dpf", slope_json(cfg.horizons, m_dpf)}};
  } else {
    std::vector<lab::TheoremRunResult> out(runs.size());
    run_pool(runs.size(), grid_threads(), [&](std::size_t i) {
      auto opts_i = base;
      if (cfg.experiment == "theorem1") {
        auto problem = quadratic(runs[i].seed);
        if (cfg.aligned) {
          const std::size_t half = (cfg.dim + 1) / 2;
          std::vector<double> xs = problem.x_star;
          std::vector<std::uint8_t> keep(cfg.dim, 0);
          for (std::size_t j = 0; j < cfg.dim; ++j) {
            if (j < half) keep[j] = 1; else xs[j] = 0.0;
          }
          problem = lab::with_minimizer(std::move(problem), std::move(xs));
          opts_i.fixed_mask = keep;
        }
        out[i] = lab::run_theorem1(problem, cfg.sparsity, runs[i].horizon, runs[i].seed, opts_i);
      } else {
        const auto toy = lab::make_double_well(cfg.dim, cfg.coupling, cfg.noise, cfg.radius);
        out[i] = lab::run_theorem2(toy, cfg.sparsity, runs[i].horizon, runs[i].seed, opts_i);
      }
      return 0;
    });
    std::vector<double> values;
    for (std::size_t i = 0; i < runs.size(); ++i) {
      const auto& r = out[i];
      // Theorem 1 reports the sampled iterate, theorem 2 the uniform average.
      const double result = cfg.experiment == "theorem1" ? r.sampled_value : r.expected_value;
      values.push_back(result);
      records.push_back({{"T", runs[i].horizon}, {"seed", runs[i].seed}, {"sparsity", cfg.sparsity},
                         {"result", number_or_null(result)},
                         {"pruning_term", number_or_null(r.avg_pruning_term)},
                         {"sampled_index", r.sampled_index},
                         {"expected_value", number_or_null(r.expected_value)},
                         {"final_value", number_or_null(r.final_value)},
                         {"learning_rate", r.learning_rate},
                         {"gradient_bound", number_or_null(r.max_grad_norm)},
                         {"diverged", r.diverged}});
    }
    const auto med = medians_by_horizon(cfg.horizons, runs, values);
    summary["seeds"] = seeds;
    summary["median_result"] = med;
    summary["slope"] = slope_json(cfg.horizons, med);
  }

  StagedDir dir(fs::path(cfg.output_dir) / cfg.run_id);
  write_file(dir.path() / "runs.json", records.dump(2) + "\n");
  write_file(dir.path() / "summary.json", summary.dump(2) + "\n");
  write_file(dir.path() / "config.json", to_canonical_json(cfg));
  dir.commit();
  return kExitOk;
}

template <class One>
int dispatch(const CommandOptions& opts, One&& one) {
  return guarded([&] {
    const std::string base = opts.config.empty() ? std::string() : read_text(opts.config);
    if (opts.grid.empty()) {
      if (opts.config.empty()) throw ConfigError("--config is required");
      return one(base, opts);
    }
    const auto configs = expand_grid(read_text(opts.grid), base);
    const auto codes = run_pool(configs.size(), grid_threads(), [&](std::size_t i) {
      return guarded([&] { return one(configs[i], opts); });
    });
    return *std::max_element(codes.begin(), codes.end());
  });
}

ExperimentConfig run_config(const fs::path& run_dir, const CommandOptions& opts) {
  const fs::path path = opts.config.empty() ? run_dir / "config.json" : fs::path(opts.config);
  auto cfg = parse_experiment_config(read_text(path));
  if (opts.seed) cfg.seed = *opts.seed;
  return cfg;
}

}  // namespace

std::size_t grid_threads() {
  if (const char* env = std::getenv("DPFLAB_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end != env && *end == '\0' && v > 0) return static_cast<std::size_t>(v);
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

std::vector<int> run_pool(std::size_t n, std::size_t threads,
                          const std::function<int(std::size_t)>& job) {
  std::vector<int> codes(n, 0);
  std::atomic<std::size_t> next{0};
  std::mutex err_mutex;
  std::exception_ptr error;
  auto worker = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        codes[i] = job(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(err_mutex);
        if (!error) error = std::current_exception();
      }
    }
  };
  const std::size_t count = std::min(std::max<std::size_t>(threads, 1), std::max<std::size_t>(n, 1));
  if (count <= 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < count; ++t) pool.emplace_back(worker);
  }
  if (error) std::rethrow_exception(error);
  return codes;
}

std::pair<double, double> mean_std(const std::vector<double>& values) {
  if (values.empty()) return {0.0, 0.0};
  const double n = static_cast<double>(values.size());
  double mean = 0.0;
  for (double v : values) mean += v;
  mean /= n;
  if (values.size() == 1) return {mean, 0.0};
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  return {mean, std::sqrt(ss / (n - 1.0))};
}

int cmd_train(const CommandOptions& opts) { return dispatch(opts, train_one); }

int cmd_convexlab(const CommandOptions& opts) { return dispatch(opts, convexlab_one); }

int cmd_report(const CommandOptions& opts) {
  return guarded([&] {
    const fs::path root = opts.from;
    if (root.empty() || !fs::is_directory(root)) {
      throw ConfigError("report needs an existing run directory, got '" + root.string() + "'");
    }
    std::vector<fs::path> dirs;
    for (const auto& entry : fs::directory_iterator(root)) {
      if (entry.is_directory() && fs::exists(entry.path() / "summary.json")) dirs.push_back(entry.path());
    }
    std::sort(dirs.begin(), dirs.end());

    struct Group {
      std::vector<double> test_acc, train_acc, sparsity;
      std::map<std::size_t, std::vector<double>> curve;
    };
    std::map<std::string, Group> groups;
    for (const auto& d : dirs) {
      json s;
      try {
        s = json::parse(read_text(d / "summary.json"));
      } catch (const json::parse_error&) {
        log_warning("report: skipping unreadable " + (d / "summary.json").string());
        continue;
      }
      if (s.value("kind", "") != "train") continue;
      auto& g = groups[s.value("strategy", "unknown")];
      g.test_acc.push_back(s.value("test_acc", 0.0));
      g.train_acc.push_back(s.value("train_acc", 0.0));
      g.sparsity.push_back(s.value("sparsity_achieved", 0.0));
      if (fs::exists(d / "last_change.csv")) {
        std::ifstream in(d / "last_change.csv");
        std::string line;
        std::getline(in, line);
        while (std::getline(in, line)) {
          const auto comma = line.find(',');
          if (comma == std::string::npos) continue;
          g.curve[std::stoul(line.substr(0, comma))].push_back(std::stod(line.substr(comma + 1)));
        }
      }
    }
    if (groups.empty()) throw ConfigError("no training runs found under " + root.string());

    std::string table = "strategy,runs,test_acc_mean,test_acc_std,train_acc_mean,train_acc_std,sparsity_mean\n";
    std::string curves = "strategy,epoch,fraction_mean,runs\n";
    for (const auto& [name, g] : groups) {
      const auto [te_m, te_s] = mean_std(g.test_acc);
      const auto [tr_m, tr_s] = mean_std(g.train_acc);
      const auto sp = mean_std(g.sparsity).first;
      table += name + "," + std::to_string(g.test_acc.size()) + "," + fmt17(te_m) + "," + fmt17(te_s) +
               "," + fmt17(tr_m) + "," + fmt17(tr_s) + "," + fmt17(sp) + "\n";
      for (const auto& [epoch, vals] : g.curve) {
        curves += name + "," + std::to_string(epoch) + "," + fmt17(mean_std(vals).first) + "," +
                  std::to_string(vals.size()) + "\n";
      }
    }
    const fs::path out = opts.out.empty() ? root : fs::path(opts.out);
    fs::create_directories(out);
    write_file(out / "report.csv", table);
    write_file(out / "last_change.csv", curves);
    return kExitOk;
  });
}

int cmd_retrain_ticket(const CommandOptions& opts) {
  return guarded([&] {
    if (opts.from.empty()) throw ConfigError("retrain-ticket needs --from RUN_DIR");
    const fs::path run_dir = opts.from;
    const auto cfg = run_config(run_dir, opts);
    const auto ckpt = load_checkpoint(run_dir / "sparse.ckpt");
    auto p = prepare(to_canonical_json(cfg), CommandOptions{});
    if (ckpt.layers != p.specs) throw ConfigError("sparse.ckpt does not match the run config");
    const auto state = restore_state(ckpt);
    auto train_cfg = p.train;
    train_cfg.strategy = BeforeTraining{};
    const auto ticket = lottery_retrain(p.specs, state.mask, cfg.seed, p.data.train, train_cfg);
    const auto model = init_model(p.specs, cfg.seed);
    const auto ticket_test = evaluate(model, ticket, p.data.test);
    const auto ticket_train = evaluate(model, ticket, p.data.train);
    const auto original = evaluate(model, state.x_hat, p.data.test);

    const fs::path out = opts.out.empty() ? run_dir : fs::path(opts.out);
    fs::create_directories(out);
    auto ticket_state = TrainState::start(ticket, state.mask);
    ticket_state.t = state.t;
    save_checkpoint(make_checkpoint(p.specs, ticket_state, cfg.seed, static_cast<std::uint64_t>(cfg.epochs)),
                    out / "ticket.ckpt");
    json summary = {{"kind", "ticket"},
                    {"run_id", cfg.run_id},
                    {"init_seed", cfg.seed},
                    {"sparsity", state.mask.sparsity()},
                    {"original_test_acc", original.accuracy},
                    {"ticket_test_acc", ticket_test.accuracy},
                    {"ticket_train_acc", ticket_train.accuracy},
                    {"ticket_test_loss", number_or_null(ticket_test.loss)}};
    write_file(out / "ticket_summary.json", summary.dump(2) + "\n");
    return kExitOk;
  });
}

int cmd_finetune(const CommandOptions& opts) {
  return guarded([&] {
    if (opts.from.empty()) throw ConfigError("finetune needs --from RUN_DIR");
    const fs::path run_dir = opts.from;
    const auto cfg = run_config(run_dir, opts);
    if (cfg.finetune_epochs < 1) throw ConfigError("finetune.epochs must be >= 1 for finetune");
    const auto ckpt = load_checkpoint(run_dir / "sparse.ckpt");
    auto p = prepare(to_canonical_json(cfg), CommandOptions{});
    if (ckpt.layers != p.specs) throw ConfigError("sparse.ckpt does not match the run config");
    const auto state = restore_state(ckpt);
    const auto model = init_model(p.specs, cfg.seed);
    const auto tuned = finetune(model, state.x_hat, state.mask, p.data.train, p.train);
    const auto before = evaluate(model, state.x_hat, p.data.test);
    const auto after = evaluate(model, tuned, p.data.test);
    const auto after_train = evaluate(model, tuned, p.data.train);

    const fs::path out = opts.out.empty() ? run_dir : fs::path(opts.out);
    fs::create_directories(out);
    auto tuned_state = TrainState::start(tuned, state.mask);
    tuned_state.t = state.t;
    save_checkpoint(make_checkpoint(p.specs, tuned_state, cfg.seed, static_cast<std::uint64_t>(cfg.epochs)),
                    out / "finetuned.ckpt");
    json summary = {{"kind", "finetune"},
                    {"run_id", cfg.run_id},
                    {"finetune_epochs", cfg.finetune_epochs},
                    {"sparsity", state.mask.sparsity()},
                    {"before_test_acc", before.accuracy},
                    {"after_test_acc", after.accuracy},
                    {"after_train_acc", after_train.accuracy}};
    write_file(out / "finetune_summary.json", summary.dump(2) + "\n");
    return kExitOk;
  });
}

}  // namespace dpf
