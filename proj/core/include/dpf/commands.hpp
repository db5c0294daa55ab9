#pragma once

// Subcommand entry points behind the dpflab tool. Each returns a process exit
// code: 0 success, 1 configuration or input error, 2 numerical failure.

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace dpf {

struct CommandOptions {
  std::string config;  // --config
  std::string out;     // --out, overrides output_dir
  std::optional<std::uint64_t> seed;  // --seed, overrides the config seed
  std::string grid;    // --grid
  std::string from;    // run directory for report / retrain-ticket / finetune
};

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 1;
inline constexpr int kExitNumerical = 2;

/// Writes {out}/{run_id}/: metrics.csv, metrics.json, masks.bin, dense.ckpt,
/// sparse.ckpt, summary.json, config.json, last_change.csv. Outputs are built
/// in a scratch directory and only moved into place on success.
int cmd_train(const CommandOptions& opts);

/// Writes {out}/{run_id}/runs.json and summary.json (with the fitted log-log slope).
int cmd_convexlab(const CommandOptions& opts);

/// Aggregates every {from}/*/summary.json into {out or from}/report.csv and
/// last_change.csv. Exit 1 when no run is found.
int cmd_report(const CommandOptions& opts);

/// Retrains the mask of the run in `from` from a fresh initialization.
int cmd_retrain_ticket(const CommandOptions& opts);

/// Fine-tunes the sparse model of the run in `from` with its mask fixed.
int cmd_finetune(const CommandOptions& opts);

/// Worker count for grid mode: DPFLAB_THREADS if set and positive, else the
/// hardware concurrency (at least 1).
std::size_t grid_threads();

/// Runs jobs [0, n) on up to `threads` workers; returns the per-job results in order.
std::vector<int> run_pool(std::size_t n, std::size_t threads, const std::function<int(std::size_t)>& job);

/// Mean and sample standard deviation (0 for a single value).
std::pair<double, double> mean_std(const std::vector<double>& values);

}  // namespace dpf
