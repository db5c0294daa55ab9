// dpflab: train pruned models, run the convex lab, aggregate results.

#include <CLI11.hpp>

#include "dpf/commands.hpp"
#include "dpf/log.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Dynamic pruning with feedback: training and convergence experiments"};
  app.require_subcommand(1);
  bool verbose = false;
  app.add_flag("-v,--verbose", verbose, "Log progress to stderr");

  dpf::CommandOptions opts;
  std::uint64_t seed = 0;

  auto add_common = [&](CLI::App* sub, bool needs_config) {
    auto* c = sub->add_option("--config", opts.config, "Flat JSON config file");
    if (needs_config) c->check(CLI::ExistingFile);
    sub->add_option("--out", opts.out, "Output directory (overrides output_dir)");
    sub->add_option("--seed", seed, "Seed (overrides the config)");
    sub->add_option("--grid", opts.grid, "JSON array of config overlays, run in a worker pool")
        ->check(CLI::ExistingFile);
  };

  auto* train = app.add_subcommand("train", "Train one run (or a grid) from a config");
  add_common(train, true);
  auto* lab = app.add_subcommand("convexlab", "Run the synthetic convergence experiments");
  add_common(lab, true);
  auto* report = app.add_subcommand("report", "Aggregate run summaries in a directory");
  report->add_option("dir", opts.from, "Directory containing run subdirectories")->required();
  report->add_option("--out", opts.out, "Where to write report.csv (default: dir)");
  auto* ticket = app.add_subcommand("retrain-ticket", "Retrain a run's mask from initialization");
  auto* finetune = app.add_subcommand("finetune", "Fine-tune a run's sparse model with its mask fixed");
  for (auto* sub : {ticket, finetune}) {
    sub->add_option("--from", opts.from, "Run directory")->required()->check(CLI::ExistingDirectory);
    sub->add_option("--config", opts.config, "Config (default: the run's config.json)")
        ->check(CLI::ExistingFile);
    sub->add_option("--out", opts.out, "Output directory (default: the run directory)");
    sub->add_option("--seed", seed, "Seed (overrides the config)");
  }

  CLI11_PARSE(app, argc, argv);
  if (verbose) dpf::set_log_level(dpf::LogLevel::info);
  if (app.get_subcommands().front()->count("--seed") > 0) opts.seed = seed;

  if (*train) return dpf::cmd_train(opts);
  if (*lab) return dpf::cmd_convexlab(opts);
  if (*report) return dpf::cmd_report(opts);
  if (*ticket) return dpf::cmd_retrain_ticket(opts);
  return dpf::cmd_finetune(opts);
}
