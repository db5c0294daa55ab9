#pragma once

// Experiment configuration: flat JSON objects with dotted keys. Unknown keys
// are rejected. Every parse error is a ConfigError.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "dpf/datasets.hpp"
#include "dpf/trainers.hpp"

namespace dpf {

struct DataConfig {
  std::string kind = "blobs";  // blobs | spirals | idx
  std::size_t classes = 4;
  std::size_t dim = 20;
  std::size_t samples = 1000;
  double noise = 0.5;
  std::optional<std::uint64_t> seed;  // defaults to the run seed
  std::string train_images, train_labels, test_images, test_labels;

  bool operator==(const DataConfig&) const = default;
};

struct ExperimentConfig {
  std::string run_id = "run";
  std::uint64_t seed = 0;
  std::string output_dir = "runs";

  std::string strategy = "dpf";  // dense | before_training | one_shot_ft | incremental | dpf
  std::string saliency = "magnitude";  // magnitude | snip (before_training only)
  bool monotone = false;               // incremental only

  std::string lr_kind = "step_decay";  // constant | step_decay | thm1 | thm2
  double lr = 0.1;
  std::optional<std::vector<double>> lr_milestones;  // in epochs; default 50% and 75%
  double lr_factor = 10.0;
  double lr_mu = 1.0;
  double lr_c = 1.0;
  std::optional<std::int64_t> lr_horizon;  // steps; default the whole run

  double momentum = 0.9;
  double weight_decay = 0.0;
  std::size_t batch_size = 32;
  std::int64_t epochs = 10;
  std::int64_t eval_every = 1;

  std::int64_t reparam_period = 16;
  double sparsity_initial = 0.0;
  double sparsity_final = 0.9;
  double prune_start_epoch = 0.0;
  std::optional<double> prune_end_epoch;  // default 75% of epochs
  double prune_update_epochs = 1.0;
  std::string scope = "global";        // global | layerwise
  std::string criterion = "magnitude";  // magnitude | row_group_l2

  std::int64_t finetune_epochs = 0;
  std::optional<double> finetune_lr;

  std::vector<std::size_t> hidden = {64, 64};
  DataConfig data;

  std::int64_t checkpoint_every = 0;  // epochs; 0 disables intermediate checkpoints
  std::string resume_from;            // checkpoint path, empty for a fresh run

  bool operator==(const ExperimentConfig&) const = default;
};

struct LabConfig {
  std::string run_id = "lab";
  std::uint64_t seed = 0;
  std::string output_dir = "runs";
  std::string experiment = "theorem1";  // theorem1 | theorem2 | one_shot
  std::size_t dim = 50;
  double mu = 0.01;
  double smoothness = 1.0;
  double noise = 1.0;
  bool rotate = false;
  bool aligned = false;  // theorem1: minimizer and mask on the same half of the coordinates
  double coupling = 0.05;
  double radius = 2.0;
  double sparsity = 0.0;
  std::vector<std::int64_t> horizons = {100, 1000, 10000};
  std::size_t seeds = 10;
  std::int64_t reparam_period = 16;
  std::int64_t pilot_steps = 1000;

  bool operator==(const LabConfig&) const = default;
};

std::string read_text(const std::filesystem::path& path);

ExperimentConfig parse_experiment_config(const std::string& json_text);
LabConfig parse_lab_config(const std::string& json_text);

/// Canonical form: every key present, sorted, two-space indented.
std::string to_canonical_json(const ExperimentConfig& cfg);
std::string to_canonical_json(const LabConfig& cfg);

/// A JSON array of flat objects, each overlaid on `base_json` (may be empty).
std::vector<std::string> expand_grid(const std::string& grid_json, const std::string& base_json);

/// Library-level configuration with defaults resolved against the training-set size.
TrainConfig to_train_config(const ExperimentConfig& cfg, std::size_t train_samples);

std::vector<LayerSpec> model_specs(const ExperimentConfig& cfg, std::size_t input_dim,
                                   std::size_t num_classes);

Split load_data(const DataConfig& data, std::uint64_t run_seed);

}  // namespace dpf
