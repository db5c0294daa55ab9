#include "dpf/config.hpp"

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "dpf/error.hpp"
#include "dpf/idx.hpp"

namespace dpf {
namespace {

using nlohmann::json;

static_assert(std::is_same_v<std::size_t, std::uint64_t>, "size_t config fields read as u64");

json parse_object(const std::string& text, const char* what) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string(what) + ": invalid JSON: " + e.what());
  }
  if (!j.is_object()) throw ConfigError(std::string(what) + ": top level must be an object");
  for (const auto& [key, value] : j.items()) {
    if (value.is_object()) {
      throw ConfigError("key '" + key + "': nested objects are not allowed, use dotted keys");
    }
  }
  return j;
}

// Typed access with consumed-key tracking, so leftovers can be reported.
class Reader {
 public:
  explicit Reader(const json& j) : j_(j) {}

  template <class T>
  void get(const std::string& key, T& out) {
    used_.insert(key);
    if (!j_.contains(key)) return;
    read(key, j_.at(key), out);
  }

  template <class T>
  void get(const std::string& key, std::optional<T>& out) {
    used_.insert(key);
    if (!j_.contains(key) || j_.at(key).is_null()) return;
    T v{};
    read(key, j_.at(key), v);
    out = v;
  }

  void finish() const {
    for (const auto& [key, value] : j_.items()) {
      if (!used_.count(key)) throw ConfigError("unknown config key '" + key + "'");
    }
  }

 private:
  static void read(const std::string& key, const json& v, std::string& out) {
    if (!v.is_string()) fail(key, "a string");
    out = v.get<std::string>();
  }
  static void read(const std::string& key, const json& v, bool& out) {
    if (!v.is_boolean()) fail(key, "a boolean");
    out = v.get<bool>();
  }
  static void read(const std::string& key, const json& v, double& out) {
    if (!v.is_number()) fail(key, "a number");
    out = v.get<double>();
    if (!std::isfinite(out)) fail(key, "finite");
  }
  static void read(const std::string& key, const json& v, std::int64_t& out) {
    if (!v.is_number_integer()) fail(key, "an integer");
    out = v.get<std::int64_t>();
  }
  static void read(const std::string& key, const json& v, std::uint64_t& out) {
    if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<std::int64_t>() >= 0)) {
      fail(key, "a non-negative integer");
    }
    out = v.get<std::uint64_t>();
  }
  template <class T>
  static void read(const std::string& key, const json& v, std::vector<T>& out) {
    if (!v.is_array()) fail(key, "an array");
    out.clear();
    for (const auto& e : v) {
      T item{};
      read(key, e, item);
      out.push_back(item);
    }
  }
  [[noreturn]] static void fail(const std::string& key, const char* expected) {
    throw ConfigError("config key '" + key + "' must be " + expected);
  }

  const json& j_;
  std::set<std::string> used_;
};

void require(bool ok, const std::string& message) {
  if (!ok) throw ConfigError(message);
}

void check_one_of(const std::string& key, const std::string& value,
                  std::initializer_list<const char*> allowed) {
  for (const char* a : allowed) {
    if (value == a) return;
  }
  std::string list;
  for (const char* a : allowed) list += std::string(list.empty() ? "" : ", ") + a;
  throw ConfigError("config key '" + key + "' must be one of: " + list + " (got '" + value + "')");
}

void validate(const ExperimentConfig& c) {
  require(!c.run_id.empty() && c.run_id.find('/') == std::string::npos &&
              c.run_id != "." && c.run_id != "..",
          "run_id must be a non-empty file name");
  check_one_of("strategy.name", c.strategy,
               {"dense", "before_training", "one_shot_ft", "incremental", "dpf"});
  check_one_of("strategy.saliency", c.saliency, {"magnitude", "snip"});
  check_one_of("lr.kind", c.lr_kind, {"constant", "step_decay", "thm1", "thm2"});
  check_one_of("prune.scope", c.scope, {"global", "layerwise"});
  check_one_of("prune.criterion", c.criterion, {"magnitude", "row_group_l2"});
  check_one_of("data.kind", c.data.kind, {"blobs", "spirals", "idx"});
  require(c.lr > 0.0, "lr.initial must be positive");
  require(c.lr_factor > 0.0, "lr.factor must be positive");
  require(c.lr_mu > 0.0, "lr.mu must be positive");
  require(c.lr_c > 0.0, "lr.c must be positive");
  require(!c.lr_horizon || *c.lr_horizon >= 1, "lr.horizon must be >= 1");
  if (c.lr_milestones) {
    for (double m : *c.lr_milestones) require(m >= 0.0, "lr.milestones must be non-negative");
  }
  require(c.momentum >= 0.0 && c.momentum < 1.0, "optim.momentum must be in [0, 1)");
  require(c.weight_decay >= 0.0, "optim.weight_decay must be non-negative");
  require(c.batch_size >= 1, "optim.batch_size must be >= 1");
  require(c.epochs >= 1, "train.epochs must be >= 1");
  require(c.eval_every >= 1, "train.eval_every must be >= 1");
  require(c.reparam_period >= 1, "prune.reparam_period must be >= 1");
  require(c.sparsity_initial >= 0.0 && c.sparsity_initial <= c.sparsity_final &&
              c.sparsity_final <= 1.0,
          "need 0 <= prune.initial_sparsity <= prune.final_sparsity <= 1");
  require(c.prune_start_epoch >= 0.0, "prune.start_epoch must be non-negative");
  require(!c.prune_end_epoch || *c.prune_end_epoch > c.prune_start_epoch,
          "prune.end_epoch must exceed prune.start_epoch");
  require(c.prune_update_epochs > 0.0, "prune.update_epochs must be positive");
  require(c.finetune_epochs >= 0, "finetune.epochs must be non-negative");
  require(!c.finetune_lr || *c.finetune_lr > 0.0, "finetune.lr must be positive");
  require(!c.hidden.empty(), "model.hidden must list at least one hidden width");
  for (auto w : c.hidden) require(w >= 1, "model.hidden widths must be positive");
  require(c.checkpoint_every >= 0, "checkpoint.every must be non-negative");
  require(c.data.classes >= 2, "data.classes must be >= 2");
  require(c.data.noise >= 0.0, "data.noise must be non-negative");
  if (c.data.kind == "blobs") {
    require(c.data.dim >= c.data.classes, "data.dim must be >= data.classes for blobs");
  }
  if (c.data.kind != "idx") require(c.data.samples >= 5 * c.data.classes, "data.samples too small");
  if (c.data.kind == "idx") {
    require(!c.data.train_images.empty() && !c.data.train_labels.empty() &&
                !c.data.test_images.empty() && !c.data.test_labels.empty(),
            "idx data needs data.train_images, data.train_labels, data.test_images, data.test_labels");
  }
}

void validate(const LabConfig& c) {
  require(!c.run_id.empty() && c.run_id.find('/') == std::string::npos &&
              c.run_id != "." && c.run_id != "..",
          "run_id must be a non-empty file name");
  check_one_of("lab.experiment", c.experiment, {"theorem1", "theorem2", "one_shot"});
  require(c.dim >= 1, "lab.dim must be >= 1");
  require(c.mu > 0.0 && c.mu <= c.smoothness, "need 0 < lab.mu <= lab.L");
  require(c.noise >= 0.0, "lab.noise must be non-negative");
  require(c.radius > 0.0, "lab.radius must be positive");
  require(c.sparsity >= 0.0 && c.sparsity <= 1.0, "lab.sparsity must be in [0, 1]");
  require(!c.horizons.empty(), "lab.horizons must not be empty");
  for (auto t : c.horizons) require(t >= 1, "lab.horizons must be positive");
  require(c.seeds >= 1, "lab.seeds must be >= 1");
  require(c.reparam_period >= 1, "lab.reparam_period must be >= 1");
  require(c.pilot_steps >= 1, "lab.pilot_steps must be >= 1");
}

template <class T>
json opt(const std::optional<T>& v) {
  return v ? json(*v) : json(nullptr);
}

}  // namespace

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

ExperimentConfig parse_experiment_config(const std::string& json_text) {
  const auto j = parse_object(json_text, "experiment config");
  Reader r(j);
  ExperimentConfig c;
  r.get("run_id", c.run_id);
  r.get("seed", c.seed);
  r.get("output_dir", c.output_dir);
  r.get("strategy.name", c.strategy);
  r.get("strategy.saliency", c.saliency);
  r.get("strategy.monotone", c.monotone);
  r.get("lr.kind", c.lr_kind);
  r.get("lr.initial", c.lr);
  r.get("lr.milestones", c.lr_milestones);
  r.get("lr.factor", c.lr_factor);
  r.get("lr.mu", c.lr_mu);
  r.get("lr.c", c.lr_c);
  r.get("lr.horizon", c.lr_horizon);
  r.get("optim.momentum", c.momentum);
  r.get("optim.weight_decay", c.weight_decay);
  r.get("optim.batch_size", c.batch_size);
  r.get("train.epochs", c.epochs);
  r.get("train.eval_every", c.eval_every);
  r.get("prune.reparam_period", c.reparam_period);
  r.get("prune.initial_sparsity", c.sparsity_initial);
  r.get("prune.final_sparsity", c.sparsity_final);
  r.get("prune.start_epoch", c.prune_start_epoch);
  r.get("prune.end_epoch", c.prune_end_epoch);
  r.get("prune.update_epochs", c.prune_update_epochs);
  r.get("prune.scope", c.scope);
  r.get("prune.criterion", c.criterion);
  r.get("finetune.epochs", c.finetune_epochs);
  r.get("finetune.lr", c.finetune_lr);
  r.get("model.hidden", c.hidden);
  r.get("data.kind", c.data.kind);
  r.get("data.classes", c.data.classes);
  r.get("data.dim", c.data.dim);
  r.get("data.samples", c.data.samples);
  r.get("data.noise", c.data.noise);
  r.get("data.seed", c.data.seed);
  r.get("data.train_images", c.data.train_images);
  r.get("data.train_labels", c.data.train_labels);
  r.get("data.test_images", c.data.test_images);
  r.get("data.test_labels", c.data.test_labels);
  r.get("checkpoint.every", c.checkpoint_every);
  r.get("checkpoint.resume_from", c.resume_from);
  r.finish();
  validate(c);
  return c;
}

LabConfig parse_lab_config(const std::string& json_text) {
  const auto j = parse_object(json_text, "lab config");
  Reader r(j);
  LabConfig c;
  r.get("run_id", c.run_id);
  r.get("seed", c.seed);
  r.get("output_dir", c.output_dir);
  r.get("lab.experiment", c.experiment);
  r.get("lab.dim", c.dim);
  r.get("lab.mu", c.mu);
  r.get("lab.L", c.smoothness);
  r.get("lab.noise", c.noise);
  r.get("lab.rotate", c.rotate);
  r.get("lab.aligned", c.aligned);
  r.get("lab.coupling", c.coupling);
  r.get("lab.radius", c.radius);
  r.get("lab.sparsity", c.sparsity);
  r.get("lab.horizons", c.horizons);
  r.get("lab.seeds", c.seeds);
  r.get("lab.reparam_period", c.reparam_period);
  r.get("lab.pilot_steps", c.pilot_steps);
  r.finish();
  validate(c);
  return c;
}

std::string to_canonical_json(const ExperimentConfig& c) {
  json j;
  j["run_id"] = c.run_id;
  j["seed"] = c.seed;
  j["output_dir"] = c.output_dir;
  j["strategy.name"] = c.strategy;
  j["strategy.saliency"] = c.saliency;
  j["strategy.monotone"] = c.monotone;
  j["lr.kind"] = c.lr_kind;
  j["lr.initial"] = c.lr;
  j["lr.milestones"] = opt(c.lr_milestones);
  j["lr.factor"] = c.lr_factor;
  j["lr.mu"] = c.lr_mu;
  j["lr.c"] = c.lr_c;
  j["lr.horizon"] = opt(c.lr_horizon);
  j["optim.momentum"] = c.momentum;
  j["optim.weight_decay"] = c.weight_decay;
  j["optim.batch_size"] = c.batch_size;
  j["train.epochs"] = c.epochs;
  j["train.eval_every"] = c.eval_every;
  j["prune.reparam_period"] = c.reparam_period;
  j["prune.initial_sparsity"] = c.sparsity_initial;
  j["prune.final_sparsity"] = c.sparsity_final;
  j["prune.start_epoch"] = c.prune_start_epoch;
  j["prune.end_epoch"] = opt(c.prune_end_epoch);
  j["prune.update_epochs"] = c.prune_update_epochs;
  j["prune.scope"] = c.scope;
  j["prune.criterion"] = c.criterion;
  j["finetune.epochs"] = c.finetune_epochs;
  j["finetune.lr"] = opt(c.finetune_lr);
  j["model.hidden"] = c.hidden;
  j["data.kind"] = c.data.kind;
  j["data.classes"] = c.data.classes;
  j["data.dim"] = c.data.dim;
  j["data.samples"] = c.data.samples;
  j["data.noise"] = c.data.noise;
  j["data.seed"] = opt(c.data.seed);
  j["data.train_images"] = c.data.train_images;
  j["data.train_labels"] = c.data.train_labels;
  j["data.test_images"] = c.data.test_images;
  j["data.test_labels"] = c.data.test_labels;
  j["checkpoint.every"] = c.checkpoint_every;
  j["checkpoint.resume_from"] = c.resume_from;
  return j.dump(2) + "\n";
}

std::string to_canonical_json(const LabConfig& c) {
  json j;
  j["run_id"] = c.run_id;
  j["seed"] = c.seed;
  j["output_dir"] = c.output_dir;
  j["lab.experiment"] = c.experiment;
  j["lab.dim"] = c.dim;
  j["lab.mu"] = c.mu;
  j["lab.L"] = c.smoothness;
  j["lab.noise"] = c.noise;
  j["lab.rotate"] = c.rotate;
  j["lab.aligned"] = c.aligned;
  j["lab.coupling"] = c.coupling;
  j["lab.radius"] = c.radius;
  j["lab.sparsity"] = c.sparsity;
  j["lab.horizons"] = c.horizons;
  j["lab.seeds"] = c.seeds;
  j["lab.reparam_period"] = c.reparam_period;
  j["lab.pilot_steps"] = c.pilot_steps;
  return j.dump(2) + "\n";
}

std::vector<std::string> expand_grid(const std::string& grid_json, const std::string& base_json) {
  json grid;
  try {
    grid = json::parse(grid_json);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("grid: invalid JSON: ") + e.what());
  }
  if (!grid.is_array() || grid.empty()) throw ConfigError("grid must be a non-empty JSON array");
  const json base = base_json.empty() ? json::object() : parse_object(base_json, "base config");
  std::vector<std::string> out;
  std::set<std::string> ids;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    if (!grid[i].is_object()) throw ConfigError("grid entry " + std::to_string(i) + " is not an object");
    json merged = base;
    for (const auto& [key, value] : grid[i].items()) merged[key] = value;
    if (!grid[i].contains("run_id")) {
      const std::string stem = merged.contains("run_id") && merged["run_id"].is_string()
                                   ? merged["run_id"].get<std::string>()
                                   : std::string("run");
      merged["run_id"] = stem + "-" + std::to_string(i);
    }
    const auto id = merged["run_id"].dump();
    if (!ids.insert(id).second) throw ConfigError("duplicate run_id " + id + " in grid");
    out.push_back(merged.dump());
  }
  return out;
}

TrainConfig to_train_config(const ExperimentConfig& c, std::size_t train_samples) {
  TrainConfig t;
  if (c.strategy == "dense") {
    t.strategy = Dense{};
  } else if (c.strategy == "before_training") {
    t.strategy = BeforeTraining{c.saliency == "snip" ? Saliency::snip : Saliency::magnitude};
  } else if (c.strategy == "one_shot_ft") {
    t.strategy = OneShotFinetune{};
  } else if (c.strategy == "incremental") {
    t.strategy = Incremental{c.monotone};
  } else {
    t.strategy = Dpf{};
  }

  const auto spe = steps_per_epoch(std::max<std::size_t>(train_samples, 1), c.batch_size);
  const auto to_steps = [spe](double epochs) {
    return static_cast<std::int64_t>(std::llround(epochs * static_cast<double>(spe)));
  };
  const std::int64_t total = c.epochs * spe;

  if (c.lr_kind == "constant") {
    t.lr = ConstantLr{c.lr};
  } else if (c.lr_kind == "step_decay") {
    const auto epochs = static_cast<double>(c.epochs);
    const auto milestones = c.lr_milestones.value_or(std::vector<double>{0.5 * epochs, 0.75 * epochs});
    StepDecayLr s{c.lr, {}, c.lr_factor};
    for (double m : milestones) s.milestones.push_back(to_steps(m));
    std::sort(s.milestones.begin(), s.milestones.end());
    t.lr = s;
  } else if (c.lr_kind == "thm1") {
    t.lr = Theorem1Lr{c.lr_mu};
  } else {
    t.lr = Theorem2Lr{c.lr_c, c.lr_horizon.value_or(std::max<std::int64_t>(total, 1))};
  }

  t.momentum = c.momentum;
  t.weight_decay = c.weight_decay;
  t.batch_size = c.batch_size;
  t.epochs = c.epochs;
  t.eval_every = c.eval_every;
  t.reparam_period = c.reparam_period;
  t.scope = c.scope == "layerwise" ? PruneScope::layerwise : PruneScope::global;
  t.criterion = c.criterion == "row_group_l2" ? MaskCriterion::row_group_l2 : MaskCriterion::magnitude;
  t.seed = c.seed;
  t.finetune_epochs = c.finetune_epochs;
  t.finetune_lr = c.finetune_lr;

  SparsitySchedule s;
  s.initial = c.sparsity_initial;
  s.final = c.sparsity_final;
  s.start_step = to_steps(c.prune_start_epoch);
  const std::int64_t end = to_steps(c.prune_end_epoch.value_or(0.75 * static_cast<double>(c.epochs)));
  s.ramp_steps = std::max<std::int64_t>(1, end - s.start_step);
  s.update_every = std::max<std::int64_t>(1, to_steps(c.prune_update_epochs));
  t.schedule = s;
  return t;
}

std::vector<LayerSpec> model_specs(const ExperimentConfig& cfg, std::size_t input_dim,
                                   std::size_t num_classes) {
  std::vector<std::size_t> widths{input_dim};
  widths.insert(widths.end(), cfg.hidden.begin(), cfg.hidden.end());
  widths.push_back(num_classes);
  return mlp_specs(widths);
}

Split load_data(const DataConfig& data, std::uint64_t run_seed) {
  const auto seed = data.seed.value_or(run_seed);
  if (data.kind == "blobs") return make_blobs(data.classes, data.dim, data.samples, data.noise, seed);
  if (data.kind == "spirals") return make_spirals(data.classes, data.samples, data.noise, seed);
  Split s{idx::load(data.train_images, data.train_labels), idx::load(data.test_images, data.test_labels)};
  return s;
}

}  // namespace dpf
