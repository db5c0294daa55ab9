#pragma once

// Minimal deterministic feed-forward network: dense layers, ReLU/identity,
// softmax cross-entropy and exact backprop. This is the stochastic gradient
// oracle the trainers query at the pruned point.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "dpf/param_vector.hpp"

namespace dpf {

enum class Activation : std::uint8_t { relu = 0, identity = 1 };

struct LayerSpec {
  std::size_t in_dim = 1;
  std::size_t out_dim = 1;
  Activation activation = Activation::relu;
  bool prunable_weights = true;
  bool prunable_bias = false;

  bool operator==(const LayerSpec&) const = default;
};

/// Specs for an MLP with the given widths (input, hidden..., classes): hidden
/// layers ReLU with prunable weights, output layer identity and fully dense.
std::vector<LayerSpec> mlp_specs(std::span<const std::size_t> widths);

/// Per layer: weight matrix (out x in, row-major) followed by the bias vector.
LayoutPtr make_layout(std::span<const LayerSpec> specs);

struct MLPModel {
  std::vector<LayerSpec> layers;
  ParamVector params;

  std::size_t input_dim() const { return layers.front().in_dim; }
  std::size_t num_classes() const { return layers.back().out_dim; }
};

/// Glorot-uniform weights, zero biases, reproducible from `seed`.
/// Throws std::invalid_argument when consecutive layers do not chain.
MLPModel init_model(std::vector<LayerSpec> specs, std::uint64_t seed);

/// Row-major inputs with integer class labels. Also used for whole datasets.
struct Batch {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> inputs;
  std::vector<int> labels;

  std::span<const double> row(std::size_t i) const {
    return std::span<const double>(inputs).subspan(i * cols, cols);
  }
  bool empty() const { return rows == 0; }
};
using Dataset = Batch;

Batch make_batch(std::size_t cols, std::vector<double> inputs, std::vector<int> labels);
Batch select_rows(const Batch& data, std::span<const std::size_t> indices);

/// Activations retained by `forward` for the matching `backward` call.
class ForwardCache {
 public:
  ForwardCache() = default;

 private:
  friend struct ForwardAccess;
  std::vector<std::vector<double>> activations_;  // [0] = inputs, [l+1] = output of layer l
  std::vector<double> probs_;                     // softmax of the final layer
  std::uint64_t fingerprint_ = 0;
  bool valid_ = false;
};

struct ForwardResult {
  double loss = 0.0;
  ForwardCache cache;
};

/// Mean softmax cross-entropy of `batch` under `params`.
/// Throws NumericalFailure on a non-finite loss.
ForwardResult forward(const MLPModel& model, const ParamVector& params, const Batch& batch);

/// Exact gradient of the mean batch loss with respect to `params` (all
/// coordinates, including masked ones). Throws std::logic_error when `cache`
/// was not produced by forward() on the same params and batch.
ParamVector backward(const MLPModel& model, const ParamVector& params, const Batch& batch,
                     const ForwardCache& cache);

double batch_loss(const MLPModel& model, const ParamVector& params, const Batch& batch);

/// Central-difference gradient of an arbitrary scalar function.
std::vector<double> finite_diff_grad(const std::function<double(std::span<const double>)>& f,
                                     std::span<const double> x, double h);

ParamVector finite_diff_grad(const MLPModel& model, const ParamVector& params, const Batch& batch,
                             double h);

struct Evaluation {
  double loss = 0.0;
  double accuracy = 0.0;
};

/// Loss and top-1 accuracy; argmax ties resolve to the lowest class index.
Evaluation evaluate(const MLPModel& model, const ParamVector& params, const Dataset& data);

}  // namespace dpf
