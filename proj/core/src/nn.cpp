#include "dpf/nn.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <stdexcept>
#include <string>

#include "dpf/error.hpp"
#include "dpf/rng.hpp"

namespace dpf {

struct ForwardAccess {
  static std::vector<std::vector<double>>& activations(ForwardCache& c) { return c.activations_; }
  static const std::vector<std::vector<double>>& activations(const ForwardCache& c) {
    return c.activations_;
  }
  static std::vector<double>& probs(ForwardCache& c) { return c.probs_; }
  static const std::vector<double>& probs(const ForwardCache& c) { return c.probs_; }
  static std::uint64_t& fingerprint(ForwardCache& c) { return c.fingerprint_; }
  static std::uint64_t fingerprint(const ForwardCache& c) { return c.fingerprint_; }
  static bool& valid(ForwardCache& c) { return c.valid_; }
  static bool valid(const ForwardCache& c) { return c.valid_; }
};

namespace {

void check_chain(std::span<const LayerSpec> specs) {
  if (specs.empty()) throw std::invalid_argument("model needs at least one layer");
  for (std::size_t l = 0; l < specs.size(); ++l) {
    if (specs[l].in_dim == 0 || specs[l].out_dim == 0) {
      throw std::invalid_argument("layer " + std::to_string(l) + " has a zero dimension");
    }
    if (l > 0 && specs[l - 1].out_dim != specs[l].in_dim) {
      throw std::invalid_argument("layer " + std::to_string(l) + " expects in_dim " +
                                  std::to_string(specs[l].in_dim) + " but previous layer emits " +
                                  std::to_string(specs[l - 1].out_dim));
    }
  }
}

// FNV-1a over raw bytes; identifies the (params, batch) pair a cache belongs to.
std::uint64_t fnv1a(const void* data, std::size_t bytes, std::uint64_t h) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < bytes; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t fingerprint(const ParamVector& params, const Batch& batch) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  h = fnv1a(params.values.data(), params.values.size() * sizeof(double), h);
  h = fnv1a(batch.inputs.data(), batch.inputs.size() * sizeof(double), h);
  h = fnv1a(batch.labels.data(), batch.labels.size() * sizeof(int), h);
  return h;
}

void check_compatible(const MLPModel& model, const ParamVector& params, const Batch& batch) {
  if (params.size() != model.params.size()) {
    throw std::invalid_argument("parameter vector length " + std::to_string(params.size()) +
                                " does not match model (" + std::to_string(model.params.size()) +
                                ")");
  }
  if (batch.rows == 0) throw std::invalid_argument("batch is empty");
  if (batch.cols != model.input_dim()) {
    throw std::invalid_argument("batch has " + std::to_string(batch.cols) +
                                " features, model expects " + std::to_string(model.input_dim()));
  }
  const auto classes = static_cast<int>(model.num_classes());
  for (int label : batch.labels) {
    if (label < 0 || label >= classes) {
      throw std::invalid_argument("label " + std::to_string(label) + " outside [0, " +
                                  std::to_string(classes) + ")");
    }
  }
}

struct LayerView {
  const double* weights;
  const double* bias;
};

std::vector<LayerView> layer_views(const MLPModel& model, const ParamVector& params) {
  std::vector<LayerView> views(model.layers.size());
  for (const auto& seg : model.params.layout->segments()) {
    const double* base = params.values.data() + seg.offset;
    if (seg.kind == SegmentKind::weight) {
      views[seg.layer].weights = base;
    } else {
      views[seg.layer].bias = base;
    }
  }
  return views;
}

// Computes layer outputs into `acts` (acts[0] must hold the inputs) and returns
// the per-row logits of the final layer in acts.back().
void run_layers(const MLPModel& model, const std::vector<LayerView>& views, std::size_t rows,
                std::vector<std::vector<double>>& acts) {
  const auto& layers = model.layers;
  acts.resize(layers.size() + 1);
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto& spec = layers[l];
    const auto& in = acts[l];
    auto& out = acts[l + 1];
    out.assign(rows * spec.out_dim, 0.0);
    const double* w = views[l].weights;
    const double* b = views[l].bias;
    for (std::size_t n = 0; n < rows; ++n) {
      const double* a = in.data() + n * spec.in_dim;
      double* z = out.data() + n * spec.out_dim;
      for (std::size_t o = 0; o < spec.out_dim; ++o) {
        const double* wrow = w + o * spec.in_dim;
        double acc = b[o];
        for (std::size_t i = 0; i < spec.in_dim; ++i) acc += wrow[i] * a[i];
        z[o] = (spec.activation == Activation::relu && acc < 0.0) ? 0.0 : acc;
      }
    }
  }
}

// Softmax in place over each row; returns the summed cross-entropy.
double softmax_xent(std::vector<double>& logits, std::size_t rows, std::size_t classes,
                    std::span<const int> labels) {
  double total = 0.0;
  for (std::size_t n = 0; n < rows; ++n) {
    double* z = logits.data() + n * classes;
    const double zmax = *std::max_element(z, z + classes);
    double sum = 0.0;
    for (std::size_t c = 0; c < classes; ++c) sum += std::exp(z[c] - zmax);
    const double log_sum = zmax + std::log(sum);
    total += log_sum - z[labels[n]];
    for (std::size_t c = 0; c < classes; ++c) z[c] = std::exp(z[c] - log_sum);
  }
  return total;
}

}  // namespace

std::vector<LayerSpec> mlp_specs(std::span<const std::size_t> widths) {
  if (widths.size() < 2) throw std::invalid_argument("mlp_specs needs at least input and output widths");
  std::vector<LayerSpec> specs;
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
    LayerSpec spec;
    spec.in_dim = widths[l];
    spec.out_dim = widths[l + 1];
    const bool last = l + 2 == widths.size();
    spec.activation = last ? Activation::identity : Activation::relu;
    spec.prunable_weights = !last;
    spec.prunable_bias = false;
    specs.push_back(spec);
  }
  return specs;
}

LayoutPtr make_layout(std::span<const LayerSpec> specs) {
  check_chain(specs);
  std::vector<Segment> segments;
  std::size_t offset = 0;
  for (std::size_t l = 0; l < specs.size(); ++l) {
    const auto& spec = specs[l];
    Segment w;
    w.offset = offset;
    w.size = spec.in_dim * spec.out_dim;
    w.layer = l;
    w.kind = SegmentKind::weight;
    w.rows = spec.out_dim;
    w.cols = spec.in_dim;
    w.prunable = spec.prunable_weights;
    offset += w.size;
    Segment b;
    b.offset = offset;
    b.size = spec.out_dim;
    b.layer = l;
    b.kind = SegmentKind::bias;
    b.rows = 1;
    b.cols = spec.out_dim;
    b.prunable = spec.prunable_bias;
    offset += b.size;
    segments.push_back(w);
    segments.push_back(b);
  }
  return std::make_shared<const Layout>(std::move(segments));
}

MLPModel init_model(std::vector<LayerSpec> specs, std::uint64_t seed) {
  auto layout = make_layout(specs);
  auto params = ParamVector::zeros(layout);
  auto rng = make_rng(seed, stream::init);
  for (const auto& seg : layout->segments()) {
    if (seg.kind != SegmentKind::weight) continue;
    const double limit = std::sqrt(6.0 / static_cast<double>(seg.rows + seg.cols));
    std::uniform_real_distribution<double> dist(-limit, limit);
    for (std::size_t i = 0; i < seg.size; ++i) params[seg.offset + i] = dist(rng);
  }
  return MLPModel{std::move(specs), std::move(params)};
}

Batch make_batch(std::size_t cols, std::vector<double> inputs, std::vector<int> labels) {
  if (cols == 0) throw std::invalid_argument("batch needs at least one feature");
  if (inputs.size() != cols * labels.size()) {
    throw std::invalid_argument("batch inputs size does not match rows x cols");
  }
  for (int y : labels) {
    if (y < 0) throw std::invalid_argument("negative label");
  }
  Batch b;
  b.rows = labels.size();
  b.cols = cols;
  b.inputs = std::move(inputs);
  b.labels = std::move(labels);
  return b;
}

Batch select_rows(const Batch& data, std::span<const std::size_t> indices) {
  Batch b;
  b.rows = indices.size();
  b.cols = data.cols;
  b.inputs.resize(b.rows * b.cols);
  b.labels.resize(b.rows);
  for (std::size_t k = 0; k < indices.size(); ++k) {
    const auto src = indices[k];
    std::copy_n(data.inputs.begin() + static_cast<std::ptrdiff_t>(src * data.cols), data.cols,
                b.inputs.begin() + static_cast<std::ptrdiff_t>(k * data.cols));
    b.labels[k] = data.labels[src];
  }
  return b;
}

ForwardResult forward(const MLPModel& model, const ParamVector& params, const Batch& batch) {
  check_compatible(model, params, batch);
  ForwardResult result;
  auto& acts = ForwardAccess::activations(result.cache);
  acts.resize(model.layers.size() + 1);
  acts[0] = batch.inputs;
  run_layers(model, layer_views(model, params), batch.rows, acts);

  auto& probs = ForwardAccess::probs(result.cache);
  probs = acts.back();
  const double total = softmax_xent(probs, batch.rows, model.num_classes(), batch.labels);
  result.loss = total / static_cast<double>(batch.rows);
  if (!std::isfinite(result.loss)) {
    throw NumericalFailure("non-finite loss in forward pass");
  }
  ForwardAccess::fingerprint(result.cache) = fingerprint(params, batch);
  ForwardAccess::valid(result.cache) = true;
  return result;
}

ParamVector backward(const MLPModel& model, const ParamVector& params, const Batch& batch,
                     const ForwardCache& cache) {
  check_compatible(model, params, batch);
  if (!ForwardAccess::valid(cache) || ForwardAccess::fingerprint(cache) != fingerprint(params, batch)) {
    throw std::logic_error("stale forward cache: backward called with different params or batch");
  }
  const auto& acts = ForwardAccess::activations(cache);
  const auto& layers = model.layers;
  const auto views = layer_views(model, params);
  const std::size_t rows = batch.rows;
  const double inv_rows = 1.0 / static_cast<double>(rows);

  ParamVector grad = ParamVector::zeros(model.params.layout);
  std::vector<std::size_t> weight_offset(layers.size()), bias_offset(layers.size());
  for (const auto& seg : grad.layout->segments()) {
    (seg.kind == SegmentKind::weight ? weight_offset : bias_offset)[seg.layer] = seg.offset;
  }

  // dL/dz for the output layer: (softmax - onehot) / rows.
  std::vector<double> delta = ForwardAccess::probs(cache);
  const std::size_t classes = model.num_classes();
  for (std::size_t n = 0; n < rows; ++n) {
    double* d = delta.data() + n * classes;
    d[batch.labels[n]] -= 1.0;
    for (std::size_t c = 0; c < classes; ++c) d[c] *= inv_rows;
  }

  std::vector<double> delta_prev;
  for (std::size_t l = layers.size(); l-- > 0;) {
    const auto& spec = layers[l];
    const auto& a_prev = acts[l];
    double* gw = grad.values.data() + weight_offset[l];
    double* gb = grad.values.data() + bias_offset[l];
    for (std::size_t n = 0; n < rows; ++n) {
      const double* d = delta.data() + n * spec.out_dim;
      const double* a = a_prev.data() + n * spec.in_dim;
      for (std::size_t o = 0; o < spec.out_dim; ++o) {
        const double dz = d[o];
        if (dz == 0.0) continue;
        gb[o] += dz;
        double* grow = gw + o * spec.in_dim;
        for (std::size_t i = 0; i < spec.in_dim; ++i) grow[i] += dz * a[i];
      }
    }
    if (l == 0) break;

    delta_prev.assign(rows * spec.in_dim, 0.0);
    const double* w = views[l].weights;
    const bool relu_below = layers[l - 1].activation == Activation::relu;
    for (std::size_t n = 0; n < rows; ++n) {
      const double* d = delta.data() + n * spec.out_dim;
      double* dp = delta_prev.data() + n * spec.in_dim;
      for (std::size_t o = 0; o < spec.out_dim; ++o) {
        const double dz = d[o];
        if (dz == 0.0) continue;
        const double* wrow = w + o * spec.in_dim;
        for (std::size_t i = 0; i < spec.in_dim; ++i) dp[i] += dz * wrow[i];
      }
      if (relu_below) {
        const double* a = a_prev.data() + n * spec.in_dim;
        for (std::size_t i = 0; i < spec.in_dim; ++i) {
          if (a[i] <= 0.0) dp[i] = 0.0;
        }
      }
    }
    delta.swap(delta_prev);
  }
  return grad;
}

double batch_loss(const MLPModel& model, const ParamVector& params, const Batch& batch) {
  return forward(model, params, batch).loss;
}

std::vector<double> finite_diff_grad(const std::function<double(std::span<const double>)>& f,
                                     std::span<const double> x, double h) {
  if (!(h > 0.0)) throw std::invalid_argument("finite difference step must be positive");
  std::vector<double> probe(x.begin(), x.end());
  std::vector<double> grad(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double xi = probe[i];
    probe[i] = xi + h;
    const double up = f(probe);
    probe[i] = xi - h;
    const double down = f(probe);
    probe[i] = xi;
    grad[i] = (up - down) / (2.0 * h);
  }
  return grad;
}

ParamVector finite_diff_grad(const MLPModel& model, const ParamVector& params, const Batch& batch,
                             double h) {
  ParamVector probe = params;
  auto f = [&](std::span<const double> x) {
    std::copy(x.begin(), x.end(), probe.values.begin());
    return batch_loss(model, probe, batch);
  };
  return ParamVector(params.layout, finite_diff_grad(f, params.values, h));
}

Evaluation evaluate(const MLPModel& model, const ParamVector& params, const Dataset& data) {
  if (data.rows == 0) throw std::invalid_argument("cannot evaluate on an empty dataset");
  check_compatible(model, params, data);
  const auto views = layer_views(model, params);
  const std::size_t classes = model.num_classes();
  constexpr std::size_t chunk = 1024;

  std::vector<std::vector<double>> acts;
  double total_loss = 0.0;
  std::size_t correct = 0;
  for (std::size_t start = 0; start < data.rows; start += chunk) {
    const std::size_t rows = std::min(chunk, data.rows - start);
    acts.assign(1, std::vector<double>(data.inputs.begin() + static_cast<std::ptrdiff_t>(start * data.cols),
                                       data.inputs.begin() + static_cast<std::ptrdiff_t>((start + rows) * data.cols)));
    run_layers(model, views, rows, acts);
    auto logits = acts.back();
    for (std::size_t n = 0; n < rows; ++n) {
      const double* z = logits.data() + n * classes;
      // max_element returns the first maximum: lowest class index wins ties.
      const auto best = static_cast<int>(std::max_element(z, z + classes) - z);
      if (best == data.labels[start + n]) ++correct;
    }
    total_loss += softmax_xent(logits, rows, classes,
                               std::span<const int>(data.labels).subspan(start, rows));
  }
  Evaluation eval;
  eval.loss = total_loss / static_cast<double>(data.rows);
  eval.accuracy = static_cast<double>(correct) / static_cast<double>(data.rows);
  if (!std::isfinite(eval.loss)) throw NumericalFailure("non-finite loss during evaluation");
  return eval;
}

}  // namespace dpf
