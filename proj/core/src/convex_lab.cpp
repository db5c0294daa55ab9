#include "dpf/convex_lab.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include <Eigen/Dense>

#include "dpf/param_vector.hpp"
#include "dpf/pruning.hpp"

namespace dpf::lab {
namespace {

using Vec = Eigen::VectorXd;
using ConstMap = Eigen::Map<const Vec>;
using Map = Eigen::Map<Vec>;
using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

double dot(std::span<const double> a, std::span<const double> b) {
  return std::inner_product(a.begin(), a.end(), b.begin(), 0.0);
}

double sq_norm(std::span<const double> a) { return dot(a, a); }

void add_noise(std::vector<double>& g, double sigma, Rng& rng) {
  if (sigma == 0.0) return;
  std::normal_distribution<double> normal(0.0, 1.0);
  for (auto& v : g) v += sigma * normal(rng);
}

// Applies A = Q diag(lambda) Q^T (or diag(lambda) when unrotated).
void apply_curvature(const QuadraticProblem& p, std::span<const double> x, std::span<double> out) {
  const auto n = static_cast<Eigen::Index>(p.dim);
  ConstMap xv(x.data(), n);
  ConstMap lam(p.eigenvalues.data(), n);
  Map ov(out.data(), n);
  if (p.rotation.empty()) {
    ov = lam.cwiseProduct(xv);
    return;
  }
  Eigen::Map<const RowMat> q(p.rotation.data(), n, n);
  const Vec y = lam.cwiseProduct(q.transpose() * xv);
  ov = q * y;
}

void check_dim(std::size_t expected, std::size_t got) {
  if (expected != got) {
    throw std::invalid_argument("dimension mismatch (" + std::to_string(expected) + " vs " +
                                std::to_string(got) + ")");
  }
}

void check_run(double sparsity, std::int64_t horizon, const LabOptions& options, std::size_t dim) {
  if (!(sparsity >= 0.0 && sparsity <= 1.0)) throw std::invalid_argument("sparsity must be in [0,1]");
  if (horizon < 0) throw std::invalid_argument("horizon must be non-negative");
  if (options.reparam_period < 1) throw std::invalid_argument("reparam_period must be >= 1");
  if (options.trace_stride < 1) throw std::invalid_argument("trace_stride must be >= 1");
  if (options.fixed_mask) check_dim(dim, options.fixed_mask->size());
  if (options.x0) check_dim(dim, options.x0->size());
}

// Keep-mask from |x| on a flat layout; the library's tie rule applies.
class Masker {
 public:
  Masker(std::size_t dim, double sparsity, const LabOptions& options)
      : layout_(Layout::flat(dim, true)), sparsity_(sparsity), fixed_(options.fixed_mask),
        bits_(dim, 1) {
    if (fixed_) bits_ = *fixed_;
  }

  const std::vector<std::uint8_t>& update(std::span<const double> x) {
    if (fixed_ || sparsity_ == 0.0) return bits_;
    ParamVector p(layout_, std::vector<double>(x.begin(), x.end()));
    const auto m = magnitude_mask(p, sparsity_, PruneScope::global);
    bits_.assign(m.bits().begin(), m.bits().end());
    return bits_;
  }

  const std::vector<std::uint8_t>& bits() const { return bits_; }

 private:
  LayoutPtr layout_;
  double sparsity_;
  std::optional<std::vector<std::uint8_t>> fixed_;
  std::vector<std::uint8_t> bits_;
};

void masked(std::span<const double> x, const std::vector<std::uint8_t>& bits,
            std::vector<double>& out) {
  out.resize(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = bits[i] ? x[i] : 0.0;
}

double diff_sq(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

void keep_trace(TheoremRunResult& r, std::int64_t t, std::int64_t horizon, std::int64_t stride,
                double value, double pruned_sq, double norm_sq) {
  if (t % stride != 0 && t != horizon) return;
  r.trace.push_back({t, value, norm_sq > 0.0 ? pruned_sq / norm_sq : 0.0, norm_sq});
}

}  // namespace

double QuadraticProblem::value(std::span<const double> x) const {
  check_dim(dim, x.size());
  std::vector<double> ax(dim);
  apply_curvature(*this, x, ax);
  return 0.5 * dot(x, ax) - dot(b, x);
}

void QuadraticProblem::gradient(std::span<const double> x, std::span<double> out) const {
  check_dim(dim, x.size());
  check_dim(dim, out.size());
  apply_curvature(*this, x, out);
  for (std::size_t i = 0; i < dim; ++i) out[i] -= b[i];
}

std::vector<double> QuadraticProblem::gradient(std::span<const double> x) const {
  std::vector<double> g(dim);
  gradient(x, g);
  return g;
}

QuadraticProblem make_quadratic(std::size_t dim, double mu, double smoothness, std::uint64_t seed,
                                double noise_sigma, bool rotate) {
  if (dim == 0) throw std::invalid_argument("make_quadratic: dim must be positive");
  if (!(mu > 0.0) || !(mu <= smoothness)) {
    throw std::invalid_argument("make_quadratic: need 0 < mu <= L");
  }
  if (!(noise_sigma >= 0.0)) throw std::invalid_argument("make_quadratic: noise_sigma < 0");
  auto rng = make_rng(seed, stream::problem);
  QuadraticProblem p;
  p.dim = dim;
  p.mu = mu;
  p.smoothness = smoothness;
  p.noise_sigma = noise_sigma;
  p.rotation_seed = seed;

  std::uniform_real_distribution<double> unif(std::log(mu), std::log(smoothness));
  p.eigenvalues.resize(dim);
  for (auto& e : p.eigenvalues) e = std::exp(unif(rng));
  p.eigenvalues.front() = mu;
  p.eigenvalues.back() = smoothness;

  std::normal_distribution<double> normal(0.0, 1.0);
  if (rotate && dim > 1) {
    const auto n = static_cast<Eigen::Index>(dim);
    RowMat g(n, n);
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = 0; j < n; ++j) g(i, j) = normal(rng);
    Eigen::HouseholderQR<RowMat> qr(g);
    RowMat q = qr.householderQ();
    p.rotation.assign(q.data(), q.data() + q.size());
  }

  std::vector<double> xs(dim);
  for (auto& v : xs) v = normal(rng);
  return with_minimizer(std::move(p), std::move(xs));
}

QuadraticProblem with_minimizer(QuadraticProblem problem, std::vector<double> x_star) {
  check_dim(problem.dim, x_star.size());
  problem.b.assign(problem.dim, 0.0);
  apply_curvature(problem, x_star, problem.b);
  problem.x_star = std::move(x_star);
  problem.f_star = -0.5 * dot(problem.b, problem.x_star);
  return problem;
}

double NonconvexToy::value(std::span<const double> x) const {
  check_dim(dim, x.size());
  double f = 0.0;
  for (std::size_t i = 0; i < dim; ++i) {
    const double w = x[i] * x[i] - 1.0;
    f += 0.25 * w * w;
  }
  for (std::size_t i = 0; i + 1 < dim; ++i) f += coupling * x[i] * x[i + 1];
  return f;
}

void NonconvexToy::gradient(std::span<const double> x, std::span<double> out) const {
  check_dim(dim, x.size());
  check_dim(dim, out.size());
  for (std::size_t i = 0; i < dim; ++i) {
    double g = x[i] * (x[i] * x[i] - 1.0);
    if (i > 0) g += coupling * x[i - 1];
    if (i + 1 < dim) g += coupling * x[i + 1];
    out[i] = g;
  }
}

std::vector<double> NonconvexToy::gradient(std::span<const double> x) const {
  std::vector<double> g(dim);
  gradient(x, g);
  return g;
}

NonconvexToy make_double_well(std::size_t dim, double coupling, double noise_sigma,
                              double radius) {
  if (dim == 0) throw std::invalid_argument("make_double_well: dim must be positive");
  if (!(radius > 0.0)) throw std::invalid_argument("make_double_well: radius must be positive");
  if (!(noise_sigma >= 0.0)) throw std::invalid_argument("make_double_well: noise_sigma < 0");
  NonconvexToy toy;
  toy.dim = dim;
  toy.coupling = coupling;
  toy.radius = radius;
  toy.noise_sigma = noise_sigma;
  // Hessian diagonal 3x^2 - 1 plus the coupling band.
  toy.smoothness = 3.0 * radius * radius - 1.0 + 2.0 * std::abs(coupling);

  if (coupling == 0.0) {
    toy.f_star = 0.0;
    return toy;
  }
  std::vector<double> x(dim);
  for (std::size_t i = 0; i < dim; ++i) x[i] = (coupling > 0.0 && i % 2 == 1) ? -1.0 : 1.0;
  std::vector<double> g(dim);
  const double step = 1.0 / toy.smoothness;
  for (int it = 0; it < 100000; ++it) {
    toy.gradient(x, g);
    if (sq_norm(g) < 1e-28) break;
    for (std::size_t i = 0; i < dim; ++i) x[i] -= step * g[i];
  }
  toy.f_star = toy.value(x);
  return toy;
}

std::vector<double> stochastic_grad(const QuadraticProblem& problem, std::span<const double> x,
                                    Rng& rng) {
  auto g = problem.gradient(x);
  add_noise(g, problem.noise_sigma, rng);
  return g;
}

std::vector<double> stochastic_grad(const NonconvexToy& toy, std::span<const double> x, Rng& rng) {
  auto g = toy.gradient(x);
  add_noise(g, toy.noise_sigma, rng);
  return g;
}

double theorem1_weight(std::int64_t t, std::int64_t horizon) {
  if (horizon < 0 || t < 0 || t > horizon) return 0.0;
  const double T = static_cast<double>(horizon);
  return 2.0 * static_cast<double>(t + 1) / ((T + 1.0) * (T + 2.0));
}

std::int64_t sample_iterate_thm1(std::int64_t horizon, Rng& rng) {
  if (horizon < 0) throw std::invalid_argument("sample_iterate_thm1: horizon must be >= 0");
  if (horizon == 0) return 0;
  // Inverse CDF: P(index <= k) = (k + 1)(k + 2) / ((T + 1)(T + 2)).
  const double T = static_cast<double>(horizon);
  const double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
  const double target = u * (T + 1.0) * (T + 2.0);
  auto k = static_cast<std::int64_t>(std::floor((-3.0 + std::sqrt(1.0 + 4.0 * target)) / 2.0));
  k = std::clamp<std::int64_t>(k, 0, horizon);
  auto cdf = [](std::int64_t j) { return static_cast<double>(j + 1) * static_cast<double>(j + 2); };
  while (k > 0 && cdf(k - 1) > target) --k;
  while (k < horizon && cdf(k) <= target) ++k;
  return k;
}

TheoremRunResult run_theorem1(const QuadraticProblem& problem, double sparsity,
                              std::int64_t horizon, std::uint64_t seed,
                              const LabOptions& options) {
  check_run(sparsity, horizon, options, problem.dim);
  TheoremRunResult r;
  r.horizon = horizon;
  r.seed = seed;
  r.sparsity = sparsity;

  auto noise = make_rng(seed, stream::noise);
  auto sampler = make_rng(seed, stream::sampler);
  r.sampled_index = sample_iterate_thm1(horizon, sampler);

  std::vector<double> x = options.x0 ? *options.x0 : std::vector<double>(problem.dim, 0.0);
  std::vector<double> x_hat;
  Masker masker(problem.dim, sparsity, options);
  double initial = -1.0;

  for (std::int64_t t = 0; t <= horizon; ++t) {
    if (t % options.reparam_period == 0) masker.update(x);
    masked(x, masker.bits(), x_hat);
    const double value = problem.suboptimality(x_hat);
    const double pruned_sq = diff_sq(x, x_hat);
    const double w = theorem1_weight(t, horizon);
    if (t == 0) initial = std::max(std::abs(value), 1e-12);
    if (!std::isfinite(value) || value > 1e6 * initial) r.diverged = true;
    r.expected_value += w * value;
    r.avg_pruning_term += w * pruned_sq;
    if (t == r.sampled_index) r.sampled_value = value;
    keep_trace(r, t, horizon, options.trace_stride, value, pruned_sq, sq_norm(x));
    if (t == horizon) {
      r.final_value = value;
      r.final_dense = x;
      break;
    }

    const double lr = 4.0 / (problem.mu * static_cast<double>(t + 2));
    const auto g = stochastic_grad(problem, x_hat, noise);
    r.max_grad_norm = std::max(r.max_grad_norm, std::sqrt(sq_norm(g)));
    for (std::size_t i = 0; i < x.size(); ++i) x[i] -= lr * g[i];
    r.learning_rate = lr;
  }
  return r;
}

TheoremRunResult run_theorem2(const NonconvexToy& toy, double sparsity, std::int64_t horizon,
                              std::uint64_t seed, const LabOptions& options) {
  check_run(sparsity, horizon, options, toy.dim);
  if (options.pilot_steps < 1) throw std::invalid_argument("pilot_steps must be >= 1");
  TheoremRunResult r;
  r.horizon = horizon;
  r.seed = seed;
  r.sparsity = sparsity;

  std::vector<double> x0;
  if (options.x0) {
    x0 = *options.x0;
  } else {
    auto start = make_rng(seed, stream::start);
    std::uniform_real_distribution<double> unif(-toy.radius, toy.radius);
    x0.resize(toy.dim);
    for (auto& v : x0) v = unif(start);
  }

  // Pilot estimate of G^2 = E||g||^2 with a small constant rate.
  {
    auto pilot_noise = make_rng(seed, stream::noise, 1);
    const double pilot_lr = 1.0 / (toy.smoothness * std::sqrt(static_cast<double>(options.pilot_steps)));
    std::vector<double> x = x0;
    double acc = 0.0;
    for (std::int64_t t = 0; t < options.pilot_steps; ++t) {
      const auto g = stochastic_grad(toy, x, pilot_noise);
      acc += sq_norm(g);
      for (std::size_t i = 0; i < x.size(); ++i) x[i] -= pilot_lr * g[i];
    }
    const double g2 = acc / static_cast<double>(options.pilot_steps);
    const double gap = toy.value(x0) - toy.f_star;
    const double c = (g2 > 0.0 && gap > 0.0) ? std::sqrt(gap / (toy.smoothness * g2))
                                             : 1.0 / toy.smoothness;
    r.max_grad_norm = std::sqrt(g2);
    r.learning_rate = c / std::sqrt(static_cast<double>(std::max<std::int64_t>(horizon, 1)));
  }

  auto noise = make_rng(seed, stream::noise);
  auto sampler = make_rng(seed, stream::sampler);
  r.sampled_index = std::uniform_int_distribution<std::int64_t>(0, horizon)(sampler);

  std::vector<double> x = x0;
  std::vector<double> x_hat;
  Masker masker(toy.dim, sparsity, options);
  const double inv = 1.0 / static_cast<double>(horizon + 1);
  double initial = -1.0;

  for (std::int64_t t = 0; t <= horizon; ++t) {
    if (t % options.reparam_period == 0) masker.update(x);
    masked(x, masker.bits(), x_hat);
    auto g = toy.gradient(x_hat);
    const double value = sq_norm(g);
    const double pruned_sq = diff_sq(x, x_hat);
    if (t == 0) initial = std::max(value, 1e-12);
    if (!std::isfinite(value) || value > 1e6 * initial) r.diverged = true;
    r.expected_value += inv * value;
    r.avg_pruning_term += inv * pruned_sq;
    if (t == r.sampled_index) r.sampled_value = value;
    keep_trace(r, t, horizon, options.trace_stride, value, pruned_sq, sq_norm(x));
    if (t == horizon) {
      r.final_value = value;
      r.final_dense = x;
      break;
    }
    add_noise(g, toy.noise_sigma, noise);
    for (std::size_t i = 0; i < x.size(); ++i) x[i] -= r.learning_rate * g[i];
  }
  return r;
}

OneShotComparison one_shot_compare(const QuadraticProblem& problem, double sparsity,
                                   std::int64_t horizon, std::uint64_t seed,
                                   const LabOptions& options) {
  check_run(sparsity, horizon, options, problem.dim);
  OneShotComparison out;
  out.seed = seed;
  out.sparsity = sparsity;
  out.horizon = horizon;

  const std::vector<double> x0 =
      options.x0 ? *options.x0 : std::vector<double>(problem.dim, 0.0);

  // Plain SGD, pruned once at the end.
  {
    auto noise = make_rng(seed, stream::noise);
    std::vector<double> x = x0;
    for (std::int64_t t = 0; t < horizon; ++t) {
      const double lr = 4.0 / (problem.mu * static_cast<double>(t + 2));
      const auto g = stochastic_grad(problem, x, noise);
      for (std::size_t i = 0; i < x.size(); ++i) x[i] -= lr * g[i];
    }
    Masker masker(problem.dim, sparsity, options);
    std::vector<double> x_hat;
    masked(x, masker.update(x), x_hat);
    out.one_shot_value = problem.suboptimality(x_hat);
    const double norm_sq = sq_norm(x);
    out.one_shot_pruning_term = diff_sq(x, x_hat);
    out.one_shot_delta = norm_sq > 0.0 ? out.one_shot_pruning_term / norm_sq : 0.0;
    out.sgd_final = std::move(x);
  }

  // DPF on the same noise stream and rate schedule.
  {
    const auto r = run_theorem1(problem, sparsity, horizon, seed,
                                LabOptions{options.reparam_period, options.fixed_mask, x0, 1,
                                           options.pilot_steps});
    out.dpf_value = r.final_value;
    out.dpf_pruning_term = r.avg_pruning_term;
    double sum = 0.0;
    for (const auto& p : r.trace) sum += p.delta;
    out.dpf_mean_delta = r.trace.empty() ? 0.0 : sum / static_cast<double>(r.trace.size());
    out.dpf_final = r.final_dense;
  }
  return out;
}

std::optional<double> loglog_slope(std::span<const double> horizons,
                                   std::span<const double> values) {
  if (horizons.size() != values.size() || horizons.size() < 2) return std::nullopt;
  const auto n = static_cast<double>(horizons.size());
  double sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < horizons.size(); ++i) {
    if (!(horizons[i] > 0.0) || !(values[i] > 0.0)) return std::nullopt;
    const double lx = std::log(horizons[i]);
    const double ly = std::log(values[i]);
    sx += lx;
    sy += ly;
    sxx += lx * lx;
    sxy += lx * ly;
  }
  const double den = n * sxx - sx * sx;
  if (den == 0.0) return std::nullopt;
  return (n * sxy - sx * sy) / den;
}

double median(std::vector<double> values) {
  if (values.empty()) throw std::invalid_argument("median of empty set");
  std::sort(values.begin(), values.end());
  const auto n = values.size();
  return n % 2 == 1 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

}  // namespace dpf::lab
