#pragma once

// Synthetic objectives with known constants, and harnesses that run DPF on
// them to check the convergence rates empirically.

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "dpf/rng.hpp"

namespace dpf::lab {

/// f(x) = 1/2 x^T A x - b^T x with A = Q diag(eigenvalues) Q^T.
/// An empty `rotation` means Q = I (axis-aligned eigenbasis).
struct QuadraticProblem {
  std::size_t dim = 0;
  std::vector<double> eigenvalues;
  double mu = 1.0;
  double smoothness = 1.0;  // L
  std::vector<double> rotation;  // dim x dim row-major, or empty
  std::vector<double> b;
  std::vector<double> x_star;
  double f_star = 0.0;
  double noise_sigma = 0.0;
  std::uint64_t rotation_seed = 0;

  double value(std::span<const double> x) const;
  void gradient(std::span<const double> x, std::span<double> out) const;
  std::vector<double> gradient(std::span<const double> x) const;
  double suboptimality(std::span<const double> x) const { return value(x) - f_star; }
};

/// Eigenvalues log-uniform in [mu, L] with both endpoints present, random
/// rotation (unless `rotate` is false) and a dense standard-normal minimizer.
/// Throws std::invalid_argument unless 0 < mu <= L.
QuadraticProblem make_quadratic(std::size_t dim, double mu, double smoothness, std::uint64_t seed,
                                double noise_sigma, bool rotate = true);

/// Same curvature, with the minimizer replaced by `x_star`.
QuadraticProblem with_minimizer(QuadraticProblem problem, std::vector<double> x_star);

/// Coupled double well f(x) = sum_i (x_i^2 - 1)^2 / 4 + coupling * sum_i x_i x_{i+1}.
struct NonconvexToy {
  std::size_t dim = 0;
  double coupling = 0.0;
  double radius = 2.0;       // operating ball |x_i| <= radius
  double smoothness = 11.0;  // local L on the operating ball
  double f_star = 0.0;       // global minimum value
  double noise_sigma = 0.0;

  double value(std::span<const double> x) const;
  void gradient(std::span<const double> x, std::span<double> out) const;
  std::vector<double> gradient(std::span<const double> x) const;
};

/// f_star is found by deterministic descent from the alternating-sign point
/// (the global minimizer basin for |coupling| < 1/2; exact 0 when coupling = 0).
NonconvexToy make_double_well(std::size_t dim, double coupling, double noise_sigma,
                              double radius = 2.0);

/// grad f(x) + sigma * N(0, I).
std::vector<double> stochastic_grad(const QuadraticProblem& problem, std::span<const double> x,
                                    Rng& rng);
std::vector<double> stochastic_grad(const NonconvexToy& toy, std::span<const double> x, Rng& rng);

/// p_t = 2 (t + 1) / ((T + 1)(T + 2)) for t in [0, T].
double theorem1_weight(std::int64_t t, std::int64_t horizon);

/// Draws t in [0, T] with probability theorem1_weight(t, T).
std::int64_t sample_iterate_thm1(std::int64_t horizon, Rng& rng);

struct TracePoint {
  std::int64_t t = 0;
  double value = 0.0;     // f(x_hat_t) - f*, or ||grad f(x_hat_t)||^2
  double delta = 0.0;     // ||x_t - x_hat_t||^2 / ||x_t||^2
  double norm_sq = 0.0;   // ||x_t||^2
};

struct TheoremRunResult {
  std::int64_t horizon = 0;
  std::uint64_t seed = 0;
  double sparsity = 0.0;
  std::int64_t sampled_index = 0;
  double sampled_value = 0.0;   // value at the iterate drawn with the theorem's law
  double expected_value = 0.0;  // the same value averaged under that law
  double avg_pruning_term = 0.0;  // E[delta_t ||x_t||^2] under the same law
  double final_value = 0.0;     // value at x_hat_T
  double max_grad_norm = 0.0;   // running max of the stochastic gradient norm (the G estimate)
  double learning_rate = 0.0;   // constant rate (theorem 2) or the final rate (theorem 1)
  bool diverged = false;        // value exceeded 1e6 times its initial value
  std::vector<double> final_dense;  // x_T
  std::vector<TracePoint> trace;
};

struct LabOptions {
  std::int64_t reparam_period = 16;
  /// Fixed keep-mask used instead of magnitude pruning (1 = keep).
  std::optional<std::vector<std::uint8_t>> fixed_mask;
  std::optional<std::vector<double>> x0;  // default: zero (quadratic) / uniform ball (toy)
  std::int64_t trace_stride = 1;          // keep every k-th trace point (the last is always kept)
  std::int64_t pilot_steps = 1000;        // theorem 2 gradient-bound pilot
};

/// DPF with rate 4 / (mu (t + 2)), magnitude mask at the fixed sparsity
/// recomputed every reparam_period steps, iterate sampled with theorem1_weight.
TheoremRunResult run_theorem1(const QuadraticProblem& problem, double sparsity,
                              std::int64_t horizon, std::uint64_t seed,
                              const LabOptions& options = {});

/// DPF with constant rate c / sqrt(T), c = sqrt((f(x0) - f*) / (L G^2)), G^2
/// estimated by a pilot run; reports the mean of ||grad f(x_hat_t)||^2 over the
/// uniformly weighted iterates.
TheoremRunResult run_theorem2(const NonconvexToy& toy, double sparsity, std::int64_t horizon,
                              std::uint64_t seed, const LabOptions& options = {});

struct OneShotComparison {
  std::uint64_t seed = 0;
  double sparsity = 0.0;
  std::int64_t horizon = 0;
  double one_shot_value = 0.0;       // f(m_T * x_T) - f* after plain SGD
  double dpf_value = 0.0;            // f(x_hat_T) - f* after DPF
  double one_shot_delta = 0.0;       // delta_T of the final SGD iterate
  double dpf_mean_delta = 0.0;       // mean delta_t over the DPF trajectory
  double one_shot_pruning_term = 0.0;  // delta_T ||x_T||^2
  double dpf_pruning_term = 0.0;       // theorem-weighted mean of delta_t ||x_t||^2
  std::vector<double> sgd_final;     // x_T of the SGD arm
  std::vector<double> dpf_final;     // x_T of the DPF arm
};

/// Plain SGD pruned once at the end vs DPF, same rate schedule and noise stream.
OneShotComparison one_shot_compare(const QuadraticProblem& problem, double sparsity,
                                   std::int64_t horizon, std::uint64_t seed,
                                   const LabOptions& options = {});

/// Least-squares slope of log(value) against log(horizon). Empty when fewer
/// than two points or any value is not strictly positive.
std::optional<double> loglog_slope(std::span<const double> horizons, std::span<const double> values);

double median(std::vector<double> values);

}  // namespace dpf::lab
