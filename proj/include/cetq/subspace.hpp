// Copyright 2026 The cetq Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "cetq/parameter_vector.hpp"
#include "cetq/quantizer.hpp"
#include "cetq/spectral.hpp"

namespace cetq {

// Level sets of 1/2 d^T H d are ellipsoids when H is positive definite and
// hyperbolic paraboloids when it is indefinite. Axis length along an
// eigenvector scales as 1/sqrt(lambda), so the short axes are the
// high-curvature directions. A perturbation confined to the orthogonal
// complement of the short axes (the long-axis subspace) changes the loss
// least for its size.

enum class Definiteness { kPositiveDefinite, kIndefinite };
std::string to_string(Definiteness d);

struct GeometryClass {
  Definiteness kind = Definiteness::kPositiveDefinite;
  double max_eigenvalue = 0.0;
  double min_eigenvalue = 0.0;
  double max_residual = 0.0;
  double tolerance = 0.0;
  std::size_t negative_count = 0;  // Ritz values below -tolerance
};

/// Indefinite iff some certified Ritz value is below -tolerance. A spectrum
/// that is entirely negative is rejected with ContractViolation.
GeometryClass classify_geometry(const Spectrum& spectrum);

enum class AxisSelection { kLargest, kSmallest };
std::string to_string(AxisSelection s);
AxisSelection axis_selection_from_string(const std::string& s);

/// Constrained directions, eigenvalues descending.
struct ShortAxisSet {
  Eigen::VectorXd eigenvalues;
  Eigen::MatrixXd basis;  // orthonormal columns
  SegmentMap segments;
  std::size_t requested = 0;
  bool clamped = false;  // fewer positive pairs than requested were available

  std::size_t size() const { return static_cast<std::size_t>(eigenvalues.size()); }
  std::size_t dimension() const { return static_cast<std::size_t>(basis.rows()); }
};

/// Picks `m` positive certified pairs: the largest eigenvalues by default,
/// or the smallest positive ones under `AxisSelection::kSmallest`. Negative
/// pairs are never constrained. Throws NoConstraintError if none remain.
ShortAxisSet select_short_axes(const Spectrum& spectrum, std::size_t m,
                               AxisSelection selection = AxisSelection::kLargest);

/// y_i = v_i^T delta.
Eigen::VectorXd canonical_coords(const ParameterVector& delta, const ShortAxisSet& short_axes);

/// delta - sum_i (v_i^T delta) v_i.
ParameterVector project_out_short(const ParameterVector& delta, const ShortAxisSet& short_axes);

/// max_i |v_i^T delta|.
double constraint_residual(const ParameterVector& delta, const ShortAxisSet& short_axes);

enum class SolverKind { kGradientDescent, kAdam };
std::string to_string(SolverKind k);
SolverKind solver_kind_from_string(const std::string& s);

/// Objective J(delta) = sum_short lambda_i y_i^2 + rho ||delta||^2
///                      + mu * max(0, bits(delta) - target_bits)^2,
/// with bits(delta) = sum_layers n_l * b_l(delta) through a DeltaBitMapper.
/// Iterates are projected onto the long-axis subspace after every step.
struct SolverConfig {
  std::size_t m = 200;
  /// Adam: step relative to the target RMS 2^(-target_bits / n) times the
  /// layer scale, with second moments shared per layer.
  /// Gradient descent: absolute step size.
  double learning_rate = 0.1;
  std::size_t max_iterations = 2000;
  std::size_t restarts = 5;
  /// Standard deviation of the initial perturbation per layer. Empty means
  /// `init_scale` everywhere; a non-positive `init_scale` means 0.1 of the
  /// target RMS.
  std::vector<double> init_scale_per_layer;
  double init_scale = 0.0;
  /// Size-penalty weight mu. Unset: rho * r^2 * ln2 / (bit_slack * n), which
  /// keeps the equilibrium overshoot near `bit_slack` bits per weight.
  std::optional<double> size_weight;
  double bit_slack = 0.01;
  /// Norm weight rho. Unset: 1e-3 * largest constrained eigenvalue.
  std::optional<double> norm_weight;
  /// Total weight bits allowed (B_target). Zero disables the size term.
  double target_bits = 0.0;
  SolverKind solver = SolverKind::kAdam;
  /// The learning rate halves every `decay_interval` iterations (0 = never).
  std::size_t decay_interval = 500;
  std::uint64_t seed = 0;
  /// Converged when J moved by at most tol * |J| over the last `window` steps.
  double convergence_tolerance = 1e-5;
  std::size_t convergence_window = 50;
  /// Keep every n-th iterate in the trajectory.
  std::size_t trajectory_stride = 1;

  void validate() const;
};

struct TrajectoryPoint {
  std::size_t iteration = 0;
  double objective = 0.0;
  double constraint_residual = 0.0;
  double model_bits = 0.0;
};

struct PerturbationSolution {
  ParameterVector delta;
  /// Per-layer magnitude of delta under the mapper's reduction (RMS by default).
  std::vector<double> layer_budgets;
  std::vector<TrajectoryPoint> trajectory;
  double objective = 0.0;
  double model_bits = 0.0;
  double constraint_residual = 0.0;
  /// 1/2 sum_short lambda_i y_i^2, the truncated-spectrum estimate. The
  /// planner replaces it with the exact 1/2 delta^T H delta.
  double predicted_delta_loss = 0.0;
  std::size_t restart = 0;
  std::size_t iterations = 0;
  bool converged = false;
  double size_weight = 0.0;
  double norm_weight = 0.0;
};

/// 1e-8 * sqrt(n).
double epsilon_floor(std::size_t dimension);

/// max_i |v_i^T delta| <= 1e-4 * max(||delta||, epsilon_floor).
bool null_space_certified(const PerturbationSolution& s, std::size_t dimension);

struct ObjectiveTerms {
  double curvature = 0.0;
  double norm = 0.0;
  double size = 0.0;
  double model_bits = 0.0;
  double total() const { return curvature + norm + size; }
};

/// Evaluates J with explicit weights.
ObjectiveTerms solver_objective(const ParameterVector& delta, const ShortAxisSet& short_axes,
                                const DeltaBitMapper& mapper, double norm_weight, double size_weight,
                                double target_bits);

/// All restarts, in restart order. Restart k is seeded from (seed, k).
std::vector<PerturbationSolution> solve_restarts(const ShortAxisSet& short_axes,
                                                 const SegmentMap& segments,
                                                 const SolverConfig& cfg,
                                                 const DeltaBitMapper& mapper);

/// Best restart by final J (ties to the lower restart index). Throws
/// InfeasibleTarget when every restart collapsed to zero while the size
/// term was still active.
PerturbationSolution solve_delta(const ShortAxisSet& short_axes, const SegmentMap& segments,
                                 const SolverConfig& cfg, const DeltaBitMapper& mapper);

/// CSV rows: restart,iteration,objective,constraint_residual,model_bits
void write_trajectory_csv(std::ostream& out, const std::vector<PerturbationSolution>& solutions);

}  // namespace cetq
