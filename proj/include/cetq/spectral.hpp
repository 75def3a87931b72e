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
#include <functional>
#include <optional>

#include "cetq/model.hpp"
#include "cetq/parameter_vector.hpp"

namespace cetq {

/// Symmetric linear operator on R^n given by its action.
using LinearOperator = std::function<Eigen::VectorXd(const Eigen::VectorXd&)>;

/// The Hessian of `objective` at its expansion point, as an operator.
LinearOperator hessian_operator(const Objective& objective);

struct LanczosConfig {
  std::size_t max_iterations = 100;
  /// Pairs to report, most extreme first. Defaults to as many as can converge.
  std::size_t num_eigenpairs = 100;
  std::uint64_t seed = 0;
  bool reorthogonalize = true;
  /// Absolute residual bound. Unset means 1e-6 * max(1, |lambda_max|).
  std::optional<double> residual_tolerance;
  /// Fresh-seed restarts while fewer than `num_eigenpairs` pairs are
  /// certified; each restart works in the complement of the pairs found so far.
  std::size_t max_restarts = 3;

  void validate() const;
};

/// Certified Ritz pairs, eigenvalues in descending order.
struct Spectrum {
  Eigen::VectorXd eigenvalues;
  Eigen::MatrixXd eigenvectors;  // one unit column per eigenvalue
  Eigen::VectorXd residuals;     // ||H v - lambda v||
  std::size_t dimension = 0;
  SegmentMap segments;
  double residual_tolerance = 0.0;
  std::size_t iterations = 0;  // Krylov steps over all restarts (0 for dense solves)
  std::size_t restarts = 0;
  /// max |q_i^T q_j| over distinct Krylov basis vectors (0 for dense solves).
  double basis_orthogonality = 0.0;

  std::size_t size() const { return static_cast<std::size_t>(eigenvalues.size()); }
  bool empty() const { return eigenvalues.size() == 0; }
  double max_eigenvalue() const { return eigenvalues[0]; }
  double min_eigenvalue() const { return eigenvalues[eigenvalues.size() - 1]; }
  ParameterVector eigenvector(std::size_t i) const;
};

/// Lanczos iteration with optional full reorthogonalisation.
///
/// Invariant subspaces (zero beta) are handled by continuing from a fresh
/// random vector orthogonal to the basis built so far, so repeated
/// eigenvalues are resolved as long as iterations remain. Only pairs whose
/// true residual is within tolerance are reported, and only contiguous runs
/// from either end of the spectrum, so the reported values are the true
/// extremes.
Spectrum lanczos(const LinearOperator& op, std::size_t dim, const LanczosConfig& cfg,
                 const SegmentMap& segments = {});

/// Lanczos on the Hessian of `objective`.
Spectrum lanczos(const Objective& objective, const LanczosConfig& cfg);

/// Direct symmetric eigendecomposition. Test oracle for n <= 2000.
Spectrum dense_eig(const Eigen::MatrixXd& matrix, const SegmentMap& segments = {});

/// Dense Hessian assembled column by column from Hessian-vector products.
/// Refuses objectives above 2000 parameters.
Eigen::MatrixXd materialize_hessian(const Objective& objective);
Eigen::MatrixXd materialize_hessian(const ModelSpec& spec, const ParameterVector& params,
                                    const Dataset& batch);

inline constexpr std::size_t kMaxDenseDimension = 2000;

}  // namespace cetq
