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

#include "cetq/spectral.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "cetq/error.hpp"

namespace cetq {

LinearOperator hessian_operator(const Objective& objective) {
  return [&objective](const Eigen::VectorXd& v) {
    return objective.hvp(ParameterVector(objective.segments(), v)).values();
  };
}

void LanczosConfig::validate() const {
  if (max_iterations == 0) throw ConfigError("lanczos max_iterations must be positive");
  if (num_eigenpairs == 0) throw ConfigError("lanczos num_eigenpairs must be positive");
  if (num_eigenpairs > max_iterations) {
    throw ConfigError("lanczos num_eigenpairs exceeds max_iterations");
  }
  if (residual_tolerance && !(*residual_tolerance > 0.0)) {
    throw ConfigError("lanczos residual_tolerance must be positive");
  }
}

ParameterVector Spectrum::eigenvector(std::size_t i) const {
  SegmentMap segs = segments.empty() && dimension > 0 ? SegmentMap({{0, 0, dimension}}) : segments;
  return ParameterVector(std::move(segs), eigenvectors.col(static_cast<Eigen::Index>(i)));
}

namespace {

Eigen::VectorXd random_unit(std::size_t dim, std::mt19937_64& rng) {
  std::normal_distribution<double> normal;
  Eigen::VectorXd v(static_cast<Eigen::Index>(dim));
  for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = normal(rng);
  return v / v.norm();
}

// Indices into a descending list of `count` values, most extreme first:
// top, bottom, second from top, second from bottom, ...
std::vector<std::size_t> extremeness_order(std::size_t count) {
  std::vector<std::size_t> order;
  order.reserve(count);
  for (std::size_t lo = 0, hi = count; lo < hi;) {
    order.push_back(lo++);
    if (lo < hi) order.push_back(--hi);
  }
  return order;
}

Eigen::VectorXd apply_operator(const LinearOperator& op, const Eigen::VectorXd& v) {
  Eigen::VectorXd w = op(v);
  if (w.size() != v.size()) throw ConfigError("operator returned a vector of the wrong size");
  if (!w.allFinite()) throw NumericalError("operator returned a non-finite vector");
  return w;
}

struct Attempt {
  std::vector<double> values;
  std::vector<Eigen::VectorXd> vectors;
  std::vector<double> residuals;
  double tolerance = 0.0;
  std::size_t iterations = 0;
  double basis_orthogonality = 0.0;
  bool broke_down = false;
  bool exhausted = false;  // the Krylov space spans the whole deflated space
};

// One Lanczos run in the orthogonal complement of `locked`. Certified pairs
// are taken from each end of the spectrum up to the first one that has not
// converged, so every returned value is a contiguous extreme.
Attempt run_lanczos(const LinearOperator& op, std::size_t dim, const LanczosConfig& cfg,
                    const Eigen::MatrixXd& locked, std::size_t wanted, std::uint64_t seed) {
  const std::size_t free_dim = dim - static_cast<std::size_t>(locked.cols());
  const std::size_t steps = std::min(cfg.max_iterations, free_dim);
  wanted = std::min(wanted, free_dim);
  std::mt19937_64 rng(seed);

  auto deflate = [&](Eigen::VectorXd& v) {
    if (locked.cols() > 0) {
      for (int pass = 0; pass < 2; ++pass) v -= locked * (locked.transpose() * v);
    }
  };
  auto fresh_vector = [&](std::size_t built_cols, const Eigen::MatrixXd& basis) -> std::optional<Eigen::VectorXd> {
    Eigen::VectorXd r = random_unit(dim, rng);
    deflate(r);
    if (built_cols > 0) {
      auto built = basis.leftCols(static_cast<Eigen::Index>(built_cols));
      for (int pass = 0; pass < 2; ++pass) r -= built * (built.transpose() * r);
    }
    const double rn = r.norm();
    if (rn < 1e-8) return std::nullopt;
    return Eigen::VectorXd(r / rn);
  };

  Eigen::MatrixXd basis(static_cast<Eigen::Index>(dim), static_cast<Eigen::Index>(steps));
  std::vector<double> alpha;
  std::vector<double> beta;  // beta[j] couples q_j and q_{j+1}; 0 after a restart
  Attempt out;
  auto start = fresh_vector(0, basis);
  if (!start) {
    out.exhausted = true;
    return out;
  }
  Eigen::VectorXd q = *start;
  double last_beta = 0.0;
  double scale = 0.0;

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> tri;
  auto solve_tridiagonal = [&](std::size_t k) {
    Eigen::VectorXd diag = Eigen::Map<const Eigen::VectorXd>(alpha.data(), static_cast<Eigen::Index>(k));
    Eigen::VectorXd sub = k > 1 ? Eigen::VectorXd(Eigen::Map<const Eigen::VectorXd>(
                                      beta.data(), static_cast<Eigen::Index>(k - 1)))
                                : Eigen::VectorXd();
    tri.computeFromTridiagonal(diag, sub, Eigen::ComputeEigenvectors);
  };
  auto tolerance_for = [&](const Eigen::VectorXd& theta) {
    if (cfg.residual_tolerance) return *cfg.residual_tolerance;
    return 1e-6 * std::max(1.0, theta.cwiseAbs().maxCoeff());
  };
  auto converged = [&](std::size_t k, std::size_t rank, double tol) {
    const auto col = static_cast<Eigen::Index>(k - 1 - rank);  // descending -> ascending
    return std::abs(last_beta * tri.eigenvectors()(static_cast<Eigen::Index>(k - 1), col)) <= tol;
  };

  std::size_t k = 0;
  for (std::size_t j = 0; j < steps; ++j) {
    basis.col(static_cast<Eigen::Index>(j)) = q;
    Eigen::VectorXd w = apply_operator(op, q);
    const double a = q.dot(w);
    alpha.push_back(a);
    w -= a * q;
    if (j > 0 && beta[j - 1] != 0.0) w -= beta[j - 1] * basis.col(static_cast<Eigen::Index>(j - 1));
    deflate(w);
    if (cfg.reorthogonalize) {
      auto built = basis.leftCols(static_cast<Eigen::Index>(j + 1));
      for (int pass = 0; pass < 2; ++pass) w -= built * (built.transpose() * w);
    }
    last_beta = w.norm();
    scale = std::max({scale, std::abs(a), last_beta});
    k = j + 1;

    solve_tridiagonal(k);
    const double tol = tolerance_for(tri.eigenvalues());
    if (k >= wanted) {
      bool done = true;
      auto order = extremeness_order(k);
      for (std::size_t r = 0; r < wanted && done; ++r) done = converged(k, order[r], tol);
      if (done) break;
    }
    if (k == steps) break;

    if (last_beta <= 1e-12 * std::max(scale, 1e-300)) {
      out.broke_down = true;
      auto next = fresh_vector(k, basis);
      if (!next) break;  // Krylov space already spans the deflated space
      q = *next;
      beta.push_back(0.0);
    } else {
      q = w / last_beta;
      beta.push_back(last_beta);
    }
  }

  solve_tridiagonal(k);
  const Eigen::VectorXd& theta = tri.eigenvalues();
  const double tol = tolerance_for(theta);
  auto q_k = basis.leftCols(static_cast<Eigen::Index>(k));
  out.tolerance = tol;
  out.iterations = k;
  out.exhausted = k == free_dim;
  if (k > 1) {
    Eigen::MatrixXd gram = q_k.transpose() * q_k;
    gram.diagonal().setZero();
    out.basis_orthogonality = gram.cwiseAbs().maxCoeff();
  }

  // Alternate top and bottom, stopping each side at its first failure.
  auto certify = [&](std::size_t rank) {
    if (!converged(k, rank, tol)) return false;
    const auto col = static_cast<Eigen::Index>(k - 1 - rank);
    Eigen::VectorXd y = q_k * tri.eigenvectors().col(col);
    y /= y.norm();
    const double lambda = theta[col];
    const double res = (apply_operator(op, y) - lambda * y).norm();
    if (res > tol) return false;
    out.values.push_back(lambda);
    out.vectors.push_back(std::move(y));
    out.residuals.push_back(res);
    return true;
  };
  bool top_open = true, bottom_open = true;
  for (std::size_t lo = 0, hi = k; lo < hi && out.values.size() < wanted && (top_open || bottom_open);) {
    if (top_open) top_open = certify(lo++);
    if (bottom_open && lo < hi && out.values.size() < wanted) bottom_open = certify(--hi);
  }
  return out;
}

}  // namespace

Spectrum lanczos(const LinearOperator& op, std::size_t dim, const LanczosConfig& cfg,
                 const SegmentMap& segments) {
  cfg.validate();
  if (dim == 0) throw ContractViolation("lanczos needs a dimension of at least 1");
  if (!segments.empty() && segments.total() != dim) {
    throw ConfigError("segment map does not match the operator dimension");
  }
  const std::size_t wanted = std::min(cfg.num_eigenpairs, dim);
  std::vector<double> values, residuals;
  std::vector<Eigen::VectorXd> vectors;
  Eigen::MatrixXd locked(static_cast<Eigen::Index>(dim), 0);

  Spectrum s;
  s.dimension = dim;
  s.segments = segments;
  bool any_breakdown = false;
  // Restarts lock the pairs certified so far and continue in their
  // orthogonal complement from a fresh seed.
  for (std::size_t r = 0; r <= cfg.max_restarts; ++r) {
    const std::uint64_t seed = cfg.seed + 0x9E3779B97F4A7C15ULL * r;
    Attempt a = run_lanczos(op, dim, cfg, locked, wanted - values.size(), seed);
    s.restarts = r;
    s.iterations += a.iterations;
    s.basis_orthogonality = std::max(s.basis_orthogonality, a.basis_orthogonality);
    s.residual_tolerance = std::max(s.residual_tolerance, a.tolerance);
    any_breakdown = any_breakdown || a.broke_down;
    if (!a.values.empty()) {
      const auto old = locked.cols();
      locked.conservativeResize(Eigen::NoChange, old + static_cast<Eigen::Index>(a.values.size()));
      for (std::size_t i = 0; i < a.values.size(); ++i) {
        locked.col(old + static_cast<Eigen::Index>(i)) = a.vectors[i];
        values.push_back(a.values[i]);
        residuals.push_back(a.residuals[i]);
        vectors.push_back(std::move(a.vectors[i]));
      }
    }
    if (values.size() >= wanted || a.exhausted) break;
  }
  if (values.empty() && any_breakdown) {
    throw SpectralBreakdown("Krylov space became invariant before any Ritz pair converged");
  }

  std::vector<std::size_t> idx(values.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](auto x, auto y) { return values[x] > values[y]; });
  s.eigenvalues.resize(static_cast<Eigen::Index>(idx.size()));
  s.residuals.resize(static_cast<Eigen::Index>(idx.size()));
  s.eigenvectors.resize(static_cast<Eigen::Index>(dim), static_cast<Eigen::Index>(idx.size()));
  for (std::size_t i = 0; i < idx.size(); ++i) {
    const auto e = static_cast<Eigen::Index>(i);
    s.eigenvalues[e] = values[idx[i]];
    s.residuals[e] = residuals[idx[i]];
    s.eigenvectors.col(e) = vectors[idx[i]];
  }
  return s;
}

Spectrum lanczos(const Objective& objective, const LanczosConfig& cfg) {
  return lanczos(hessian_operator(objective), objective.dimension(), cfg, objective.segments());
}

Spectrum dense_eig(const Eigen::MatrixXd& matrix, const SegmentMap& segments) {
  const auto n = matrix.rows();
  if (matrix.cols() != n || n == 0) throw ContractViolation("dense_eig needs a non-empty square matrix");
  if (static_cast<std::size_t>(n) > kMaxDenseDimension) {
    throw ContractViolation("dense_eig is limited to " + std::to_string(kMaxDenseDimension) +
                            " dimensions");
  }
  const double asym = (matrix - matrix.transpose()).cwiseAbs().maxCoeff();
  if (asym > 1e-10) {
    throw ContractViolation("dense_eig input is not symmetric (defect " + std::to_string(asym) + ")");
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(matrix);
  if (solver.info() != Eigen::Success) throw NumericalError("dense eigensolver failed");

  Spectrum s;
  s.dimension = static_cast<std::size_t>(n);
  s.segments = segments;
  s.eigenvalues = solver.eigenvalues().reverse();
  s.eigenvectors = solver.eigenvectors().rowwise().reverse();
  s.residuals.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    s.residuals[i] =
        (matrix * s.eigenvectors.col(i) - s.eigenvalues[i] * s.eigenvectors.col(i)).norm();
  }
  s.residual_tolerance = 1e-10 * std::max(1.0, s.eigenvalues.cwiseAbs().maxCoeff());
  return s;
}

Eigen::MatrixXd materialize_hessian(const Objective& objective) {
  const std::size_t n = objective.dimension();
  if (n > kMaxDenseDimension) {
    throw ContractViolation("refusing to materialise a Hessian with " + std::to_string(n) +
                            " parameters (limit " + std::to_string(kMaxDenseDimension) + ")");
  }
  Eigen::MatrixXd h(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  ParameterVector e(objective.segments());
  for (std::size_t j = 0; j < n; ++j) {
    e[j] = 1.0;
    h.col(static_cast<Eigen::Index>(j)) = objective.hvp(e).values();
    e[j] = 0.0;
  }
  return h;
}

Eigen::MatrixXd materialize_hessian(const ModelSpec& spec, const ParameterVector& params,
                                    const Dataset& batch) {
  if (spec.num_params() > kMaxDenseDimension) {
    throw ContractViolation("refusing to materialise a Hessian with " +
                            std::to_string(spec.num_params()) + " parameters");
  }
  return materialize_hessian(NetworkObjective(spec, params, batch));
}

}  // namespace cetq
