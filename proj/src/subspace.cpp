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

#include "cetq/subspace.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <ostream>
#include <random>

#include "cetq/error.hpp"

namespace cetq {

std::string to_string(Definiteness d) {
  return d == Definiteness::kPositiveDefinite ? "positive_definite" : "indefinite";
}

std::string to_string(AxisSelection s) { return s == AxisSelection::kLargest ? "largest" : "smallest"; }

AxisSelection axis_selection_from_string(const std::string& s) {
  if (s == "largest") return AxisSelection::kLargest;
  if (s == "smallest") return AxisSelection::kSmallest;
  throw ConfigError("unknown axis selection '" + s + "'");
}

std::string to_string(SolverKind k) { return k == SolverKind::kAdam ? "adam" : "gradient_descent"; }

SolverKind solver_kind_from_string(const std::string& s) {
  if (s == "adam") return SolverKind::kAdam;
  if (s == "gradient_descent" || s == "gd") return SolverKind::kGradientDescent;
  throw ConfigError("unknown solver '" + s + "'");
}

GeometryClass classify_geometry(const Spectrum& spectrum) {
  if (spectrum.empty()) throw ContractViolation("cannot classify an empty spectrum");
  GeometryClass g;
  g.max_eigenvalue = spectrum.max_eigenvalue();
  g.min_eigenvalue = spectrum.min_eigenvalue();
  g.max_residual = spectrum.residuals.maxCoeff();
  g.tolerance = spectrum.residual_tolerance;
  if (g.max_eigenvalue < -g.tolerance) {
    throw ContractViolation("every certified eigenvalue is negative; the point is not a minimum");
  }
  for (Eigen::Index i = 0; i < spectrum.eigenvalues.size(); ++i) {
    if (spectrum.eigenvalues[i] < -g.tolerance) ++g.negative_count;
  }
  g.kind = g.negative_count > 0 ? Definiteness::kIndefinite : Definiteness::kPositiveDefinite;
  return g;
}

ShortAxisSet select_short_axes(const Spectrum& spectrum, std::size_t m, AxisSelection selection) {
  std::vector<Eigen::Index> positive;  // descending order
  for (Eigen::Index i = 0; i < spectrum.eigenvalues.size(); ++i) {
    if (spectrum.eigenvalues[i] > spectrum.residual_tolerance) positive.push_back(i);
  }
  ShortAxisSet s;
  s.requested = m;
  s.segments = spectrum.segments;
  const std::size_t take = std::min(m, positive.size());
  s.clamped = take < m;
  if (take == 0) throw NoConstraintError("no positive eigenpairs available to constrain");
  std::vector<Eigen::Index> chosen;
  if (selection == AxisSelection::kLargest) {
    chosen.assign(positive.begin(), positive.begin() + static_cast<std::ptrdiff_t>(take));
  } else {
    chosen.assign(positive.end() - static_cast<std::ptrdiff_t>(take), positive.end());
  }
  s.eigenvalues.resize(static_cast<Eigen::Index>(take));
  s.basis.resize(spectrum.eigenvectors.rows(), static_cast<Eigen::Index>(take));
  for (std::size_t k = 0; k < take; ++k) {
    const auto c = static_cast<Eigen::Index>(k);
    s.eigenvalues[c] = spectrum.eigenvalues[chosen[k]];
    s.basis.col(c) = spectrum.eigenvectors.col(chosen[k]);
  }
  return s;
}

Eigen::VectorXd canonical_coords(const ParameterVector& delta, const ShortAxisSet& short_axes) {
  if (delta.size() != short_axes.dimension()) throw ConfigError("perturbation dimension mismatch");
  return short_axes.basis.transpose() * delta.values();
}

ParameterVector project_out_short(const ParameterVector& delta, const ShortAxisSet& short_axes) {
  if (delta.size() != short_axes.dimension()) throw ConfigError("perturbation dimension mismatch");
  ParameterVector out = delta;
  // Two passes keep the result orthogonal to working precision.
  for (int pass = 0; pass < 2; ++pass) {
    out.values() -= short_axes.basis * (short_axes.basis.transpose() * out.values());
  }
  return out;
}

double constraint_residual(const ParameterVector& delta, const ShortAxisSet& short_axes) {
  const Eigen::VectorXd y = canonical_coords(delta, short_axes);
  return y.size() == 0 ? 0.0 : y.cwiseAbs().maxCoeff();
}

void SolverConfig::validate() const {
  if (m == 0) throw ConfigError("solver m must be positive");
  if (!(learning_rate > 0.0)) throw ConfigError("solver learning rate must be positive");
  if (max_iterations == 0) throw ConfigError("solver max_iterations must be positive");
  if (restarts == 0) throw ConfigError("solver needs at least one restart");
  if (size_weight && *size_weight < 0.0) throw ConfigError("size weight must be non-negative");
  if (norm_weight && *norm_weight < 0.0) throw ConfigError("norm weight must be non-negative");
  if (target_bits < 0.0) throw ConfigError("target bits must be non-negative");
  if (!(bit_slack > 0.0)) throw ConfigError("bit slack must be positive");
  if (convergence_window == 0) throw ConfigError("convergence window must be positive");
}

double epsilon_floor(std::size_t dimension) { return 1e-8 * std::sqrt(static_cast<double>(dimension)); }

bool null_space_certified(const PerturbationSolution& s, std::size_t dimension) {
  return s.constraint_residual <= 1e-4 * std::max(s.delta.norm(), epsilon_floor(dimension));
}

namespace {

struct Weights {
  double norm = 0.0;
  double size = 0.0;
  double target_bits = 0.0;
  double reference_rms = 0.0;
};

Weights resolve_weights(const ShortAxisSet& short_axes, const SegmentMap& segments,
                        const SolverConfig& cfg, const DeltaBitMapper& mapper) {
  const std::size_t n = segments.total();
  double mean_scale_sq = 0.0;
  for (std::size_t l = 0; l < segments.size(); ++l) {
    mean_scale_sq += static_cast<double>(segments[l].length) * mapper.scale(l) * mapper.scale(l);
  }
  mean_scale_sq /= static_cast<double>(n);
  Weights w;
  w.target_bits = cfg.target_bits;
  w.reference_rms = cfg.target_bits > 0.0 ? std::exp2(-cfg.target_bits / static_cast<double>(n)) : 1e-2;
  w.norm = cfg.norm_weight ? *cfg.norm_weight : 1e-3 * short_axes.eigenvalues.maxCoeff();
  if (cfg.size_weight) {
    w.size = *cfg.size_weight;
  } else if (cfg.target_bits > 0.0) {
    w.size = w.norm * w.reference_rms * w.reference_rms * mean_scale_sq * std::numbers::ln2 /
             (cfg.bit_slack * static_cast<double>(n));
  }
  return w;
}

// J and its gradient.
ObjectiveTerms evaluate(const ParameterVector& delta, const ShortAxisSet& short_axes,
                        const DeltaBitMapper& mapper, const Weights& w, Eigen::VectorXd* grad) {
  ObjectiveTerms t;
  const Eigen::VectorXd y = short_axes.basis.transpose() * delta.values();
  t.curvature = (short_axes.eigenvalues.array() * y.array().square()).sum();
  t.norm = w.norm * delta.values().squaredNorm();
  const SegmentMap& segs = delta.segments();
  std::vector<double> mags(segs.size());
  for (std::size_t l = 0; l < segs.size(); ++l) {
    mags[l] = mapper.magnitude(delta.segment(l)) / mapper.scale(l);
    t.model_bits += static_cast<double>(segs[l].length) * mapper.bits(mags[l]);
  }
  const double excess = t.model_bits - w.target_bits;
  const bool size_active = w.size > 0.0 && w.target_bits > 0.0 && excess > 0.0;
  if (size_active) t.size = w.size * excess * excess;
  if (!grad) return t;

  *grad = 2.0 * (short_axes.basis * (short_axes.eigenvalues.array() * y.array()).matrix());
  *grad += 2.0 * w.norm * delta.values();
  if (size_active) {
    std::vector<double> dmag;
    for (std::size_t l = 0; l < segs.size(); ++l) {
      auto seg = delta.segment(l);
      dmag.resize(seg.size());
      mapper.magnitude_gradient(seg, dmag);
      const double coeff = 2.0 * w.size * excess * static_cast<double>(segs[l].length) *
                           mapper.slope(mags[l]) / mapper.scale(l);
      for (std::size_t j = 0; j < seg.size(); ++j) {
        (*grad)[static_cast<Eigen::Index>(segs[l].offset + j)] += coeff * dmag[j];
      }
    }
  }
  return t;
}

PerturbationSolution solve_one(const ShortAxisSet& short_axes, const SegmentMap& segments,
                               const SolverConfig& cfg, const DeltaBitMapper& mapper,
                               const Weights& w, std::size_t restart) {
  const std::size_t n = segments.total();
  std::mt19937_64 rng(cfg.seed * 0x9E3779B97F4A7C15ULL + 7919ULL * (restart + 1));
  std::normal_distribution<double> normal;

  ParameterVector delta(segments);
  for (std::size_t l = 0; l < segments.size(); ++l) {
    double sigma = cfg.init_scale_per_layer.empty() ? cfg.init_scale : cfg.init_scale_per_layer[l];
    if (!(sigma > 0.0)) sigma = 0.1 * w.reference_rms * mapper.scale(l);
    for (double& x : delta.segment(l)) x = sigma * normal(rng);
  }
  delta = project_out_short(delta, short_axes);

  const bool adam = cfg.solver == SolverKind::kAdam;
  // Adam steps are relative to the reference magnitude in each layer's units.
  Eigen::VectorXd unit = Eigen::VectorXd::Ones(static_cast<Eigen::Index>(n));
  if (adam) {
    for (std::size_t l = 0; l < segments.size(); ++l) {
      unit.segment(static_cast<Eigen::Index>(segments[l].offset), static_cast<Eigen::Index>(segments[l].length))
          .setConstant(w.reference_rms * mapper.scale(l));
    }
  }
  const double base_lr = cfg.learning_rate;
  constexpr double kBeta1 = 0.9, kBeta2 = 0.99;
  Eigen::VectorXd m1 = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n));
  // Second moments are shared within a layer so each step keeps the layer's
  // gradient direction.
  std::vector<double> second(segments.size(), 0.0);
  Eigen::VectorXd grad;

  PerturbationSolution sol;
  sol.restart = restart;
  sol.size_weight = w.size;
  sol.norm_weight = w.norm;
  std::vector<double> history;
  history.reserve(cfg.max_iterations + 1);

  std::size_t t = 0;
  for (; t < cfg.max_iterations; ++t) {
    const ObjectiveTerms terms = evaluate(delta, short_axes, mapper, w, &grad);
    const double j = terms.total();
    if (!std::isfinite(j) || !grad.allFinite()) throw NumericalError("solver objective is not finite");
    history.push_back(j);
    if (t % cfg.trajectory_stride == 0) {
      sol.trajectory.push_back({t, j, constraint_residual(delta, short_axes), terms.model_bits});
    }
    if (t >= cfg.convergence_window) {
      const double prev = history[t - cfg.convergence_window];
      const double floor = 1e-12 * std::abs(history.front());
      if (std::abs(j - prev) <= cfg.convergence_tolerance * std::max({std::abs(j), floor, 1e-300})) {
        sol.converged = true;
        break;
      }
    }

    double lr = base_lr;
    if (cfg.decay_interval > 0) lr *= std::exp2(-static_cast<double>(t / cfg.decay_interval));
    if (adam) {
      const double step = static_cast<double>(t + 1);
      m1 = kBeta1 * m1 + (1.0 - kBeta1) * grad;
      const double c1 = 1.0 - std::pow(kBeta1, step);
      const double c2 = 1.0 - std::pow(kBeta2, step);
      for (std::size_t l = 0; l < segments.size(); ++l) {
        const auto off = static_cast<Eigen::Index>(segments[l].offset);
        const auto len = static_cast<Eigen::Index>(segments[l].length);
        second[l] = kBeta2 * second[l] + (1.0 - kBeta2) * grad.segment(off, len).squaredNorm() / static_cast<double>(len);
        const double vhat = second[l] / c2;
        if (vhat > 0.0) {
          delta.values().segment(off, len) -=
              (lr / (c1 * std::sqrt(vhat))) * unit.segment(off, len).cwiseProduct(m1.segment(off, len));
        }
      }
    } else {
      delta.values() -= lr * grad;
    }
    delta = project_out_short(delta, short_axes);
  }

  const ObjectiveTerms final_terms = evaluate(delta, short_axes, mapper, w, nullptr);
  sol.iterations = t;
  sol.objective = final_terms.total();
  sol.model_bits = final_terms.model_bits;
  sol.constraint_residual = constraint_residual(delta, short_axes);
  sol.predicted_delta_loss = 0.5 * final_terms.curvature;
  if (sol.trajectory.empty() || sol.trajectory.back().iteration != t) {
    sol.trajectory.push_back({t, sol.objective, sol.constraint_residual, sol.model_bits});
  }
  for (std::size_t l = 0; l < segments.size(); ++l) {
    sol.layer_budgets.push_back(mapper.magnitude(delta.segment(l)));
  }
  sol.delta = std::move(delta);
  return sol;
}

}  // namespace

ObjectiveTerms solver_objective(const ParameterVector& delta, const ShortAxisSet& short_axes,
                                const DeltaBitMapper& mapper, double norm_weight, double size_weight,
                                double target_bits) {
  Weights w;
  w.norm = norm_weight;
  w.size = size_weight;
  w.target_bits = target_bits;
  return evaluate(delta, short_axes, mapper, w, nullptr);
}

std::vector<PerturbationSolution> solve_restarts(const ShortAxisSet& short_axes,
                                                 const SegmentMap& segments,
                                                 const SolverConfig& cfg,
                                                 const DeltaBitMapper& mapper) {
  cfg.validate();
  if (segments.total() != short_axes.dimension()) {
    throw ConfigError("segment map does not match the eigenvector dimension");
  }
  if (!cfg.init_scale_per_layer.empty() && cfg.init_scale_per_layer.size() != segments.size()) {
    throw ConfigError("one initial scale per layer is required");
  }
  if (!(mapper.alpha > 0.0)) throw ConfigError("alpha must be positive");
  if (!mapper.layer_scales.empty()) {
    if (mapper.layer_scales.size() != segments.size()) throw ConfigError("one bit-mapper scale per layer is required");
    for (double sc : mapper.layer_scales) {
      if (!(sc > 0.0)) throw ConfigError("bit-mapper scales must be positive");
    }
  }
  const Weights w = resolve_weights(short_axes, segments, cfg, mapper);
  std::vector<PerturbationSolution> out;
  out.reserve(cfg.restarts);
  for (std::size_t k = 0; k < cfg.restarts; ++k) {
    out.push_back(solve_one(short_axes, segments, cfg, mapper, w, k));
  }
  return out;
}

PerturbationSolution solve_delta(const ShortAxisSet& short_axes, const SegmentMap& segments,
                                 const SolverConfig& cfg, const DeltaBitMapper& mapper) {
  auto all = solve_restarts(short_axes, segments, cfg, mapper);
  const double floor = epsilon_floor(segments.total());
  const bool collapsed = std::all_of(all.begin(), all.end(), [&](const PerturbationSolution& s) {
    return s.delta.norm() < floor && s.size_weight > 0.0 && cfg.target_bits > 0.0 &&
           s.model_bits > cfg.target_bits;
  });
  if (collapsed) {
    throw InfeasibleTarget("every restart collapsed to a zero perturbation while the size target was unmet");
  }
  std::size_t best = 0;
  for (std::size_t k = 1; k < all.size(); ++k) {
    if (all[k].objective < all[best].objective) best = k;
  }
  return std::move(all[best]);
}

void write_trajectory_csv(std::ostream& out, const std::vector<PerturbationSolution>& solutions) {
  out << "restart,iteration,objective,constraint_residual,model_bits\n";
  out.precision(17);
  for (const auto& s : solutions) {
    for (const auto& p : s.trajectory) {
      out << s.restart << ',' << p.iteration << ',' << p.objective << ',' << p.constraint_residual
          << ',' << p.model_bits << '\n';
    }
  }
}

}  // namespace cetq
