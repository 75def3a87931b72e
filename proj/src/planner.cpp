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


#include "cetq/planner.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "cetq/checksum.hpp"
#include "cetq/error.hpp"

namespace cetq {

namespace fs = std::filesystem;

std::string to_string(AggregationRule rule) {
  return rule == AggregationRule::kBestObjective ? "best_objective" : "median_budget";
}

AggregationRule aggregation_rule_from_string(const std::string& s) {
  if (s == "best_objective" || s == "best") return AggregationRule::kBestObjective;
  if (s == "median_budget" || s == "median") return AggregationRule::kMedianBudget;
  throw ConfigError("unknown aggregation rule '" + s + "'");
}

std::string to_string(BudgetUnits units) {
  return units == BudgetUnits::kAbsolute ? "absolute" : "rounding_noise";
}

BudgetUnits budget_units_from_string(const std::string& s) {
  if (s == "absolute") return BudgetUnits::kAbsolute;
  if (s == "rounding_noise") return BudgetUnits::kRoundingNoise;
  throw ConfigError("unknown budget units '" + s + "'");
}

DeltaBitMapper make_bit_mapper(const ParameterVector& weights, const PlannerConfig& cfg) {
  DeltaBitMapper mapper;
  mapper.alpha = cfg.alpha;
  mapper.reduction = cfg.reduction;
  if (cfg.budget_units == BudgetUnits::kRoundingNoise) {
    for (std::size_t l = 0; l < weights.segments().size(); ++l) {
      mapper.layer_scales.push_back(rounding_noise_scale(weights.segment(l)));
    }
  }
  return mapper;
}

void PlannerConfig::validate() const {
  lanczos.validate();
  solver.validate();
  if (!(alpha > 0.0)) throw ConfigError("alpha must be positive");
  if (!(gap_threshold > 0.0)) throw ConfigError("gap threshold must be positive");
  if (target_bits_per_weight < 0.0) throw ConfigError("target bits must be non-negative");
  if (!(fallback_ratio >= 1.0)) throw ConfigError("fallback ratio must be at least 1");
  if (!(init_fraction > 0.0)) throw ConfigError("init fraction must be positive");
  if (profile_directions == 0) throw ConfigError("profile needs at least one direction");
  normalize_allowed_bits(allowed_bits);
}

namespace {

std::string hex(std::uint64_t v) {
  std::ostringstream s;
  s << std::hex << std::setw(16) << std::setfill('0') << v;
  return s.str();
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::uint64_t spectrum_checksum(const Spectrum& s) {
  Checksum c;
  c.update(std::span<const double>(s.eigenvalues.data(), s.size()));
  c.update(std::span<const double>(s.eigenvectors.data(), static_cast<std::size_t>(s.eigenvectors.size())));
  return c.value();
}

std::uint64_t vector_checksum(const ParameterVector& v) {
  Checksum c;
  c.update(v.span());
  return c.value();
}

class StageClock {
 public:
  explicit StageClock(PlanReport& report) : report_(report) {}

  // Runs `f` as one stage and relabels any library error with the stage name.
  template <typename F>
  auto run(const std::string& stage, std::uint64_t input_checksum, F&& f) {
    const auto start = std::chrono::steady_clock::now();
    auto finish = [&] {
      const std::chrono::duration<double> dt = std::chrono::steady_clock::now() - start;
      report_.stages.push_back({stage, hex(input_checksum), dt.count()});
    };
    try {
      if constexpr (std::is_void_v<decltype(f())>) {
        f();
        finish();
      } else {
        auto out = f();
        finish();
        return out;
      }
    } catch (const StageError&) {
      throw;
    } catch (const Error& e) {
      throw StageError(stage, e.what());
    }
  }

 private:
  PlanReport& report_;
};

}  // namespace

PerturbationSolution aggregate_restarts(const std::vector<PerturbationSolution>& solutions,
                                        AggregationRule rule, const ShortAxisSet& short_axes,
                                        const DeltaBitMapper& mapper) {
  if (solutions.empty()) throw ContractViolation("no restarts to aggregate");
  std::size_t best = 0;
  for (std::size_t k = 1; k < solutions.size(); ++k) {
    if (solutions[k].objective < solutions[best].objective) best = k;
  }
  if (rule == AggregationRule::kBestObjective || solutions.size() == 1) return solutions[best];

  PerturbationSolution out = solutions[best];
  const SegmentMap& segs = out.delta.segments();
  std::vector<double> medians(segs.size());
  for (std::size_t l = 0; l < segs.size(); ++l) {
    std::vector<double> v;
    for (const auto& s : solutions) v.push_back(s.layer_budgets[l]);
    medians[l] = median(std::move(v));
  }
  // Alternate per-layer rescaling with projection so delta keeps the median
  // magnitudes while staying out of the short axes.
  ParameterVector delta = out.delta;
  for (int it = 0; it < 50; ++it) {
    for (std::size_t l = 0; l < segs.size(); ++l) {
      const double m = mapper.magnitude(delta.segment(l));
      if (m > 0.0) {
        for (double& x : delta.segment(l)) x *= medians[l] / m;
      }
    }
    delta = project_out_short(delta, short_axes);
  }
  out.delta = std::move(delta);
  out.layer_budgets = medians;
  out.constraint_residual = constraint_residual(out.delta, short_axes);
  const Eigen::VectorXd y = canonical_coords(out.delta, short_axes);
  out.predicted_delta_loss = 0.5 * (short_axes.eigenvalues.array() * y.array().square()).sum();
  out.model_bits = 0.0;
  for (std::size_t l = 0; l < segs.size(); ++l) {
    out.model_bits += static_cast<double>(segs[l].length) * mapper.layer_bits(medians[l], l);
  }
  out.trajectory.clear();
  out.restart = best;
  return out;
}

std::vector<LayerDecision> map_bits(const ParameterVector& weights, std::span<const double> budgets,
                                    const PlannerConfig& cfg) {
  const SegmentMap& segs = weights.segments();
  if (budgets.size() != segs.size()) throw ConfigError("one budget per layer is required");
  const std::vector<int> allowed = normalize_allowed_bits(cfg.allowed_bits);
  const DeltaBitMapper mapper = make_bit_mapper(weights, cfg);
  std::vector<LayerDecision> out;
  for (std::size_t l = 0; l < segs.size(); ++l) {
    LayerDecision d;
    d.layer_id = segs[l].layer_id;
    d.size = segs[l].length;
    d.budget = budgets[l];
    d.fractional_bits = mapper.layer_bits(budgets[l], l);
    d.closed_form_bits = clamp_to_allowed(d.fractional_bits, allowed);
    d.closed_form_quant_rms = quant_error(weights.segment(l), d.closed_form_bits, allowed).rms;
    d.fallback = d.closed_form_quant_rms > cfg.fallback_ratio * budgets[l];
    if (d.fallback) {
      d.bits = bits_from_error_mapping(weights.segment(l), budgets[l], allowed);
      d.mapping = MappingKind::kErrorMapping;
    } else {
      d.bits = d.closed_form_bits;
      d.mapping = MappingKind::kClosedFormula;
    }
    out.push_back(d);
  }
  // The allowed set can jump several widths at once (4 -> 8), so fallbacks
  // may overshoot the size target; revert them, largest saving first.
  if (cfg.solver.target_bits > 0.0 || cfg.target_bits_per_weight > 0.0) {
    const double target = cfg.target_bits_per_weight > 0.0
                              ? cfg.target_bits_per_weight * static_cast<double>(segs.total())
                              : cfg.solver.target_bits;
    auto total = [&] {
      double t = 0.0;
      for (const auto& d : out) t += static_cast<double>(d.size) * d.bits;
      return t;
    };
    while (total() > target) {
      std::size_t pick = out.size();
      double saving = 0.0;
      for (std::size_t l = 0; l < out.size(); ++l) {
        const double s = static_cast<double>(out[l].size) * (out[l].bits - out[l].closed_form_bits);
        if (out[l].fallback && !out[l].reverted && s > saving) {
          saving = s;
          pick = l;
        }
      }
      if (pick == out.size()) break;
      out[pick].reverted = true;
      out[pick].bits = out[pick].closed_form_bits;
      out[pick].mapping = MappingKind::kClosedFormula;
    }
  }
  return out;
}

PlanResult plan(const Objective& objective, const PlannerConfig& cfg_in,
                const CheckpointMetadata* metadata) {
  PlannerConfig cfg = cfg_in;
  cfg.validate();
  cfg.allowed_bits = normalize_allowed_bits(cfg.allowed_bits);
  const std::size_t n = objective.dimension();
  const SegmentMap& segs = objective.segments();
  if (n == 0 || segs.empty()) throw StageError("input", "model has no parameters");
  if (cfg.target_bits_per_weight > 0.0) cfg.solver.target_bits = cfg.target_bits_per_weight * static_cast<double>(n);

  PlanResult result;
  PlanReport& rep = result.report;
  StageClock clock(rep);
  rep.model_checksum = hex(objective.model_checksum());
  rep.data_checksum = hex(objective.data_checksum());
  rep.dimension = n;
  rep.num_layers = segs.size();
  rep.gap_threshold = cfg.gap_threshold;
  rep.aggregation = cfg.aggregation;
  rep.target_bits = cfg.solver.target_bits;
  if (metadata && !metadata->converged) {
    rep.checkpoint_converged = false;
    rep.warnings.push_back("checkpoint is not at a converged point (gradient inf-norm " +
                           std::to_string(metadata->gradient_inf_norm) + ")");
  }
  if (cfg.solver.target_bits <= 0.0) {
    rep.warnings.push_back("no size target: the solver will shrink delta towards zero");
  }

  Checksum input_cs;
  input_cs.update(objective.model_checksum()).update(objective.data_checksum());

  // Neighbourhood checks ahead of Step 1.
  rep.first_order = clock.run("first_order_check", input_cs.value(), [&] { return first_order_check(objective); });
  rep.include_first_order = rep.first_order.gradient_inf_norm >= 1e-3;
  if (rep.include_first_order) {
    rep.warnings.push_back("gradient is not negligible; first-order term reported alongside the quadratic one");
  }
  rep.profile = clock.run("tolerance_profile", input_cs.value(), [&] {
    ToleranceOptions opts;
    opts.directions = cfg.profile_directions;
    opts.seed = cfg.profile_seed;
    return tolerance_profile(objective, cfg.scale_grid, cfg.gap_threshold, opts);
  });
  for (std::size_t l = 0; l < segs.size(); ++l) {
    if (rep.profile.degenerate[l]) {
      rep.warnings.push_back("layer " + std::to_string(segs[l].layer_id) + " failed the gap check at every probed scale");
    }
  }

  // Step 1: spectrum.
  Spectrum spectrum = clock.run("step1_spectrum", input_cs.value(), [&] {
    std::optional<fs::path> cache_file;
    std::string key;
    if (cfg.spectrum_cache) {
      key = spectrum_cache_key(objective.model_checksum(), objective.data_checksum(), cfg.lanczos);
      fs::create_directories(*cfg.spectrum_cache);
      cache_file = *cfg.spectrum_cache / ("spectrum-" + key + ".json");
      if (auto cached = load_spectrum(*cache_file, key)) {
        rep.spectrum_from_cache = true;
        return *cached;
      }
    }
    Spectrum s = lanczos(objective, cfg.lanczos);
    if (cache_file) save_spectrum(*cache_file, s, key);
    return s;
  });
  rep.geometry = clock.run("geometry", spectrum_checksum(spectrum), [&] { return classify_geometry(spectrum); });

  // Step 2: initial scales from the validated neighbourhood.
  const ParameterVector& weights = objective.point();
  rep.init_scales = clock.run("step2_init", input_cs.value(), [&] {
    std::vector<double> scales(segs.size());
    const std::vector<double> rms = weights.segment_rms();
    for (std::size_t l = 0; l < segs.size(); ++l) {
      scales[l] = rep.profile.degenerate[l] ? 1e-3 * rms[l] : cfg.init_fraction * rep.profile.admissible_rms[l];
      if (!(scales[l] > 0.0)) scales[l] = 1e-3;
    }
    return scales;
  });
  cfg.solver.init_scale_per_layer = rep.init_scales;

  // Step 3: short axes and canonical coordinates.
  const ShortAxisSet short_axes = clock.run("step3_short_axes", spectrum_checksum(spectrum), [&] {
    return select_short_axes(spectrum, cfg.solver.m, cfg.axis_selection);
  });
  rep.short_axes_requested = cfg.solver.m;
  rep.short_axes_used = short_axes.size();
  rep.short_axes_clamped = short_axes.clamped;
  if (short_axes.clamped) {
    rep.warnings.push_back("short-axis count clamped from " + std::to_string(cfg.solver.m) + " to " +
                           std::to_string(short_axes.size()) + " certified positive pairs");
  }

  // Step 4: solve with restarts, then aggregate.
  const DeltaBitMapper mapper = make_bit_mapper(weights, cfg);
  std::vector<PerturbationSolution> solutions = clock.run("step4_solve", spectrum_checksum(spectrum), [&] {
    return solve_restarts(short_axes, segs, cfg.solver, mapper);
  });
  result.solution = clock.run("step4_aggregate", spectrum_checksum(spectrum), [&] {
    const double floor = epsilon_floor(n);
    const bool collapsed = std::all_of(solutions.begin(), solutions.end(), [&](const PerturbationSolution& s) {
      return s.delta.norm() < floor && s.size_weight > 0.0 && cfg.solver.target_bits > 0.0 &&
             s.model_bits > cfg.solver.target_bits;
    });
    if (collapsed) throw InfeasibleTarget("every restart collapsed to zero while the size target was unmet");
    return aggregate_restarts(solutions, cfg.aggregation, short_axes, mapper);
  });
  const PerturbationSolution& sol = result.solution;
  for (const auto& s : solutions) {
    rep.restarts.push_back({s.restart, s.objective, s.model_bits, s.constraint_residual, s.iterations,
                            s.converged, s.layer_budgets});
    rep.trajectories.push_back(s.trajectory);
    if (!s.converged) {
      rep.warnings.push_back("restart " + std::to_string(s.restart) + " stopped at the iteration cap");
    }
  }
  if (!solutions.empty()) {
    rep.size_weight = solutions.front().size_weight;
    rep.norm_weight = solutions.front().norm_weight;
  }
  rep.chosen_restart = sol.restart;
  rep.constraint_residual = sol.constraint_residual;
  rep.null_space_certified = null_space_certified(sol, n);

  // Step 5: bits per layer.
  rep.decisions = clock.run("step5_bit_mapping", vector_checksum(sol.delta), [&] {
    return map_bits(weights, sol.layer_budgets, cfg);
  });
  BitPlan bit_plan;
  for (std::size_t l = 0; l < segs.size(); ++l) {
    const LayerDecision& d = rep.decisions[l];
    LayerBits lb;
    lb.layer_id = d.layer_id;
    lb.size = d.size;
    lb.bits = d.bits;
    lb.delta_rms_budget = d.budget;
    lb.mapping = d.mapping;
    lb.achieved_quant_rms = quant_error(weights.segment(l), d.bits, cfg.allowed_bits).rms;
    bit_plan.layers.push_back(lb);
  }

  // Validity of the quadratic model at the final delta.
  clock.run("gap_check", vector_checksum(sol.delta), [&] {
    rep.final_gap = probe_gap(objective, sol.delta);
    rep.predicted_delta_loss = rep.final_gap.second_order;
    rep.first_order_term = rep.final_gap.first_order;
    rep.gap_pass = rep.final_gap.gap < cfg.gap_threshold;
    rep.advisory = !rep.gap_pass;
  });
  if (rep.advisory) rep.warnings.push_back("final delta is outside the validated neighbourhood; plan is advisory");

  // Step 6.
  Checksum plan_cs;
  plan_cs.update(to_json(bit_plan).dump());
  clock.run("step6_output", plan_cs.value(), [&] { bit_plan.validate(segs); });
  rep.spectrum = std::move(spectrum);
  rep.plan = bit_plan;
  result.plan = std::move(bit_plan);
  return result;
}

PlanResult plan(const Checkpoint& checkpoint, const Dataset& calibration, const PlannerConfig& cfg,
                std::size_t threads) {
  if (calibration.empty()) throw StageError("input", "calibration set is empty");
  try {
    calibration.validate();
    checkpoint.spec.validate();
  } catch (const Error& e) {
    throw StageError("input", e.what());
  }
  const NetworkObjective objective(checkpoint.spec, checkpoint.params, calibration, threads);
  return plan(objective, cfg, &checkpoint.metadata);
}

namespace {

Json spectrum_summary(const Spectrum& s) {
  Json values = Json::array(), residuals = Json::array();
  for (Eigen::Index i = 0; i < s.eigenvalues.size(); ++i) {
    values.push_back(s.eigenvalues[i]);
    residuals.push_back(s.residuals[i]);
  }
  return {{"count", s.size()},
          {"dimension", s.dimension},
          {"max_eigenvalue", s.empty() ? 0.0 : s.max_eigenvalue()},
          {"min_eigenvalue", s.empty() ? 0.0 : s.min_eigenvalue()},
          {"residual_tolerance", s.residual_tolerance},
          {"iterations", s.iterations},
          {"restarts", s.restarts},
          {"eigenvalues", values},
          {"residuals", residuals}};
}

Json trajectory_json(const std::vector<TrajectoryPoint>& t) {
  Json out = Json::array();
  for (const auto& p : t) out.push_back({p.iteration, p.objective, p.constraint_residual, p.model_bits});
  return out;
}

}  // namespace

Json to_json(const PlanReport& r, bool timings) {
  Json profile_layers = Json::array();
  for (std::size_t l = 0; l < r.profile.admissible_rms.size(); ++l) {
    Json probes = Json::array();
    for (std::size_t s = 0; s < r.profile.scale_grid.size(); ++s) {
      const auto& p = r.profile.probe(l, s);
      probes.push_back({{"scale", p.scale},
                        {"gap", p.gap},
                        {"actual", p.actual_delta_loss},
                        {"predicted", p.predicted_delta_loss},
                        {"pass", p.pass}});
    }
    profile_layers.push_back({{"layer_id", r.profile.probes.empty() ? l : r.profile.probe(l, 0).layer_id},
                              {"admissible_rms", r.profile.admissible_rms[l]},
                              {"degenerate", static_cast<bool>(r.profile.degenerate[l])},
                              {"probes", probes}});
  }
  Json restarts = Json::array();
  for (std::size_t k = 0; k < r.restarts.size(); ++k) {
    const auto& s = r.restarts[k];
    restarts.push_back({{"restart", s.restart},
                        {"objective", s.objective},
                        {"model_bits", s.model_bits},
                        {"constraint_residual", s.constraint_residual},
                        {"iterations", s.iterations},
                        {"converged", s.converged},
                        {"layer_budgets", s.layer_budgets},
                        {"trajectory", k < r.trajectories.size() ? trajectory_json(r.trajectories[k]) : Json::array()}});
  }
  Json decisions = Json::array();
  for (const auto& d : r.decisions) {
    decisions.push_back({{"layer_id", d.layer_id},
                         {"size", d.size},
                         {"budget", d.budget},
                         {"fractional_bits", d.fractional_bits},
                         {"closed_form_bits", d.closed_form_bits},
                         {"closed_form_quant_rms", d.closed_form_quant_rms},
                         {"fallback", d.fallback},
                         {"reverted", d.reverted},
                         {"bits", d.bits},
                         {"mapping_used", to_string(d.mapping)}});
  }
  Json stages = Json::array();
  for (const auto& s : r.stages) {
    Json e = {{"stage", s.stage}, {"input_checksum", s.input_checksum}};
    if (timings) e["seconds"] = s.seconds;
    stages.push_back(e);
  }
  return {{"schema_version", kSchemaVersion},
          {"kind", "plan_report"},
          {"model_checksum", r.model_checksum},
          {"data_checksum", r.data_checksum},
          {"dimension", r.dimension},
          {"num_layers", r.num_layers},
          {"checkpoint_converged", r.checkpoint_converged},
          {"warnings", r.warnings},
          {"first_order", {{"gradient_inf_norm", r.first_order.gradient_inf_norm},
                           {"fraction_below", r.first_order.fraction_below},
                           {"small_threshold", r.first_order.small_threshold},
                           {"include_first_order", r.include_first_order}}},
          {"tolerance_profile", {{"threshold", r.profile.threshold},
                                 {"directions", r.profile.directions},
                                 {"scale_grid", r.profile.scale_grid},
                                 {"layers", profile_layers}}},
          {"spectrum", spectrum_summary(r.spectrum)},
          {"spectrum_from_cache", r.spectrum_from_cache},
          {"geometry", {{"class", to_string(r.geometry.kind)},
                        {"max_eigenvalue", r.geometry.max_eigenvalue},
                        {"min_eigenvalue", r.geometry.min_eigenvalue},
                        {"max_residual", r.geometry.max_residual},
                        {"tolerance", r.geometry.tolerance},
                        {"negative_count", r.geometry.negative_count}}},
          {"short_axes", {{"requested", r.short_axes_requested},
                          {"used", r.short_axes_used},
                          {"clamped", r.short_axes_clamped}}},
          {"solver", {{"target_bits", r.target_bits},
                      {"size_weight", r.size_weight},
                      {"norm_weight", r.norm_weight},
                      {"init_scales", r.init_scales},
                      {"aggregation", to_string(r.aggregation)},
                      {"chosen_restart", r.chosen_restart},
                      {"constraint_residual", r.constraint_residual},
                      {"null_space_certified", r.null_space_certified},
                      {"restarts", restarts}}},
          {"decisions", decisions},
          {"bit_plan", to_json(r.plan)},
          {"predicted_delta_loss", r.predicted_delta_loss},
          {"first_order_term", r.first_order_term},
          {"gap_check", {{"actual_plus", r.final_gap.actual_plus},
                         {"actual_minus", r.final_gap.actual_minus},
                         {"first_order", r.final_gap.first_order},
                         {"second_order", r.final_gap.second_order},
                         {"gap", r.final_gap.gap},
                         {"threshold", r.gap_threshold},
                         {"pass", r.gap_pass}}},
          {"advisory", r.advisory},
          {"stages", stages}};
}

void write_plan_csv_bundle(const fs::path& dir, const PlanReport& r) {
  fs::create_directories(dir);
  auto open = [&](const char* name) {
    std::ofstream out(dir / name, std::ios::trunc);
    if (!out) throw IoError("cannot write " + (dir / name).string());
    out.precision(17);
    return out;
  };
  {
    std::ofstream out = open("trajectories.csv");
    out << "restart,iteration,objective,constraint_residual,model_bits\n";
    for (std::size_t k = 0; k < r.trajectories.size(); ++k) {
      for (const auto& p : r.trajectories[k]) {
        out << r.restarts[k].restart << ',' << p.iteration << ',' << p.objective << ','
            << p.constraint_residual << ',' << p.model_bits << '\n';
      }
    }
  }
  {
    std::ofstream out = open("profile.csv");
    write_profile_csv(out, r.profile);
  }
  {
    std::ofstream out = open("spectrum.csv");
    out << "index,eigenvalue,residual\n";
    for (Eigen::Index i = 0; i < r.spectrum.eigenvalues.size(); ++i) {
      out << i << ',' << r.spectrum.eigenvalues[i] << ',' << r.spectrum.residuals[i] << '\n';
    }
  }
  {
    std::ofstream out = open("decisions.csv");
    out << "layer_id,size,budget,fractional_bits,closed_form_bits,closed_form_quant_rms,fallback,reverted,bits,mapping\n";
    for (const auto& d : r.decisions) {
      out << d.layer_id << ',' << d.size << ',' << d.budget << ',' << d.fractional_bits << ','
          << d.closed_form_bits << ',' << d.closed_form_quant_rms << ',' << (d.fallback ? 1 : 0) << ','
          << (d.reverted ? 1 : 0) << ','
          << d.bits << ',' << to_string(d.mapping) << '\n';
    }
  }
}

}  // namespace cetq
