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

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "cetq/io.hpp"
#include "cetq/model.hpp"
#include "cetq/quantizer.hpp"
#include "cetq/spectral.hpp"
#include "cetq/subspace.hpp"
#include "cetq/taylor.hpp"

namespace cetq {

enum class AggregationRule { kBestObjective, kMedianBudget };
std::string to_string(AggregationRule rule);
AggregationRule aggregation_rule_from_string(const std::string& s);

/// Units of a layer's perturbation magnitude before the closed formula.
/// kAbsolute applies log2(1 / (|delta| + alpha)) to raw weight units;
/// kRoundingNoise divides by the layer's rounding_noise_scale first, so the
/// formula returns about the width a uniform quantiser needs for that error.
enum class BudgetUnits { kAbsolute, kRoundingNoise };
std::string to_string(BudgetUnits units);
BudgetUnits budget_units_from_string(const std::string& s);

struct PlannerConfig {
  LanczosConfig lanczos;
  /// `solver.restarts` is the restart count K; `solver.target_bits` is
  /// overwritten from `target_bits_per_weight` when that is positive.
  SolverConfig solver;
  /// Average bits per weight allowed; 0 leaves the size term off.
  double target_bits_per_weight = 0.0;
  double gap_threshold = kDefaultGapThreshold;
  std::vector<int> allowed_bits = default_allowed_bits();
  double alpha = 1e-6;
  DeltaReduction reduction = DeltaReduction::kRms;
  BudgetUnits budget_units = BudgetUnits::kRoundingNoise;
  AxisSelection axis_selection = AxisSelection::kLargest;
  AggregationRule aggregation = AggregationRule::kBestObjective;
  /// Closed-formula widths whose real quantisation RMS exceeds the budget
  /// by more than this factor are replaced by the error mapping.
  double fallback_ratio = 1.25;
  std::vector<double> scale_grid = default_scale_grid();
  std::size_t profile_directions = 8;
  std::uint64_t profile_seed = 0;
  /// Initial sigma per layer = this * admissible RMS from the tolerance profile.
  double init_fraction = 0.1;
  /// Spectra are cached here when set.
  std::optional<std::filesystem::path> spectrum_cache;

  void validate() const;
};

/// Step-5 provenance for one layer.
struct LayerDecision {
  std::size_t layer_id = 0;
  std::size_t size = 0;
  double budget = 0.0;
  double fractional_bits = 0.0;
  int closed_form_bits = 0;
  double closed_form_quant_rms = 0.0;
  bool fallback = false;
  /// Fallback undone because it pushed the plan over the size target.
  bool reverted = false;
  int bits = 0;
  MappingKind mapping = MappingKind::kClosedFormula;
};

struct StageRecord {
  std::string stage;
  std::string input_checksum;
  double seconds = 0.0;
};

struct RestartSummary {
  std::size_t restart = 0;
  double objective = 0.0;
  double model_bits = 0.0;
  double constraint_residual = 0.0;
  std::size_t iterations = 0;
  bool converged = false;
  std::vector<double> layer_budgets;
};

struct PlanReport {
  std::string model_checksum;
  std::string data_checksum;
  std::size_t dimension = 0;
  std::size_t num_layers = 0;
  bool checkpoint_converged = true;
  std::vector<std::string> warnings;

  FirstOrderReport first_order;
  bool include_first_order = false;
  ToleranceProfile profile;

  Spectrum spectrum;  // eigenvectors are not serialised
  bool spectrum_from_cache = false;
  GeometryClass geometry;
  std::size_t short_axes_requested = 0;
  std::size_t short_axes_used = 0;
  bool short_axes_clamped = false;

  std::vector<double> init_scales;
  double target_bits = 0.0;
  double size_weight = 0.0;
  double norm_weight = 0.0;
  std::vector<RestartSummary> restarts;
  std::vector<std::vector<TrajectoryPoint>> trajectories;
  std::size_t chosen_restart = 0;
  AggregationRule aggregation = AggregationRule::kBestObjective;
  double constraint_residual = 0.0;
  bool null_space_certified = false;

  std::vector<LayerDecision> decisions;
  BitPlan plan;
  /// 1/2 delta^T H delta of the final delta.
  double predicted_delta_loss = 0.0;
  /// g^T delta of the final delta.
  double first_order_term = 0.0;
  GapProbe final_gap;
  double gap_threshold = kDefaultGapThreshold;
  bool gap_pass = false;
  /// Set when the final delta left the region where the quadratic model holds.
  bool advisory = false;

  std::vector<StageRecord> stages;
};

struct PlanResult {
  BitPlan plan;
  PlanReport report;
  PerturbationSolution solution;
};

/// Picks one solution out of several restarts. Best-objective returns the
/// lowest-J restart. Median-budget sets every layer's budget to the median
/// over restarts and rescales the best restart's delta to match, keeping it
/// in the long-axis subspace.
PerturbationSolution aggregate_restarts(const std::vector<PerturbationSolution>& solutions,
                                        AggregationRule rule, const ShortAxisSet& short_axes,
                                        const DeltaBitMapper& mapper);

/// The solver's bit mapper for `weights` under `cfg`.
DeltaBitMapper make_bit_mapper(const ParameterVector& weights, const PlannerConfig& cfg);

/// Step 5: budget -> bits with the closed formula, falling back to the
/// error mapping for layers whose real error overshoots the budget. When
/// the fallbacks push the plan over the size target they are undone,
/// largest saving first.
std::vector<LayerDecision> map_bits(const ParameterVector& weights, std::span<const double> budgets,
                                    const PlannerConfig& cfg);

/// Runs the whole pipeline against `objective`; the quantised weights are
/// `objective.point()`. Stage failures are rethrown as StageError.
PlanResult plan(const Objective& objective, const PlannerConfig& cfg,
                const CheckpointMetadata* metadata = nullptr);

PlanResult plan(const Checkpoint& checkpoint, const Dataset& calibration, const PlannerConfig& cfg,
                std::size_t threads = 1);

/// `timings = false` drops wall-clock fields so reports compare byte for byte.
Json to_json(const PlanReport& report, bool timings = true);

/// trajectories.csv, profile.csv, spectrum.csv and decisions.csv.
void write_plan_csv_bundle(const std::filesystem::path& dir, const PlanReport& report);

}  // namespace cetq
