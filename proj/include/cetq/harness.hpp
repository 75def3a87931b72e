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
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "cetq/io.hpp"
#include "cetq/model.hpp"
#include "cetq/quantizer.hpp"
#include "cetq/subspace.hpp"

namespace cetq {

// ---------------------------------------------------------------------------
// Synthetic data

enum class GeneratorKind { kTwoGaussians, kTwoMoons, kTeacher };
std::string to_string(GeneratorKind kind);
GeneratorKind generator_kind_from_string(const std::string& s);

struct GeneratorConfig {
  GeneratorKind kind = GeneratorKind::kTwoGaussians;
  std::size_t train = 512;
  std::size_t calibration = 256;
  std::size_t eval = 512;
  std::size_t input_dim = 2;
  /// Class separation (gaussians) or label noise scale (moons, teacher).
  double separation = 2.0;
  double noise = 0.1;
  /// Teacher: hidden width and output width.
  std::size_t teacher_hidden = 8;
  std::size_t teacher_outputs = 1;
  std::uint64_t seed = 0;
};

struct DatasetSplits {
  Dataset train;
  Dataset calibration;
  Dataset eval;
};

DatasetSplits generate_data(const GeneratorConfig& cfg);

// ---------------------------------------------------------------------------
// Training

struct TrainConfig {
  std::size_t epochs = 3000;  // full-batch steps
  double learning_rate = 0.01;
  std::size_t decay_interval = 1000;
  double gradient_tolerance = 1e-3;
  std::uint64_t seed = 0;
  std::size_t threads = 1;
};

/// Full-batch Adam from `init_params(spec, seed)` until the gradient
/// inf-norm drops below the tolerance or the epoch cap is reached.
Checkpoint train_toy(const ModelSpec& spec, const Dataset& train, const TrainConfig& cfg);

// ---------------------------------------------------------------------------
// Evaluation and baselines

struct EvalResult {
  double full_loss = 0.0;
  double full_accuracy = 0.0;
  double quant_loss = 0.0;
  double quant_accuracy = 0.0;
  double loss_drop = 0.0;      // quant - full
  double accuracy_drop = 0.0;  // full - quant
  double compression_ratio = 0.0;
  std::size_t total_bits = 0;
  double average_bits = 0.0;
  std::vector<double> layer_quant_rms;
  /// The quantisation error seen as a perturbation: deq(quant(W)) - W.
  double implied_delta_norm = 0.0;
  double implied_predicted_delta_loss = 0.0;
  double implied_gap = 0.0;
};

EvalResult evaluate_plan(const Checkpoint& checkpoint, const BitPlan& plan, const Dataset& eval_set,
                         std::size_t threads = 1);

Json to_json(const EvalResult& r);

BitPlan baseline_uniform(const ParameterVector& weights, int bits,
                         std::span<const int> allowed = default_allowed_bits());

/// Random widths, lowered one step at a time on random layers until the
/// total fits `target_total_bits`. Throws InfeasibleTarget when even the
/// narrowest width everywhere does not fit.
BitPlan baseline_random(const ParameterVector& weights, double target_total_bits, std::uint64_t seed,
                        std::span<const int> allowed = default_allowed_bits());

// ---------------------------------------------------------------------------
// Exhaustive search

inline constexpr std::size_t kMaxSearchLayers = 8;

struct SearchPoint {
  std::vector<int> bits;
  std::size_t total_bits = 0;
  double loss = 0.0;
};

struct SearchResult {
  std::vector<int> allowed;
  std::size_t layers = 0;
  std::vector<SearchPoint> points;  // lexicographic in the allowed order
  std::vector<std::size_t> front;   // Pareto-optimal points, ascending size

  /// Points with size <= total_bits and loss <= loss, at least one strictly.
  std::size_t dominating_count(std::size_t total_bits, double loss) const;
};

/// Evaluates every assignment on `eval_set`. Refuses more than 8 layers.
SearchResult brute_force_search(const Checkpoint& checkpoint, const Dataset& eval_set,
                                std::span<const int> allowed = default_allowed_bits(),
                                std::size_t threads = 1);

Json to_json(const SearchResult& r);

// ---------------------------------------------------------------------------
// Monte Carlo comparisons

struct MonteCarloResult {
  double reference_loss = 0.0;
  std::vector<double> losses;
  std::vector<std::size_t> total_bits;
  /// Share of random plans whose loss is strictly above the reference.
  double win_rate = 0.0;
};

/// `count` random plans at `target_total_bits` against a reference plan.
MonteCarloResult compare_random_plans(const Checkpoint& checkpoint, const Dataset& eval_set,
                                      const BitPlan& reference, double target_total_bits,
                                      std::size_t count, std::uint64_t seed,
                                      std::span<const int> allowed = default_allowed_bits(),
                                      std::size_t threads = 1);

double win_rate(double reference_loss, std::span<const double> losses);

struct DirectionComparison {
  double reference_delta_loss = 0.0;
  std::vector<double> random_delta_losses;
  /// Random directions whose loss change is strictly larger.
  std::size_t beaten = 0;
};

/// Measured loss change of `delta` against `count` Gaussian directions of
/// the same norm.
DirectionComparison compare_random_directions(const Objective& objective, const ParameterVector& delta,
                                              std::size_t count, std::uint64_t seed);

struct AblationRow {
  std::size_t m = 0;
  std::size_t used = 0;
  double delta_loss = 0.0;   // measured at the fixed norm
  double quadratic = 0.0;    // 1/2 delta^T H delta at the fixed norm
  double seconds = 0.0;
};

/// For each m: solve with m short axes, rescale delta to `norm`, measure.
std::vector<AblationRow> eigen_count_ablation(const Objective& objective, const Spectrum& spectrum,
                                              std::span<const std::size_t> ms, double norm,
                                              const SolverConfig& cfg,
                                              const DeltaBitMapper& mapper = {});

void write_ablation_csv(std::ostream& out, std::span<const AblationRow> rows);

}  // namespace cetq
