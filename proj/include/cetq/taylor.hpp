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
#include <vector>

#include "cetq/model.hpp"
#include "cetq/parameter_vector.hpp"

namespace cetq {

// Second-order model of the loss change caused by a weight perturbation,
// and the measured gap between that model and the real loss change.

inline constexpr double kDefaultGapThreshold = 1e-3;

/// g^T delta (when `include_first_order`) + 1/2 delta^T H delta, using one
/// exact Hessian-vector product.
double predicted_delta_loss(const Objective& objective, const ParameterVector& delta,
                            bool include_first_order);

/// 1/2 delta^T H delta.
double quadratic_delta(const Objective& objective, const ParameterVector& delta);

/// Full breakdown of one +/- probe.
struct GapProbe {
  double actual_plus = 0.0;      // f(w + delta) - f(w)
  double actual_minus = 0.0;     // f(w - delta) - f(w)
  double first_order = 0.0;      // g^T delta
  double second_order = 0.0;     // 1/2 delta^T H delta
  double gap = 0.0;              // max over signs of |actual - prediction|

  /// (actual_plus + actual_minus) / 2, which cancels the first-order term.
  double symmetric_average() const { return 0.5 * (actual_plus + actual_minus); }
};

GapProbe probe_gap(const Objective& objective, const ParameterVector& delta);

/// max over s in {+1, -1} of |(f(w + s delta) - f(w)) - (s g^T delta + 1/2 delta^T H delta)|.
double taylor_gap(const Objective& objective, const ParameterVector& delta);

/// Single probe of one layer at one scale.
struct GapProbeResult {
  std::size_t layer_id = 0;
  double scale = 0.0;           // RMS per weight of the perturbation
  double gap = 0.0;
  double actual_delta_loss = 0.0;
  double predicted_delta_loss = 0.0;
  bool pass = false;
};

struct ToleranceProfile {
  std::vector<double> scale_grid;
  double threshold = kDefaultGapThreshold;
  std::size_t directions = 8;
  /// Largest passing scale per layer; 0 when nothing passed.
  std::vector<double> admissible_rms;
  /// Layers where no scale passed.
  std::vector<bool> degenerate;
  /// Worst-direction result per (layer, scale), layer-major.
  std::vector<GapProbeResult> probes;

  const GapProbeResult& probe(std::size_t layer, std::size_t scale_index) const {
    return probes[layer * scale_grid.size() + scale_index];
  }
};

struct ToleranceOptions {
  std::size_t directions = 8;
  std::uint64_t seed = 0;
};

/// Per-layer largest perturbation RMS whose Taylor gap stays below `threshold`.
///
/// Each layer is probed with the same K random unit-RMS directions at every
/// scale, so the recorded gap curve varies only with scale.
ToleranceProfile tolerance_profile(const Objective& objective, std::span<const double> scale_grid,
                                   double threshold = kDefaultGapThreshold,
                                   const ToleranceOptions& options = {});

/// {1e-4, 3e-4, 1e-3, ..., 1e-1}.
std::vector<double> default_scale_grid();

struct FirstOrderReport {
  double gradient_inf_norm = 0.0;
  double fraction_below = 0.0;  // share of |g_i| < small_threshold
  double small_threshold = 1e-5;
};

FirstOrderReport first_order_check(const Objective& objective, double small_threshold = 1e-5);

/// Fraction of adjacent grid pairs over which the gap does not decrease, per layer.
double gap_monotone_fraction(const ToleranceProfile& profile);

/// CSV rows: layer_id,scale,gap,actual,predicted,pass
void write_profile_csv(std::ostream& out, const ToleranceProfile& profile);

}  // namespace cetq
