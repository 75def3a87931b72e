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

#include "cetq/taylor.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>
#include <random>

#include "cetq/error.hpp"

namespace cetq {

namespace {

void require_finite(double v, const char* what) {
  if (!std::isfinite(v)) throw NumericalError(std::string("non-finite ") + what);
}

}  // namespace

double quadratic_delta(const Objective& objective, const ParameterVector& delta) {
  const double q = 0.5 * delta.dot(objective.hvp(delta));
  require_finite(q, "second-order term");
  return q;
}

double predicted_delta_loss(const Objective& objective, const ParameterVector& delta,
                            bool include_first_order) {
  double out = quadratic_delta(objective, delta);
  if (include_first_order) out += objective.gradient().dot(delta);
  require_finite(out, "predicted loss change");
  return out;
}

GapProbe probe_gap(const Objective& objective, const ParameterVector& delta) {
  GapProbe p;
  const double base = objective.loss();
  p.actual_plus = objective.perturbed_loss(delta) - base;
  p.actual_minus = objective.perturbed_loss(-delta) - base;
  p.first_order = objective.gradient().dot(delta);
  p.second_order = quadratic_delta(objective, delta);
  p.gap = std::max(std::abs(p.actual_plus - (p.first_order + p.second_order)),
                   std::abs(p.actual_minus - (-p.first_order + p.second_order)));
  require_finite(p.gap, "taylor gap");
  return p;
}

double taylor_gap(const Objective& objective, const ParameterVector& delta) {
  return probe_gap(objective, delta).gap;
}

std::vector<double> default_scale_grid() { return {1e-4, 3e-4, 1e-3, 3e-3, 1e-2, 3e-2, 1e-1}; }

ToleranceProfile tolerance_profile(const Objective& objective, std::span<const double> scale_grid,
                                   double threshold, const ToleranceOptions& options) {
  if (scale_grid.empty()) throw ConfigError("scale grid is empty");
  for (std::size_t i = 0; i < scale_grid.size(); ++i) {
    if (!(scale_grid[i] > 0.0) || (i > 0 && scale_grid[i] <= scale_grid[i - 1])) {
      throw ConfigError("scale grid must be positive and strictly ascending");
    }
  }
  if (options.directions == 0) throw ConfigError("tolerance profile needs at least one direction");

  const SegmentMap& segs = objective.segments();
  ToleranceProfile profile;
  profile.scale_grid.assign(scale_grid.begin(), scale_grid.end());
  profile.threshold = threshold;
  profile.directions = options.directions;
  profile.admissible_rms.assign(segs.size(), 0.0);
  profile.degenerate.assign(segs.size(), false);

  const double base = objective.loss();
  const ParameterVector grad = objective.gradient();

  for (std::size_t l = 0; l < segs.size(); ++l) {
    // Unit-RMS directions on this layer only; their curvature is reused across scales.
    std::mt19937_64 rng(options.seed * 1000003ULL + l);
    std::normal_distribution<double> normal;
    std::vector<ParameterVector> dirs;
    std::vector<double> slope, curvature;
    for (std::size_t k = 0; k < options.directions; ++k) {
      ParameterVector d(segs);
      auto seg = d.segment(l);
      for (double& x : seg) x = normal(rng);
      const double rms = d.segment_rms(l);
      if (rms > 0.0) d *= 1.0 / rms;
      slope.push_back(grad.dot(d));
      curvature.push_back(0.5 * d.dot(objective.hvp(d)));
      dirs.push_back(std::move(d));
    }

    for (double s : scale_grid) {
      GapProbeResult worst{segs[l].layer_id, s, -1.0, 0.0, 0.0, false};
      for (std::size_t k = 0; k < dirs.size(); ++k) {
        const ParameterVector delta = dirs[k] * s;
        const double second = curvature[k] * s * s;
        const double first = slope[k] * s;
        const double plus = objective.perturbed_loss(delta) - base;
        const double minus = objective.perturbed_loss(-delta) - base;
        const double gap =
            std::max(std::abs(plus - (first + second)), std::abs(minus - (-first + second)));
        require_finite(gap, "taylor gap");
        if (gap > worst.gap) {
          worst.gap = gap;
          worst.actual_delta_loss = plus;
          worst.predicted_delta_loss = first + second;
        }
      }
      worst.pass = worst.gap < threshold;
      if (worst.pass) profile.admissible_rms[l] = s;
      profile.probes.push_back(worst);
    }
    profile.degenerate[l] = profile.admissible_rms[l] == 0.0;
  }
  return profile;
}

FirstOrderReport first_order_check(const Objective& objective, double small_threshold) {
  const ParameterVector g = objective.gradient();
  FirstOrderReport r;
  r.small_threshold = small_threshold;
  if (g.size() == 0) return r;
  std::size_t small = 0;
  for (std::size_t i = 0; i < g.size(); ++i) {
    r.gradient_inf_norm = std::max(r.gradient_inf_norm, std::abs(g[i]));
    if (std::abs(g[i]) < small_threshold) ++small;
  }
  r.fraction_below = static_cast<double>(small) / static_cast<double>(g.size());
  return r;
}

double gap_monotone_fraction(const ToleranceProfile& profile) {
  const std::size_t n = profile.scale_grid.size();
  if (n < 2) return 1.0;
  std::size_t pairs = 0, ok = 0;
  const std::size_t layers = profile.probes.size() / n;
  for (std::size_t l = 0; l < layers; ++l) {
    for (std::size_t i = 0; i + 1 < n; ++i) {
      ++pairs;
      if (profile.probe(l, i + 1).gap >= profile.probe(l, i).gap) ++ok;
    }
  }
  return static_cast<double>(ok) / static_cast<double>(pairs);
}

void write_profile_csv(std::ostream& out, const ToleranceProfile& profile) {
  out << "layer_id,scale,gap,actual,predicted,pass\n";
  out.precision(17);
  for (const auto& p : profile.probes) {
    out << p.layer_id << ',' << p.scale << ',' << p.gap << ',' << p.actual_delta_loss << ','
        << p.predicted_delta_loss << ',' << (p.pass ? 1 : 0) << '\n';
  }
}

}  // namespace cetq
