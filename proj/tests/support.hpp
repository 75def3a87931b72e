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


// Shared fixtures for the unit tests.

#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "cetq/model.hpp"
#include "cetq/parameter_vector.hpp"

namespace cetq::testing {

inline Eigen::MatrixXd random_symmetric(Eigen::Index n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  Eigen::MatrixXd a(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) a(i, j) = normal(rng);
  }
  return 0.5 * (a + a.transpose());
}

inline Eigen::VectorXd random_vector(Eigen::Index n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  Eigen::VectorXd v(n);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = normal(rng);
  return v;
}

inline ParameterVector random_direction(const SegmentMap& segs, std::uint64_t seed, bool unit = true) {
  ParameterVector v(segs, random_vector(static_cast<Eigen::Index>(segs.total()), seed));
  if (unit) v *= 1.0 / v.norm();
  return v;
}

/// Deterministic weights that do not depend on the standard library's
/// distribution implementations.
inline ParameterVector formula_params(const ModelSpec& spec, double amplitude = 0.5) {
  ParameterVector p(spec.segment_map());
  for (std::size_t i = 0; i < p.size(); ++i) p[i] = amplitude * std::sin(1.3 * static_cast<double>(i) + 0.7);
  return p;
}

/// Classification batch with inputs on a fixed trigonometric pattern.
inline Dataset formula_batch(std::size_t inputs, std::size_t classes, std::size_t samples,
                             Split split = Split::kCalibration) {
  Dataset d(Shape{inputs, 1, 1}, classes, split);
  std::vector<double> x(inputs);
  for (std::size_t s = 0; s < samples; ++s) {
    for (std::size_t j = 0; j < inputs; ++j) {
      x[j] = std::cos(0.9 * static_cast<double>(s) + 1.7 * static_cast<double>(j) + 0.3);
    }
    d.add(x, static_cast<std::int32_t>((s * 7 + 3) % classes));
  }
  return d;
}

/// Regression batch with targets of width `outputs`.
inline Dataset formula_regression(std::size_t inputs, std::size_t outputs, std::size_t samples) {
  Dataset d(Shape{inputs, 1, 1}, 1, Split::kCalibration, outputs);
  std::vector<double> x(inputs), t(outputs);
  for (std::size_t s = 0; s < samples; ++s) {
    for (std::size_t j = 0; j < inputs; ++j) x[j] = std::sin(0.7 * static_cast<double>(s + 2 * j) + 0.1);
    for (std::size_t j = 0; j < outputs; ++j) t[j] = std::cos(0.4 * static_cast<double>(s) + j);
    d.add(x, 0, t);
  }
  return d;
}

inline double relative_error(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-300});
}

inline double relative_error(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  return (a - b).norm() / std::max({a.norm(), b.norm(), 1e-300});
}

}  // namespace cetq::testing
