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
#include <span>
#include <string>
#include <vector>

#include "cetq/parameter_vector.hpp"

namespace cetq {

// Per-tensor uniform affine quantisation:
//   code = clamp(round(w / step) + zero_point, 0, 2^b - 1)
//   step = (max - min) / (2^b - 1),  zero_point = -round(min / step)
// Rounding is half-to-even throughout.

/// Bit width meaning "leave this layer in full precision".
inline constexpr int kFullPrecisionBits = 32;
/// Step used when a tensor has zero range.
inline constexpr double kDegenerateStep = 1e-12;

/// {2, 3, 4, 8}.
const std::vector<int>& default_allowed_bits();

/// Sorts, de-duplicates and range-checks (2..16) an allowed bit set.
std::vector<int> normalize_allowed_bits(std::vector<int> bits);

struct QuantParams {
  double step = 0.0;
  std::int64_t zero_point = 0;
  int bits = 0;
  double range_min = 0.0;
  double range_max = 0.0;

  bool degenerate() const { return range_max == range_min; }
  std::int64_t max_code() const { return (std::int64_t{1} << bits) - 1; }
};

struct QuantizedTensor {
  std::vector<std::int32_t> codes;
  QuantParams params;
  std::vector<std::size_t> shape;
};

/// Throws ConfigError when `bits` is not in `allowed` or the tensor is empty.
QuantParams quant_params(std::span<const double> w, int bits,
                         std::span<const int> allowed = default_allowed_bits());

QuantizedTensor quantize(std::span<const double> w, const QuantParams& qp,
                         std::vector<std::size_t> shape = {});
std::vector<double> dequantize(const QuantizedTensor& q);

/// dequantize(quantize(w, quant_params(w, bits))).
std::vector<double> fake_quantize(std::span<const double> w, int bits,
                                  std::span<const int> allowed = default_allowed_bits());

struct QuantError {
  double rms = 0.0;
  double mse = 0.0;
  double max_abs = 0.0;
};

/// Error of w - fake_quantize(w, bits).
QuantError quant_error(std::span<const double> w, int bits,
                       std::span<const int> allowed = default_allowed_bits());

/// Fractional bit width log2(1 / (magnitude + alpha)), before clamping.
double bits_from_delta(double magnitude, double alpha);
/// d bits_from_delta / d magnitude.
double bits_from_delta_slope(double magnitude, double alpha);

/// round(bits) clamped to [min, max] of `allowed`, then snapped to the
/// nearest allowed width (ties go to the wider one).
int clamp_to_allowed(double bits, std::span<const int> allowed = default_allowed_bits());

/// Smallest allowed width whose quantisation RMS fits `budget_rms`; the
/// widest allowed width when none does.
int bits_from_error_mapping(std::span<const double> w, double budget_rms,
                            std::span<const int> allowed = default_allowed_bits());

/// How a layer's slice of the perturbation is reduced to one magnitude.
enum class DeltaReduction { kRms, kMeanAbs };

/// The differentiable delta -> bits mapping used inside the solver.
/// Layer l's magnitude is measured in units of `layer_scales[l]` before the
/// closed formula is applied (empty means unit scale everywhere).
struct DeltaBitMapper {
  double alpha = 1e-6;
  DeltaReduction reduction = DeltaReduction::kRms;
  std::vector<double> layer_scales;

  double scale(std::size_t layer) const { return layer_scales.empty() ? 1.0 : layer_scales[layer]; }
  double magnitude(std::span<const double> delta) const;
  /// Writes d magnitude / d delta_j into `out`.
  void magnitude_gradient(std::span<const double> delta, std::span<double> out) const;
  /// Fractional bits for an unscaled magnitude of layer `layer`.
  double layer_bits(double magnitude, std::size_t layer) const { return bits(magnitude / scale(layer)); }
  double bits(double magnitude) const { return bits_from_delta(magnitude, alpha); }
  double slope(double magnitude) const { return bits_from_delta_slope(magnitude, alpha); }
};

/// (max - min) / sqrt(12): the rounding-noise RMS of a one-level-per-range
/// quantiser, i.e. the error of b bits is about this / (2^b - 1). Unit for a
/// zero-range tensor.
double rounding_noise_scale(std::span<const double> w);

enum class MappingKind { kClosedFormula, kErrorMapping, kUniform, kRandom, kSearch, kFullPrecision };
std::string to_string(MappingKind kind);
MappingKind mapping_kind_from_string(const std::string& s);

struct LayerBits {
  std::size_t layer_id = 0;
  std::size_t size = 0;
  int bits = kFullPrecisionBits;
  double delta_rms_budget = 0.0;
  double achieved_quant_rms = 0.0;
  MappingKind mapping = MappingKind::kFullPrecision;

  bool operator==(const LayerBits&) const = default;
};

/// Per-layer bit widths. Ratio is against a 32-bit baseline.
struct BitPlan {
  std::vector<LayerBits> layers;

  std::size_t total_params() const;
  std::size_t total_bits() const;
  double compression_ratio() const;
  double average_bits() const;
  std::vector<int> bits() const;

  /// Throws ConfigError unless the plan assigns every segment exactly once.
  void validate(const SegmentMap& segments) const;

  /// Same bit width everywhere; fills achieved RMS from `weights`.
  static BitPlan uniform(const ParameterVector& weights, int bits, MappingKind kind = MappingKind::kUniform);
  /// Explicit widths, one per segment; fills achieved RMS from `weights`.
  static BitPlan from_bits(const ParameterVector& weights, std::span<const int> bits, MappingKind kind);

  bool operator==(const BitPlan&) const = default;
};

/// Quantise-dequantise each segment of `weights` at its planned width
/// (full-precision layers are copied unchanged).
ParameterVector apply_plan(const ParameterVector& weights, const BitPlan& plan);

}  // namespace cetq
