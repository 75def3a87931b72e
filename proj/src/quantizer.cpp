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

#include "cetq/quantizer.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "cetq/error.hpp"

namespace cetq {

namespace {

// Half-to-even under the default floating-point environment.
double round_even(double x) { return std::nearbyint(x); }

bool contains(std::span<const int> allowed, int bits) {
  return std::find(allowed.begin(), allowed.end(), bits) != allowed.end();
}

}  // namespace

const std::vector<int>& default_allowed_bits() {
  static const std::vector<int> bits{2, 3, 4, 8};
  return bits;
}

std::vector<int> normalize_allowed_bits(std::vector<int> bits) {
  std::sort(bits.begin(), bits.end());
  bits.erase(std::unique(bits.begin(), bits.end()), bits.end());
  if (bits.empty()) throw ConfigError("allowed bit set is empty");
  if (bits.front() < 2 || bits.back() > 16) throw ConfigError("allowed bits must lie in [2, 16]");
  return bits;
}

QuantParams quant_params(std::span<const double> w, int bits, std::span<const int> allowed) {
  if (!contains(allowed, bits)) {
    throw ConfigError("bit width " + std::to_string(bits) + " is not in the allowed set");
  }
  if (bits < 2) throw ConfigError("bit width must be at least 2");
  if (w.empty()) throw ConfigError("cannot quantise an empty tensor");
  auto [lo, hi] = std::minmax_element(w.begin(), w.end());
  QuantParams qp;
  qp.bits = bits;
  qp.range_min = *lo;
  qp.range_max = *hi;
  qp.step = qp.degenerate() ? kDegenerateStep
                            : (qp.range_max - qp.range_min) / static_cast<double>(qp.max_code());
  qp.zero_point = static_cast<std::int64_t>(-round_even(qp.range_min / qp.step));
  return qp;
}

QuantizedTensor quantize(std::span<const double> w, const QuantParams& qp,
                         std::vector<std::size_t> shape) {
  QuantizedTensor q;
  q.params = qp;
  q.shape = shape.empty() ? std::vector<std::size_t>{w.size()} : std::move(shape);
  q.codes.resize(w.size());
  const double top = static_cast<double>(qp.max_code());
  const double zp = static_cast<double>(qp.zero_point);
  for (std::size_t i = 0; i < w.size(); ++i) {
    const double c = std::clamp(round_even(w[i] / qp.step) + zp, 0.0, top);
    q.codes[i] = static_cast<std::int32_t>(c);
  }
  return q;
}

std::vector<double> dequantize(const QuantizedTensor& q) {
  std::vector<double> out(q.codes.size());
  // A zero-range tensor has a single representable value.
  if (q.params.degenerate()) {
    std::fill(out.begin(), out.end(), q.params.range_min);
    return out;
  }
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = static_cast<double>(static_cast<std::int64_t>(q.codes[i]) - q.params.zero_point) *
             q.params.step;
  }
  return out;
}

std::vector<double> fake_quantize(std::span<const double> w, int bits, std::span<const int> allowed) {
  return dequantize(quantize(w, quant_params(w, bits, allowed)));
}

QuantError quant_error(std::span<const double> w, int bits, std::span<const int> allowed) {
  const auto deq = fake_quantize(w, bits, allowed);
  QuantError e;
  for (std::size_t i = 0; i < w.size(); ++i) {
    const double d = w[i] - deq[i];
    e.mse += d * d;
    e.max_abs = std::max(e.max_abs, std::abs(d));
  }
  e.mse /= static_cast<double>(w.size());
  e.rms = std::sqrt(e.mse);
  return e;
}

double bits_from_delta(double magnitude, double alpha) {
  return -std::log2(magnitude + alpha);
}

double bits_from_delta_slope(double magnitude, double alpha) {
  return -1.0 / ((magnitude + alpha) * std::numbers::ln2);
}

int clamp_to_allowed(double bits, std::span<const int> allowed) {
  if (allowed.empty()) throw ConfigError("allowed bit set is empty");
  const auto [lo, hi] = std::minmax_element(allowed.begin(), allowed.end());
  const double r = std::clamp(round_even(bits), static_cast<double>(*lo), static_cast<double>(*hi));
  int best = *hi;
  double best_dist = 1e300;
  for (int b : allowed) {
    const double dist = std::abs(static_cast<double>(b) - r);
    if (dist < best_dist || (dist == best_dist && b > best)) {
      best = b;
      best_dist = dist;
    }
  }
  return best;
}

int bits_from_error_mapping(std::span<const double> w, double budget_rms, std::span<const int> allowed) {
  if (allowed.empty()) throw ConfigError("allowed bit set is empty");
  std::vector<int> sorted(allowed.begin(), allowed.end());
  std::sort(sorted.begin(), sorted.end());
  for (int b : sorted) {
    if (quant_error(w, b, sorted).rms <= budget_rms) return b;
  }
  return sorted.back();
}

double DeltaBitMapper::magnitude(std::span<const double> delta) const {
  if (delta.empty()) return 0.0;
  double acc = 0.0;
  if (reduction == DeltaReduction::kRms) {
    for (double d : delta) acc += d * d;
    return std::sqrt(acc / static_cast<double>(delta.size()));
  }
  for (double d : delta) acc += std::abs(d);
  return acc / static_cast<double>(delta.size());
}

void DeltaBitMapper::magnitude_gradient(std::span<const double> delta, std::span<double> out) const {
  const double n = static_cast<double>(delta.size());
  if (reduction == DeltaReduction::kRms) {
    const double rms = magnitude(delta);
    for (std::size_t j = 0; j < delta.size(); ++j) out[j] = rms > 0.0 ? delta[j] / (n * rms) : 0.0;
    return;
  }
  for (std::size_t j = 0; j < delta.size(); ++j) {
    out[j] = delta[j] > 0.0 ? 1.0 / n : (delta[j] < 0.0 ? -1.0 / n : 0.0);
  }
}

double rounding_noise_scale(std::span<const double> w) {
  if (w.empty()) return 1.0;
  auto [lo, hi] = std::minmax_element(w.begin(), w.end());
  const double r = (*hi - *lo) / std::sqrt(12.0);
  return r > 0.0 ? r : 1.0;
}

std::string to_string(MappingKind kind) {
  switch (kind) {
    case MappingKind::kClosedFormula: return "closed_formula";
    case MappingKind::kErrorMapping: return "error_mapping";
    case MappingKind::kUniform: return "uniform";
    case MappingKind::kRandom: return "random";
    case MappingKind::kSearch: return "search";
    case MappingKind::kFullPrecision: return "full_precision";
  }
  return "full_precision";
}

MappingKind mapping_kind_from_string(const std::string& s) {
  for (auto k : {MappingKind::kClosedFormula, MappingKind::kErrorMapping, MappingKind::kUniform,
                 MappingKind::kRandom, MappingKind::kSearch, MappingKind::kFullPrecision}) {
    if (to_string(k) == s) return k;
  }
  throw ConfigError("unknown mapping kind '" + s + "'");
}

std::size_t BitPlan::total_params() const {
  std::size_t n = 0;
  for (const auto& l : layers) n += l.size;
  return n;
}

std::size_t BitPlan::total_bits() const {
  std::size_t bits = 0;
  for (const auto& l : layers) bits += l.size * static_cast<std::size_t>(l.bits);
  return bits;
}

double BitPlan::compression_ratio() const {
  const std::size_t bits = total_bits();
  if (bits == 0) return 0.0;
  return 32.0 * static_cast<double>(total_params()) / static_cast<double>(bits);
}

double BitPlan::average_bits() const {
  const std::size_t n = total_params();
  return n == 0 ? 0.0 : static_cast<double>(total_bits()) / static_cast<double>(n);
}

std::vector<int> BitPlan::bits() const {
  std::vector<int> out;
  for (const auto& l : layers) out.push_back(l.bits);
  return out;
}

void BitPlan::validate(const SegmentMap& segments) const {
  if (layers.size() != segments.size()) {
    throw ConfigError("plan covers " + std::to_string(layers.size()) + " layers, model has " +
                      std::to_string(segments.size()));
  }
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (layers[i].layer_id != segments[i].layer_id || layers[i].size != segments[i].length) {
      throw ConfigError("plan entry " + std::to_string(i) + " does not match layer " +
                        std::to_string(segments[i].layer_id));
    }
    if (layers[i].bits != kFullPrecisionBits && (layers[i].bits < 2 || layers[i].bits > 16)) {
      throw ConfigError("plan entry " + std::to_string(i) + " has invalid bit width");
    }
  }
}

BitPlan BitPlan::uniform(const ParameterVector& weights, int bits, MappingKind kind) {
  std::vector<int> widths(weights.segments().size(), bits);
  return from_bits(weights, widths, kind);
}

BitPlan BitPlan::from_bits(const ParameterVector& weights, std::span<const int> bits, MappingKind kind) {
  const SegmentMap& segs = weights.segments();
  if (bits.size() != segs.size()) throw ConfigError("one bit width per layer is required");
  BitPlan plan;
  for (std::size_t i = 0; i < segs.size(); ++i) {
    LayerBits lb;
    lb.layer_id = segs[i].layer_id;
    lb.size = segs[i].length;
    lb.bits = bits[i];
    lb.mapping = bits[i] == kFullPrecisionBits ? MappingKind::kFullPrecision : kind;
    if (bits[i] != kFullPrecisionBits) {
      const std::vector<int> one{bits[i]};
      lb.achieved_quant_rms = quant_error(weights.segment(i), bits[i], one).rms;
    }
    plan.layers.push_back(lb);
  }
  return plan;
}

ParameterVector apply_plan(const ParameterVector& weights, const BitPlan& plan) {
  plan.validate(weights.segments());
  ParameterVector out = weights;
  for (std::size_t i = 0; i < plan.layers.size(); ++i) {
    const int b = plan.layers[i].bits;
    if (b == kFullPrecisionBits) continue;
    const std::vector<int> one{b};
    const auto deq = fake_quantize(weights.segment(i), b, one);
    std::copy(deq.begin(), deq.end(), out.segment(i).begin());
  }
  return out;
}

}  // namespace cetq
