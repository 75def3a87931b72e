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


#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "cetq/error.hpp"
#include "cetq/quantizer.hpp"
#include "support.hpp"

namespace cetq {
namespace {

const std::vector<int> kWide{2, 3, 4, 5, 6, 7, 8};

TEST(QuantParams, UnitRangeTwoBits) {
  const std::vector<double> w{0.0, 1.0};
  const QuantParams qp = quant_params(w, 2);
  EXPECT_DOUBLE_EQ(qp.step, 1.0 / 3.0);
  EXPECT_EQ(qp.zero_point, 0);
  const auto q = quantize(w, qp);
  EXPECT_EQ(q.codes, (std::vector<std::int32_t>{0, 3}));
  EXPECT_EQ(dequantize(q), w);
}

TEST(QuantParams, SymmetricRangeEightBits) {
  const std::vector<double> w{-1.0, 1.0};
  const QuantParams qp = quant_params(w, 8);
  EXPECT_DOUBLE_EQ(qp.step, 2.0 / 255.0);
  EXPECT_EQ(qp.zero_point, 128);
  const auto q = quantize(w, qp);
  EXPECT_EQ(q.codes[0], 0);
  EXPECT_EQ(q.codes[1], 255);
}

TEST(QuantParams, ConstantTensor) {
  const std::vector<double> w(7, 0.25);
  const QuantParams qp = quant_params(w, 4);
  EXPECT_TRUE(qp.degenerate());
  EXPECT_EQ(qp.step, kDegenerateStep);
  EXPECT_EQ(fake_quantize(w, 4), w);
  EXPECT_EQ(quant_error(w, 4).max_abs, 0.0);
}

TEST(QuantParams, Errors) {
  const std::vector<double> w{0.0, 1.0};
  EXPECT_THROW(quant_params(w, 5), ConfigError);
  EXPECT_THROW(quant_params(std::vector<double>{}, 4), ConfigError);
  EXPECT_THROW(normalize_allowed_bits({}), ConfigError);
  EXPECT_THROW(normalize_allowed_bits({1, 4}), ConfigError);
  EXPECT_THROW(normalize_allowed_bits({4, 17}), ConfigError);
  EXPECT_EQ(normalize_allowed_bits({8, 2, 4, 2}), (std::vector<int>{2, 4, 8}));
}

TEST(Quantize, HalfwayRoundsToEvenCode) {
  // Step 1/3: 0.5 sits at code 1.5, which rounds to the even code 2.
  const std::vector<double> w{0.0, 0.5, 1.0};
  const auto q = quantize(w, quant_params(w, 2));
  EXPECT_EQ(q.codes[1], 2);
}

TEST(Quantize, GridPointsRoundTrip) {
  const QuantParams qp = quant_params(std::vector<double>{-0.6, 1.1}, 4);
  std::vector<double> grid;
  for (std::int64_t c = 0; c <= qp.max_code(); ++c) grid.push_back(static_cast<double>(c - qp.zero_point) * qp.step);
  const auto back = dequantize(quantize(grid, qp));
  for (std::size_t i = 0; i < grid.size(); ++i) EXPECT_NEAR(back[i], grid[i], 1e-15);
}

TEST(Quantize, ErrorBoundAndMonotoneMse) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n01(0.0, 1.0);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> w(200);
    for (auto& x : w) x = n01(rng) * (trial + 1) * 0.1 + 0.05 * trial;
    double prev = 1e300;
    for (int b : kWide) {
      const QuantParams qp = quant_params(w, b, kWide);
      const QuantError e = quant_error(w, b, kWide);
      // Rounding the zero point moves both ends by the same sub-half-step
      // offset, so min and max still sit within half a step of a code.
      EXPECT_LE(e.max_abs, qp.step / 2 + 1e-12);
      EXPECT_LE(e.mse, prev);
      prev = e.mse;
    }
  }
}

TEST(Quantize, UniformRoundingNoise) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> w(200000);
  for (auto& x : w) x = u(rng);
  for (int b : {4, 8}) {
    const QuantParams qp = quant_params(w, b);
    EXPECT_NEAR(quant_error(w, b).rms, qp.step / std::sqrt(12.0), 0.05 * qp.step / std::sqrt(12.0));
  }
  EXPECT_NEAR(rounding_noise_scale(w), (*std::max_element(w.begin(), w.end()) - *std::min_element(w.begin(), w.end())) / std::sqrt(12.0), 1e-15);
}

TEST(BitsFromDelta, Identities) {
  EXPECT_DOUBLE_EQ(bits_from_delta(std::pow(2.0, -4), 0.0), 4.0);
  EXPECT_DOUBLE_EQ(bits_from_delta(std::pow(2.0, -8), 0.0), 8.0);
  const double alpha = std::pow(2.0, -10);
  EXPECT_DOUBLE_EQ(bits_from_delta(0.0, alpha), 10.0);
  EXPECT_EQ(clamp_to_allowed(bits_from_delta(0.0, alpha)), 8);
  for (double m : {1e-4, 1e-2, 0.3}) {
    const double h = 1e-6 * m;
    const double fd = (bits_from_delta(m + h, 1e-6) - bits_from_delta(m - h, 1e-6)) / (2 * h);
    EXPECT_NEAR(bits_from_delta_slope(m, 1e-6), fd, 1e-6 * std::abs(fd));
  }
}

TEST(ClampToAllowed, NearestWithTiesWide) {
  EXPECT_EQ(clamp_to_allowed(0.3), 2);
  EXPECT_EQ(clamp_to_allowed(3.2), 3);
  EXPECT_EQ(clamp_to_allowed(5.4), 4);
  EXPECT_EQ(clamp_to_allowed(6.0), 8);  // equidistant from 4 and 8
  EXPECT_EQ(clamp_to_allowed(6.6), 8);
  EXPECT_EQ(clamp_to_allowed(40.0), 8);
  EXPECT_EQ(clamp_to_allowed(4.5), 4);  // half-to-even first
  EXPECT_THROW(clamp_to_allowed(4.0, std::vector<int>{}), ConfigError);
}

TEST(ErrorMapping, Examples) {
  std::vector<double> w(101);
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = std::sin(0.37 * static_cast<double>(i)) * 0.8;
  EXPECT_EQ(bits_from_error_mapping(w, 0.0), 8);
  EXPECT_EQ(bits_from_error_mapping(w, quant_error(w, 2).rms), 2);
  EXPECT_EQ(bits_from_error_mapping(w, 10.0), 2);
  const double step4 = quant_params(w, 4).step;
  EXPECT_EQ(bits_from_error_mapping(w, step4 / std::sqrt(12.0) * 1.01), 4);
  for (double budget : {1e-4, 1e-3, 1e-2, 5e-2, 0.1}) {
    const int b = bits_from_error_mapping(w, budget);
    if (quant_error(w, b).rms > budget) {
      EXPECT_EQ(b, 8);
    } else {
      for (int smaller : default_allowed_bits()) {
        if (smaller < b) EXPECT_GT(quant_error(w, smaller).rms, budget);
      }
    }
  }
}

TEST(DeltaBitMapper, MagnitudeAndGradient) {
  DeltaBitMapper m;
  const std::vector<double> d{3.0, -4.0};
  EXPECT_DOUBLE_EQ(m.magnitude(d), std::sqrt(12.5));
  std::vector<double> g(2);
  m.magnitude_gradient(d, g);
  const double h = 1e-7;
  for (std::size_t j = 0; j < 2; ++j) {
    auto p = d, q = d;
    p[j] += h;
    q[j] -= h;
    EXPECT_NEAR(g[j], (m.magnitude(p) - m.magnitude(q)) / (2 * h), 1e-7);
  }
  m.reduction = DeltaReduction::kMeanAbs;
  EXPECT_DOUBLE_EQ(m.magnitude(d), 3.5);
  m.magnitude_gradient(d, g);
  EXPECT_EQ(g, (std::vector<double>{0.5, -0.5}));
  m.layer_scales = {2.0};
  EXPECT_DOUBLE_EQ(m.layer_bits(0.5, 0), m.bits(0.25));
}

TEST(BitPlan, Accounting) {
  const SegmentMap segs = SegmentMap::from_lengths(std::vector<std::size_t>{10, 20, 30});
  const ParameterVector w = testing::random_direction(segs, 1, false);
  const BitPlan u = BitPlan::uniform(w, 4);
  EXPECT_EQ(u.total_bits(), 240u);
  EXPECT_DOUBLE_EQ(u.compression_ratio(), 8.0);
  EXPECT_DOUBLE_EQ(u.average_bits(), 4.0);
  const std::vector<int> widths{2, 8, kFullPrecisionBits};
  const BitPlan mixed = BitPlan::from_bits(w, widths, MappingKind::kSearch);
  EXPECT_EQ(mixed.total_bits(), 20u + 160u + 960u);
  EXPECT_EQ(mixed.layers[2].mapping, MappingKind::kFullPrecision);
  EXPECT_EQ(mixed.layers[2].achieved_quant_rms, 0.0);
  EXPECT_DOUBLE_EQ(mixed.layers[1].achieved_quant_rms, quant_error(w.segment(1), 8).rms);
  EXPECT_NO_THROW(mixed.validate(segs));
  BitPlan bad = mixed;
  bad.layers.pop_back();
  EXPECT_THROW(bad.validate(segs), ConfigError);
  bad = mixed;
  bad.layers[0].bits = 1;
  EXPECT_THROW(bad.validate(segs), ConfigError);
  EXPECT_THROW(BitPlan::from_bits(w, std::vector<int>{4}, MappingKind::kUniform), ConfigError);
}

TEST(BitPlan, ApplyMatchesFakeQuantize) {
  const SegmentMap segs = SegmentMap::from_lengths(std::vector<std::size_t>{12, 7});
  const ParameterVector w = testing::random_direction(segs, 2, false);
  const std::vector<int> widths{3, kFullPrecisionBits};
  const ParameterVector q = apply_plan(w, BitPlan::from_bits(w, widths, MappingKind::kUniform));
  const auto ref = fake_quantize(w.segment(0), 3);
  for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_EQ(q.segment(0)[i], ref[i]);
  for (std::size_t i = 0; i < 7; ++i) EXPECT_EQ(q.segment(1)[i], w.segment(1)[i]);
}

TEST(MappingKind, Strings) {
  for (auto k : {MappingKind::kClosedFormula, MappingKind::kErrorMapping, MappingKind::kUniform,
                 MappingKind::kRandom, MappingKind::kSearch, MappingKind::kFullPrecision}) {
    EXPECT_EQ(mapping_kind_from_string(to_string(k)), k);
  }
  EXPECT_THROW(mapping_kind_from_string("exotic"), ConfigError);
}

}  // namespace
}  // namespace cetq
