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

#include <cmath>
#include <vector>

#include "cetq/error.hpp"
#include "cetq/model.hpp"
#include "cetq/quantizer.hpp"
#include "support.hpp"

namespace cetq {
namespace {

using testing::formula_batch;
using testing::formula_params;
using testing::formula_regression;
using testing::random_direction;
using testing::relative_error;

ModelSpec mlp(std::vector<std::size_t> widths, Activation act = Activation::kTanh,
              LossKind loss = LossKind::kCrossEntropy) {
  return ModelSpec::mlp(widths, act, loss);
}

ModelSpec small_conv() {
  ModelSpec spec;
  spec.layers.push_back(LayerSpec::conv2d(Shape{2, 5, 5}, 3, 3, Activation::kTanh));
  spec.layers.push_back(LayerSpec::dense(27, 4, Activation::kIdentity));
  spec.loss = LossKind::kCrossEntropy;
  return spec;
}

Dataset conv_batch(std::size_t samples) {
  Dataset d(Shape{2, 5, 5}, 4, Split::kCalibration);
  std::vector<double> x(50);
  for (std::size_t s = 0; s < samples; ++s) {
    for (std::size_t j = 0; j < x.size(); ++j) x[j] = std::sin(0.37 * static_cast<double>(j) + 1.1 * s);
    d.add(x, static_cast<std::int32_t>(s % 4));
  }
  return d;
}

// Straight-line scalar interpreter used as the forward-pass oracle.
double act(Activation a, double x) {
  switch (a) {
    case Activation::kTanh: return std::tanh(x);
    case Activation::kRelu: return x > 0.0 ? x : 0.0;
    case Activation::kIdentity: return x;
  }
  return x;
}

double reference_sample_loss(const ModelSpec& spec, const ParameterVector& p, const Dataset& d, std::size_t s) {
  std::vector<double> x(d.input(s).begin(), d.input(s).end());
  std::size_t off = 0;
  for (const LayerSpec& L : spec.layers) {
    std::vector<double> y(L.output.size());
    if (L.kind == LayerKind::kDense) {
      const std::size_t in = L.input.size(), out = L.output.size();
      for (std::size_t o = 0; o < out; ++o) {
        double z = p[off + in * out + o];
        for (std::size_t i = 0; i < in; ++i) z += p[off + o * in + i] * x[i];
        y[o] = act(L.activation, z);
      }
    } else {
      const std::size_t ic = L.input.channels, ih = L.input.height, iw = L.input.width, k = L.kernel;
      const std::size_t oc = L.output.channels, oh = L.output.height, ow = L.output.width;
      for (std::size_t c = 0; c < oc; ++c) {
        for (std::size_t r = 0; r < oh; ++r) {
          for (std::size_t q = 0; q < ow; ++q) {
            double z = p[off + oc * ic * k * k + c];
            for (std::size_t cc = 0; cc < ic; ++cc) {
              for (std::size_t a = 0; a < k; ++a) {
                for (std::size_t b = 0; b < k; ++b) {
                  z += p[off + ((c * ic + cc) * k + a) * k + b] * x[(cc * ih + r + a) * iw + q + b];
                }
              }
            }
            y[(c * oh + r) * ow + q] = act(L.activation, z);
          }
        }
      }
    }
    off += L.param_count();
    x = std::move(y);
  }
  if (spec.loss == LossKind::kCrossEntropy) {
    double m = x[0];
    for (double v : x) m = std::max(m, v);
    double s2 = 0.0;
    for (double v : x) s2 += std::exp(v - m);
    return std::log(s2) + m - x[static_cast<std::size_t>(d.label(s))];
  }
  double se = 0.0;
  for (std::size_t j = 0; j < x.size(); ++j) {
    const double t = d.target_dim() ? d.target(s)[j] : (static_cast<std::int32_t>(j) == d.label(s) ? 1.0 : 0.0);
    se += (x[j] - t) * (x[j] - t);
  }
  return se / static_cast<double>(x.size());
}

double reference_loss(const ModelSpec& spec, const ParameterVector& p, const Dataset& d) {
  double total = 0.0;
  for (std::size_t s = 0; s < d.size(); ++s) total += reference_sample_loss(spec, p, d, s);
  return total / static_cast<double>(d.size());
}

struct Case {
  ModelSpec spec;
  ParameterVector params;
  Dataset batch;
};

std::vector<Case> toy_models() {
  std::vector<Case> out;
  {
    ModelSpec s = mlp({3, 6, 4});
    out.push_back({s, formula_params(s), formula_batch(3, 4, 12)});
  }
  {
    ModelSpec s = mlp({2, 5, 5, 2}, Activation::kTanh, LossKind::kMeanSquaredError);
    out.push_back({s, formula_params(s), formula_regression(2, 2, 10)});
  }
  {
    ModelSpec s = small_conv();
    out.push_back({s, formula_params(s, 0.3), conv_batch(6)});
  }
  return out;
}

TEST(Loss, ZeroLinearMapGivesZero) {
  ModelSpec spec = mlp({3, 1}, Activation::kIdentity, LossKind::kMeanSquaredError);
  Dataset d(Shape{3, 1, 1}, 1, Split::kCalibration, 1);
  const std::vector<double> x{0.3, -2.0, 5.0}, t{0.0};
  d.add(x, 0, t);
  EXPECT_EQ(loss(spec, ParameterVector(spec.segment_map()), d), 0.0);
}

TEST(Loss, TwoSampleBatchIsMeanOfSingles) {
  ModelSpec spec = mlp({3, 4, 2});
  ParameterVector p = formula_params(spec);
  Dataset both = formula_batch(3, 2, 2);
  const double a = loss(spec, p, both.slice(0, 1, Split::kCalibration));
  const double b = loss(spec, p, both.slice(1, 2, Split::kCalibration));
  EXPECT_NEAR(loss(spec, p, both), 0.5 * (a + b), 1e-15);
}

TEST(Loss, MatchesScalarReferenceForward) {
  ModelSpec spec = mlp({3, 5, 3});
  ParameterVector p = formula_params(spec);
  Dataset d = formula_batch(3, 3, 8);
  const double oracle = reference_loss(spec, p, d);
  // Frozen from the scalar reference interpreter above.
  constexpr double kFrozen = 1.1259258561682459;
  EXPECT_NEAR(oracle, kFrozen, 1e-14);
  EXPECT_NEAR(loss(spec, p, d), oracle, 1e-13);
}

TEST(Loss, ConvolutionMatchesScalarReference) {
  ModelSpec spec = small_conv();
  ParameterVector p = formula_params(spec, 0.3);
  Dataset d = conv_batch(5);
  EXPECT_NEAR(loss(spec, p, d), reference_loss(spec, p, d), 1e-13);
}

TEST(Loss, ReluAndRegressionMatchReference) {
  ModelSpec spec = mlp({4, 6, 3}, Activation::kRelu, LossKind::kMeanSquaredError);
  ParameterVector p = formula_params(spec);
  Dataset d = formula_regression(4, 3, 9);
  EXPECT_NEAR(loss(spec, p, d), reference_loss(spec, p, d), 1e-13);
}

TEST(Gradient, QuadraticSurrogate) {
  Eigen::MatrixXd a = Eigen::Vector2d(1.0, 4.0).asDiagonal();
  ParameterVector w(SegmentMap::from_lengths(std::vector<std::size_t>{2}), Eigen::Vector2d(1.0, 1.0));
  QuadraticObjective q(a, w);
  const ParameterVector g = q.gradient();
  EXPECT_DOUBLE_EQ(g[0], 1.0);
  EXPECT_DOUBLE_EQ(g[1], 4.0);
}

TEST(Gradient, MatchesCentralDifferences) {
  constexpr double h = 1e-4;
  for (const Case& c : toy_models()) {
    const ParameterVector g = gradient(c.spec, c.params, c.batch);
    for (std::uint64_t k = 0; k < 10; ++k) {
      const ParameterVector u = random_direction(c.params.segments(), 100 + k);
      const double fd = (loss(c.spec, c.params + h * u, c.batch) - loss(c.spec, c.params - h * u, c.batch)) / (2 * h);
      EXPECT_LT(relative_error(g.dot(u), fd), 1e-5) << "direction " << k;
    }
  }
}

TEST(Hvp, QuadraticSurrogateAndLinearity) {
  Eigen::Matrix2d a;
  a << 2.0, 1.0, 1.0, 3.0;
  const SegmentMap segs = SegmentMap::from_lengths(std::vector<std::size_t>{2});
  QuadraticObjective q(a, ParameterVector(segs));
  const ParameterVector hv = q.hvp(ParameterVector(segs, Eigen::Vector2d(1.0, 0.0)));
  EXPECT_DOUBLE_EQ(hv[0], 2.0);
  EXPECT_DOUBLE_EQ(hv[1], 1.0);

  const ParameterVector u = random_direction(segs, 1, false), v = random_direction(segs, 2, false);
  const double alpha = 0.7, beta = -2.3;
  const Eigen::VectorXd lhs = q.hvp(alpha * u + beta * v).values();
  const Eigen::VectorXd rhs = alpha * q.hvp(u).values() + beta * q.hvp(v).values();
  EXPECT_LT(relative_error(lhs, rhs), 1e-10);
}

TEST(Hvp, MatchesFiniteDifferenceOfGradients) {
  constexpr double h = 1e-4;
  for (const Case& c : toy_models()) {
    for (std::uint64_t k = 0; k < 10; ++k) {
      const ParameterVector v = random_direction(c.params.segments(), 200 + k);
      const Eigen::VectorXd fd =
          (gradient(c.spec, c.params + h * v, c.batch).values() - gradient(c.spec, c.params - h * v, c.batch).values()) /
          (2 * h);
      EXPECT_LT(relative_error(hvp(c.spec, c.params, c.batch, v).values(), fd), 1e-4) << "direction " << k;
    }
  }
}

TEST(Hvp, IsSymmetric) {
  for (const Case& c : toy_models()) {
    // ||H|| estimated by power iteration.
    ParameterVector x = random_direction(c.params.segments(), 7);
    double norm_h = 0.0;
    for (int it = 0; it < 30; ++it) {
      ParameterVector y = hvp(c.spec, c.params, c.batch, x);
      norm_h = y.norm();
      x = y * (1.0 / norm_h);
    }
    for (std::uint64_t k = 0; k < 5; ++k) {
      const ParameterVector u = random_direction(c.params.segments(), 300 + k, false);
      const ParameterVector v = random_direction(c.params.segments(), 400 + k, false);
      const double defect = std::abs(u.dot(hvp(c.spec, c.params, c.batch, v)) - v.dot(hvp(c.spec, c.params, c.batch, u)));
      EXPECT_LE(defect, 1e-9 * u.norm() * v.norm() * norm_h);
    }
  }
}

TEST(Batch, GradientAndHvpDecomposeOverSamples) {
  for (const Case& c : toy_models()) {
    const ParameterVector v = random_direction(c.params.segments(), 5);
    Eigen::VectorXd g = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(c.params.size()));
    Eigen::VectorXd hv = g;
    double l = 0.0;
    const std::size_t m = c.batch.size();
    for (std::size_t i = 0; i < m; ++i) {
      const Dataset one = c.batch.slice(i, i + 1, Split::kCalibration);
      l += loss(c.spec, c.params, one);
      g += gradient(c.spec, c.params, one).values();
      hv += hvp(c.spec, c.params, one, v).values();
    }
    const double inv = 1.0 / static_cast<double>(m);
    EXPECT_LT(relative_error(loss(c.spec, c.params, c.batch), l * inv), 1e-12);
    EXPECT_LT(relative_error(gradient(c.spec, c.params, c.batch).values(), g * inv), 1e-12);
    EXPECT_LT(relative_error(hvp(c.spec, c.params, c.batch, v).values(), hv * inv), 1e-12);
  }
}

TEST(Determinism, ThreadCountDoesNotChangeBits) {
  ModelSpec spec = mlp({3, 8, 4});
  ParameterVector p = formula_params(spec);
  Dataset d = formula_batch(3, 4, 301);
  const ParameterVector v = random_direction(p.segments(), 3);
  const double l1 = loss(spec, p, d, 1);
  const auto g1 = gradient(spec, p, d, 1).values();
  const auto h1 = hvp(spec, p, d, v, 1).values();
  for (std::size_t t : {2u, 3u, 8u}) {
    EXPECT_EQ(loss(spec, p, d, t), l1);
    EXPECT_EQ(gradient(spec, p, d, t).values(), g1);
    EXPECT_EQ(hvp(spec, p, d, v, t).values(), h1);
  }
  EXPECT_EQ(loss(spec, p, d, 1), l1);
}

TEST(PerturbedLoss, ZeroDeltaIsLoss) {
  for (const Case& c : toy_models()) {
    EXPECT_EQ(perturbed_loss(c.spec, c.params, ParameterVector(c.params.segments()), c.batch),
              loss(c.spec, c.params, c.batch));
  }
}

TEST(PerturbedLoss, LinearModelClosedForm) {
  // y = w.x + b with MSE: loss(w + d) = mean_s ((w + d).x_s + b - t_s)^2.
  ModelSpec spec = mlp({2, 1}, Activation::kIdentity, LossKind::kMeanSquaredError);
  ParameterVector p(spec.segment_map(), Eigen::Vector3d(0.5, -1.5, 0.25));
  ParameterVector delta(spec.segment_map(), Eigen::Vector3d(0.1, 0.2, -0.3));
  Dataset d = formula_regression(2, 1, 7);
  double expected = 0.0;
  for (std::size_t s = 0; s < d.size(); ++s) {
    const auto x = d.input(s);
    const double y = 0.6 * x[0] - 1.3 * x[1] - 0.05;
    expected += (y - d.target(s)[0]) * (y - d.target(s)[0]);
  }
  expected /= static_cast<double>(d.size());
  EXPECT_NEAR(perturbed_loss(spec, p, delta, d), expected, 1e-14);
}

TEST(PerturbedLoss, QuantisationResidualMatchesQuantisedModel) {
  ModelSpec spec = mlp({3, 6, 4});
  ParameterVector p = formula_params(spec);
  Dataset d = formula_batch(3, 4, 20);
  const std::vector<int> bits{4, kFullPrecisionBits};
  const BitPlan plan = BitPlan::from_bits(p, bits, MappingKind::kUniform);
  const ParameterVector q = apply_plan(p, plan);
  const ParameterVector delta = (q - p).restricted_to(0);
  EXPECT_EQ(perturbed_loss(spec, p, delta, d), loss(spec, q, d));
}

TEST(Errors, ShapeMismatchIsConfigError) {
  ModelSpec spec = mlp({3, 6, 4});
  ParameterVector wrong(SegmentMap::from_lengths(std::vector<std::size_t>{10, 10}));
  EXPECT_THROW(loss(spec, wrong, formula_batch(3, 4, 4)), ConfigError);
  EXPECT_THROW(loss(spec, formula_params(spec), formula_batch(2, 4, 4)), ConfigError);
}

TEST(Errors, NonFiniteReportsLayer) {
  ModelSpec spec = mlp({3, 6, 4});
  ParameterVector p = formula_params(spec);
  p[p.segments()[1].offset] = std::nan("");
  try {
    loss(spec, p, formula_batch(3, 4, 4));
    FAIL() << "expected NumericalError";
  } catch (const NumericalError& e) {
    EXPECT_EQ(e.layer(), 1u);
  }
}

TEST(Errors, EmptyBatchAndBadLabels) {
  ModelSpec spec = mlp({3, 6, 4});
  EXPECT_THROW(loss(spec, formula_params(spec), Dataset(Shape{3, 1, 1}, 4, Split::kCalibration)), ContractViolation);
  Dataset bad(Shape{3, 1, 1}, 4, Split::kTrain);
  const std::vector<double> x{0, 0, 0};
  EXPECT_THROW(
      {
        bad.add(x, 7);
        bad.validate();
      },
      ConfigError);
}

TEST(ModelSpec, RejectsNonComposingLayers) {
  ModelSpec spec;
  EXPECT_THROW(spec.validate(), ConfigError);
  spec.layers.push_back(LayerSpec::dense(3, 4, Activation::kTanh));
  spec.layers.push_back(LayerSpec::dense(5, 2, Activation::kIdentity));
  EXPECT_THROW(spec.validate(), ConfigError);
}

TEST(Init, DeterministicAndBounded) {
  ModelSpec spec = mlp({4, 9, 3});
  const ParameterVector a = init_params(spec, 11), b = init_params(spec, 11);
  EXPECT_EQ(a.values(), b.values());
  EXPECT_NE(a.values(), init_params(spec, 12).values());
  for (std::size_t l = 0; l < spec.layers.size(); ++l) {
    const LayerSpec& L = spec.layers[l];
    const double bound = 1.0 / std::sqrt(static_cast<double>(L.input.size()));
    auto seg = a.segment(l);
    for (std::size_t j = 0; j < L.weight_count(); ++j) EXPECT_LE(std::abs(seg[j]), bound);
    for (std::size_t j = L.weight_count(); j < seg.size(); ++j) EXPECT_EQ(seg[j], 0.0);
  }
}

TEST(Checksum, StableAndSensitive) {
  ModelSpec spec = mlp({4, 9, 3});
  ParameterVector p = formula_params(spec);
  const auto c = checksum(p);
  EXPECT_EQ(c, checksum(formula_params(spec)));
  p[3] += 1e-15;
  EXPECT_NE(c, checksum(p));
  EXPECT_NE(checksum(spec), checksum(mlp({4, 9, 2})));
}

}  // namespace
}  // namespace cetq
