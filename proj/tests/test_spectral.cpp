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
#include <limits>
#include <vector>

#include "cetq/error.hpp"
#include "cetq/model.hpp"
#include "cetq/spectral.hpp"
#include "support.hpp"

namespace cetq {
namespace {

using testing::formula_batch;
using testing::formula_params;
using testing::random_symmetric;

LinearOperator matrix_operator(const Eigen::MatrixXd& a) {
  return [a](const Eigen::VectorXd& v) -> Eigen::VectorXd { return a * v; };
}

// The k most extreme values of a descending vector, in extremeness order.
std::vector<double> extremes(const Eigen::VectorXd& desc, std::size_t top, std::size_t bottom) {
  std::vector<double> out;
  for (std::size_t i = 0; i < top; ++i) out.push_back(desc[static_cast<Eigen::Index>(i)]);
  for (std::size_t i = 0; i < bottom; ++i) out.push_back(desc[desc.size() - 1 - static_cast<Eigen::Index>(i)]);
  return out;
}

void expect_spectrum_invariants(const Spectrum& s, const LinearOperator& op) {
  for (Eigen::Index i = 0; i + 1 < s.eigenvalues.size(); ++i) EXPECT_GE(s.eigenvalues[i], s.eigenvalues[i + 1]);
  const Eigen::MatrixXd gram = s.eigenvectors.transpose() * s.eigenvectors;
  EXPECT_LE((gram - Eigen::MatrixXd::Identity(gram.rows(), gram.cols())).cwiseAbs().maxCoeff(), 1e-8);
  for (Eigen::Index i = 0; i < s.eigenvalues.size(); ++i) {
    const Eigen::VectorXd v = s.eigenvectors.col(i);
    const double r = (op(v) - s.eigenvalues[i] * v).norm();
    EXPECT_LE(r, s.residual_tolerance);
    EXPECT_NEAR(s.residuals[i], r, 1e-12 * std::max(1.0, std::abs(s.eigenvalues[i])));
  }
  EXPECT_LE(s.size(), s.dimension);
}

TEST(Lanczos, IdentityGivesUnitEigenvalues) {
  const Eigen::MatrixXd id = Eigen::MatrixXd::Identity(10, 10);
  LanczosConfig cfg;
  cfg.num_eigenpairs = 10;
  const Spectrum s = lanczos(matrix_operator(id), 10, cfg);
  ASSERT_GE(s.size(), 1u);
  for (Eigen::Index i = 0; i < s.eigenvalues.size(); ++i) EXPECT_NEAR(s.eigenvalues[i], 1.0, 1e-12);
}

TEST(Lanczos, DiagonalSpectrum) {
  Eigen::VectorXd d(5);
  d << 10, 5, 1, 0.1, -2;
  const Eigen::MatrixXd a = d.asDiagonal();
  LanczosConfig cfg;
  cfg.num_eigenpairs = 5;
  const Spectrum s = lanczos(matrix_operator(a), 5, cfg);
  ASSERT_EQ(s.size(), 5u);
  for (Eigen::Index i = 0; i < 5; ++i) EXPECT_NEAR(s.eigenvalues[i], d[i], 1e-8);
  expect_spectrum_invariants(s, matrix_operator(a));
}

TEST(Lanczos, RepeatedEigenvaluesAreResolved) {
  Eigen::VectorXd d(6);
  d << 3, 3, 3, 1, 1, -1;
  const Eigen::MatrixXd a = d.asDiagonal();
  LanczosConfig cfg;
  cfg.num_eigenpairs = 6;
  const Spectrum s = lanczos(matrix_operator(a), 6, cfg);
  ASSERT_EQ(s.size(), 6u);
  for (Eigen::Index i = 0; i < 6; ++i) EXPECT_NEAR(s.eigenvalues[i], d[i], 1e-10);
}

TEST(Lanczos, RandomSymmetricMatchesDenseOracle) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const Eigen::MatrixXd a = random_symmetric(50, seed);
    LanczosConfig cfg;
    cfg.num_eigenpairs = 10;
    cfg.seed = seed;
    const Spectrum s = lanczos(matrix_operator(a), 50, cfg);
    const Spectrum ref = dense_eig(a);
    ASSERT_GE(s.size(), 10u);
    // The reported pairs are the most extreme ones, largest and most negative alternating.
    std::vector<double> got(s.eigenvalues.data(), s.eigenvalues.data() + s.size());
    const auto want = extremes(ref.eigenvalues, 5, 5);
    for (double w : want) {
      double best = std::numeric_limits<double>::infinity();
      for (double g : got) best = std::min(best, std::abs(g - w));
      EXPECT_LE(best, 1e-6 * std::abs(w)) << "eigenvalue " << w;
    }
    expect_spectrum_invariants(s, matrix_operator(a));
  }
}

// A 200-dimensional random matrix has a crowded semicircle spectrum, so a
// single 60-step run certifies only a few pairs. Restarts in the complement
// must add more without skipping ranks at either end.
TEST(Lanczos, RestartsReportContiguousExtremes) {
  const Eigen::MatrixXd a = random_symmetric(200, 7);
  LanczosConfig cfg;
  cfg.num_eigenpairs = 16;
  cfg.max_iterations = 60;
  cfg.max_restarts = 0;
  const Spectrum single = lanczos(matrix_operator(a), 200, cfg);
  cfg.max_restarts = 10;
  const Spectrum s = lanczos(matrix_operator(a), 200, cfg);
  const Spectrum ref = dense_eig(a);
  EXPECT_GT(s.restarts, 0u);
  ASSERT_GT(s.size(), single.size());
  std::size_t top = 0;
  while (top < s.size() && std::abs(s.eigenvalues[static_cast<Eigen::Index>(top)] -
                                    ref.eigenvalues[static_cast<Eigen::Index>(top)]) <= 1e-6) {
    ++top;
  }
  for (std::size_t i = top; i < s.size(); ++i) {
    const Eigen::Index from_bottom = static_cast<Eigen::Index>(s.size() - 1 - i);
    EXPECT_NEAR(s.eigenvalues[static_cast<Eigen::Index>(i)],
                ref.eigenvalues[ref.eigenvalues.size() - 1 - from_bottom], 1e-6)
        << "rank " << i;
  }
  expect_spectrum_invariants(s, matrix_operator(a));
}

TEST(Lanczos, KrylovBasisStaysOrthogonal) {
  const Eigen::MatrixXd a = random_symmetric(150, 9);
  LanczosConfig cfg;
  cfg.num_eigenpairs = 20;
  const Spectrum s = lanczos(matrix_operator(a), 150, cfg);
  EXPECT_GT(s.iterations, 20u);
  EXPECT_LE(s.basis_orthogonality, 1e-10);
}

TEST(Lanczos, SeedDeterminism) {
  const Eigen::MatrixXd a = random_symmetric(40, 4);
  LanczosConfig cfg;
  cfg.num_eigenpairs = 8;
  cfg.seed = 17;
  const Spectrum s1 = lanczos(matrix_operator(a), 40, cfg);
  const Spectrum s2 = lanczos(matrix_operator(a), 40, cfg);
  EXPECT_EQ(s1.eigenvalues, s2.eigenvalues);
  EXPECT_EQ(s1.eigenvectors, s2.eigenvectors);
  EXPECT_EQ(s1.residuals, s2.residuals);
}

TEST(Lanczos, ExplicitToleranceIsHonoured) {
  const Eigen::MatrixXd a = random_symmetric(60, 2);
  LanczosConfig cfg;
  cfg.max_iterations = 30;
  cfg.num_eigenpairs = 30;
  cfg.residual_tolerance = 1e-3;
  const Spectrum s = lanczos(matrix_operator(a), 60, cfg);
  EXPECT_EQ(s.residual_tolerance, 1e-3);
  for (Eigen::Index i = 0; i < s.residuals.size(); ++i) EXPECT_LE(s.residuals[i], 1e-3);
}

TEST(Lanczos, NetworkHessianMatchesDenseOracle) {
  const ModelSpec spec = ModelSpec::mlp(std::vector<std::size_t>{3, 6, 3}, Activation::kTanh, LossKind::kCrossEntropy);
  const NetworkObjective obj(spec, formula_params(spec), formula_batch(3, 3, 24));
  const Eigen::MatrixXd h = materialize_hessian(obj);
  const Spectrum ref = dense_eig(0.5 * (h + h.transpose()));
  LanczosConfig cfg;
  cfg.num_eigenpairs = 6;
  const Spectrum s = lanczos(obj, cfg);
  ASSERT_GE(s.size(), 6u);
  EXPECT_NEAR(s.max_eigenvalue(), ref.max_eigenvalue(), 1e-6 * std::abs(ref.max_eigenvalue()));
  EXPECT_NEAR(s.min_eigenvalue(), ref.min_eigenvalue(), 1e-6 * std::abs(ref.max_eigenvalue()));
  EXPECT_EQ(s.segments, obj.segments());
}

TEST(Lanczos, Errors) {
  const Eigen::MatrixXd a = random_symmetric(5, 1);
  LanczosConfig cfg;
  cfg.num_eigenpairs = 200;
  EXPECT_THROW(lanczos(matrix_operator(a), 5, cfg), ConfigError);
  cfg.num_eigenpairs = 3;
  cfg.residual_tolerance = 0.0;
  EXPECT_THROW(lanczos(matrix_operator(a), 5, cfg), ConfigError);
  cfg.residual_tolerance.reset();
  EXPECT_THROW(lanczos(matrix_operator(a), 0, cfg), ContractViolation);
  EXPECT_THROW(lanczos(matrix_operator(a), 5, cfg, SegmentMap::from_lengths(std::vector<std::size_t>{4})),
               ConfigError);
  const LinearOperator bad = [](const Eigen::VectorXd& v) -> Eigen::VectorXd {
    return Eigen::VectorXd::Constant(v.size(), std::nan(""));
  };
  EXPECT_THROW(lanczos(bad, 5, cfg), NumericalError);
}

TEST(DenseEig, ClosedForm2x2) {
  Eigen::Matrix2d a;
  a << 2, 1, 1, 3;
  const Spectrum s = dense_eig(a);
  EXPECT_NEAR(s.eigenvalues[0], (5 + std::sqrt(5.0)) / 2, 1e-12);
  EXPECT_NEAR(s.eigenvalues[1], (5 - std::sqrt(5.0)) / 2, 1e-12);
}

TEST(DenseEig, DiagonalAndReconstruction) {
  Eigen::VectorXd d(4);
  d << 7, -1, 2.5, 0;
  const Spectrum sd = dense_eig(Eigen::MatrixXd(d.asDiagonal()));
  Eigen::VectorXd sorted = d;
  std::sort(sorted.data(), sorted.data() + sorted.size(), std::greater<>());
  EXPECT_LT((sd.eigenvalues - sorted).cwiseAbs().maxCoeff(), 1e-14);

  const Eigen::MatrixXd a = random_symmetric(30, 3);
  const Spectrum s = dense_eig(a);
  const Eigen::MatrixXd rebuilt = s.eigenvectors * s.eigenvalues.asDiagonal() * s.eigenvectors.transpose();
  EXPECT_LT((rebuilt - a).norm() / a.norm(), 1e-9);
  for (Eigen::Index i = 0; i < s.residuals.size(); ++i) EXPECT_LE(s.residuals[i], 1e-10 * a.norm());
}

TEST(DenseEig, RejectsAsymmetric) {
  Eigen::Matrix2d a;
  a << 1, 2, 2.001, 1;
  EXPECT_THROW(dense_eig(a), ContractViolation);
}

TEST(Materialize, QuadraticReturnsMatrix) {
  const Eigen::MatrixXd a = random_symmetric(12, 5);
  const QuadraticObjective q(a, ParameterVector(SegmentMap::from_lengths(std::vector<std::size_t>{5, 7})));
  EXPECT_EQ(materialize_hessian(q), a);
}

TEST(Materialize, TwoParameterNetMatchesSecondDifferences) {
  // One input, one output, weight and bias: 2 parameters.
  const ModelSpec spec = ModelSpec::mlp(std::vector<std::size_t>{1, 1}, Activation::kTanh, LossKind::kMeanSquaredError);
  Dataset d(Shape{1, 1, 1}, 1, Split::kCalibration, 1);
  for (int s = 0; s < 5; ++s) {
    const std::vector<double> x{0.4 * s - 0.8}, t{std::sin(1.0 * s)};
    d.add(x, 0, t);
  }
  ParameterVector w(spec.segment_map(), Eigen::Vector2d(0.8, -0.3));
  const Eigen::MatrixXd h = materialize_hessian(spec, w, d);
  constexpr double e = 1e-4;
  Eigen::Matrix2d fd;
  for (int i = 0; i < 2; ++i) {
    for (int j = 0; j < 2; ++j) {
      auto at = [&](double si, double sj) {
        ParameterVector p = w;
        p[static_cast<std::size_t>(i)] += si * e;
        p[static_cast<std::size_t>(j)] += sj * e;
        return loss(spec, p, d);
      };
      fd(i, j) = (at(1, 1) - at(1, -1) - at(-1, 1) + at(-1, -1)) / (4 * e * e);
    }
  }
  EXPECT_LT((h - fd).cwiseAbs().maxCoeff(), 1e-4);
}

TEST(Materialize, SymmetricOnHundredParameterNet) {
  const ModelSpec spec = ModelSpec::mlp(std::vector<std::size_t>{4, 10, 5}, Activation::kTanh, LossKind::kCrossEntropy);
  ASSERT_GE(spec.num_params(), 100u);
  const ParameterVector p = formula_params(spec);
  const Dataset d = formula_batch(4, 5, 30);
  const Eigen::MatrixXd h = materialize_hessian(spec, p, d);
  EXPECT_LE((h - h.transpose()).cwiseAbs().maxCoeff(), 1e-9);
  const ParameterVector v = testing::random_direction(p.segments(), 8);
  EXPECT_LT(testing::relative_error(h * v.values(), hvp(spec, p, d, v).values()), 1e-10);
}

TEST(Materialize, RefusesLargeModels) {
  const ModelSpec spec = ModelSpec::mlp(std::vector<std::size_t>{50, 50}, Activation::kTanh, LossKind::kCrossEntropy);
  ASSERT_GT(spec.num_params(), kMaxDenseDimension);
  EXPECT_THROW(materialize_hessian(spec, ParameterVector(spec.segment_map()), formula_batch(50, 50, 2)),
               ContractViolation);
}

TEST(Spectrum, EigenvectorCarriesSegments) {
  const Eigen::MatrixXd a = random_symmetric(6, 6);
  const SegmentMap segs = SegmentMap::from_lengths(std::vector<std::size_t>{2, 4});
  const Spectrum s = dense_eig(a, segs);
  EXPECT_EQ(s.eigenvector(0).segments(), segs);
  EXPECT_NEAR(s.eigenvector(0).norm(), 1.0, 1e-14);
}

}  // namespace
}  // namespace cetq
