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

#include <Eigen/Dense>

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "cetq/parameter_vector.hpp"

namespace cetq {

// Desk-scale feedforward networks with exact loss, gradient and
// Hessian-vector products.
//
// Layers are indexed input to output: layer 0 consumes the sample and the
// last layer produces the logits (or regression outputs). The parameter
// vector stores layer 0's segment first.

enum class LayerKind { kDense, kConv2d };
enum class Activation { kIdentity, kRelu, kTanh };
enum class LossKind { kCrossEntropy, kMeanSquaredError };
enum class Split { kTrain, kCalibration, kEval };

std::string to_string(LayerKind kind);
std::string to_string(Activation act);
std::string to_string(LossKind kind);
std::string to_string(Split split);
LayerKind layer_kind_from_string(const std::string& s);
Activation activation_from_string(const std::string& s);
LossKind loss_kind_from_string(const std::string& s);
Split split_from_string(const std::string& s);

/// Channel-major tensor shape. Dense layers use (n, 1, 1).
struct Shape {
  std::size_t channels = 1;
  std::size_t height = 1;
  std::size_t width = 1;

  std::size_t size() const { return channels * height * width; }
  bool operator==(const Shape&) const = default;
};

/// One parametric layer followed by its activation.
///
/// Dense: weights are (out x in) row-major, then `out` biases.
/// Conv2d: valid padding, stride 1; weights (out_c, in_c, k, k), then out_c biases.
struct LayerSpec {
  LayerKind kind = LayerKind::kDense;
  Shape input;
  Shape output;
  std::size_t kernel = 0;
  Activation activation = Activation::kIdentity;

  static LayerSpec dense(std::size_t in, std::size_t out, Activation act);
  static LayerSpec conv2d(Shape in, std::size_t out_channels, std::size_t kernel, Activation act);

  std::size_t weight_count() const;
  std::size_t bias_count() const { return kind == LayerKind::kDense ? output.size() : output.channels; }
  std::size_t param_count() const { return weight_count() + bias_count(); }

  bool operator==(const LayerSpec&) const = default;
};

struct ModelSpec {
  std::vector<LayerSpec> layers;
  LossKind loss = LossKind::kCrossEntropy;

  /// Dense stack `widths[0] -> widths[1] -> ...`; hidden layers use `hidden`,
  /// the last layer is linear.
  static ModelSpec mlp(std::span<const std::size_t> widths, Activation hidden, LossKind loss);

  /// Throws ConfigError unless adjacent shapes compose and there is at least one layer.
  void validate() const;

  Shape input_shape() const { return layers.front().input; }
  std::size_t output_size() const { return layers.back().output.size(); }
  std::size_t num_params() const;
  SegmentMap segment_map() const;

  bool operator==(const ModelSpec&) const = default;
};

/// Labelled samples stored row-major. Regression sets additionally carry
/// real-valued targets of width `target_dim`; otherwise MSE compares the
/// outputs against one-hot labels.
class Dataset {
 public:
  Dataset() = default;
  Dataset(Shape input_shape, std::size_t num_classes, Split split, std::size_t target_dim = 0);

  void add(std::span<const double> input, std::int32_t label, std::span<const double> target = {});

  std::size_t size() const { return labels_.size(); }
  bool empty() const { return labels_.empty(); }
  const Shape& input_shape() const { return input_shape_; }
  std::size_t num_classes() const { return num_classes_; }
  std::size_t target_dim() const { return target_dim_; }
  Split split() const { return split_; }
  void set_split(Split s) { split_ = s; }

  std::span<const double> input(std::size_t i) const;
  std::int32_t label(std::size_t i) const { return labels_[i]; }
  std::span<const double> target(std::size_t i) const;

  const std::vector<double>& inputs() const { return inputs_; }
  const std::vector<std::int32_t>& labels() const { return labels_; }
  const std::vector<double>& targets() const { return targets_; }

  /// Samples [begin, end) as a new dataset with the given split tag.
  Dataset slice(std::size_t begin, std::size_t end, Split split) const;

  /// Throws ConfigError on label range or size violations.
  void validate() const;

  std::uint64_t checksum() const;

 private:
  Shape input_shape_;
  std::size_t num_classes_ = 0;
  std::size_t target_dim_ = 0;
  Split split_ = Split::kTrain;
  std::vector<double> inputs_;
  std::vector<std::int32_t> labels_;
  std::vector<double> targets_;
};

std::uint64_t checksum(const ModelSpec& spec);
std::uint64_t checksum(const ParameterVector& params);

/// Batch-mean loss f(W) = (1/m) sum_i loss(W, x_i, y_i).
///
/// `threads` splits the batch into fixed blocks that are reduced in block
/// order, so the result does not depend on the thread count.
double loss(const ModelSpec& spec, const ParameterVector& params, const Dataset& batch,
            std::size_t threads = 1);

ParameterVector gradient(const ModelSpec& spec, const ParameterVector& params, const Dataset& batch,
                         std::size_t threads = 1);

struct LossAndGradient {
  double loss = 0.0;
  ParameterVector gradient;
};
LossAndGradient loss_and_gradient(const ModelSpec& spec, const ParameterVector& params,
                                  const Dataset& batch, std::size_t threads = 1);

/// Exact H v for the batch-averaged Hessian, by forward-mode differentiation
/// of the reverse-mode gradient.
ParameterVector hvp(const ModelSpec& spec, const ParameterVector& params, const Dataset& batch,
                    const ParameterVector& v, std::size_t threads = 1);

/// loss(spec, params + delta, batch).
double perturbed_loss(const ModelSpec& spec, const ParameterVector& params,
                      const ParameterVector& delta, const Dataset& batch, std::size_t threads = 1);

/// Network output for one sample.
std::vector<double> predict(const ModelSpec& spec, const ParameterVector& params,
                            std::span<const double> input);

/// Top-1 accuracy for classification; for regression sets returns the MSE.
double accuracy(const ModelSpec& spec, const ParameterVector& params, const Dataset& batch);

/// Default initialisation: weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)), zero biases.
ParameterVector init_params(const ModelSpec& spec, std::uint64_t seed);

/// A twice-differentiable scalar function of a ParameterVector together with
/// the expansion point it is analysed at.
class Objective {
 public:
  virtual ~Objective() = default;

  virtual const ParameterVector& point() const = 0;
  virtual double loss_at(const ParameterVector& w) const = 0;
  virtual ParameterVector gradient_at(const ParameterVector& w) const = 0;
  virtual ParameterVector hvp_at(const ParameterVector& w, const ParameterVector& v) const = 0;

  /// Identify the model (including weights) and the data it is evaluated on.
  virtual std::uint64_t model_checksum() const = 0;
  virtual std::uint64_t data_checksum() const = 0;

  const SegmentMap& segments() const { return point().segments(); }
  std::size_t dimension() const { return point().size(); }

  double loss() const { return loss_at(point()); }
  ParameterVector gradient() const { return gradient_at(point()); }
  ParameterVector hvp(const ParameterVector& v) const { return hvp_at(point(), v); }
  double perturbed_loss(const ParameterVector& delta) const { return loss_at(point() + delta); }
};

/// A network evaluated on a fixed batch.
class NetworkObjective final : public Objective {
 public:
  NetworkObjective(ModelSpec spec, ParameterVector params, Dataset batch, std::size_t threads = 1);

  const ModelSpec& spec() const { return spec_; }
  const Dataset& batch() const { return batch_; }

  const ParameterVector& point() const override { return params_; }
  double loss_at(const ParameterVector& w) const override;
  ParameterVector gradient_at(const ParameterVector& w) const override;
  ParameterVector hvp_at(const ParameterVector& w, const ParameterVector& v) const override;
  std::uint64_t model_checksum() const override;
  std::uint64_t data_checksum() const override;

 private:
  ModelSpec spec_;
  ParameterVector params_;
  Dataset batch_;
  std::size_t threads_;
};

/// f(w) = 1/2 w^T A w + b^T w, analysed at a given point. Used as an exactly
/// quadratic surrogate in tests and constructed instances.
class QuadraticObjective final : public Objective {
 public:
  QuadraticObjective(Eigen::MatrixXd a, ParameterVector point);
  QuadraticObjective(Eigen::MatrixXd a, Eigen::VectorXd b, ParameterVector point);

  const Eigen::MatrixXd& matrix() const { return a_; }

  const ParameterVector& point() const override { return point_; }
  double loss_at(const ParameterVector& w) const override;
  ParameterVector gradient_at(const ParameterVector& w) const override;
  ParameterVector hvp_at(const ParameterVector& w, const ParameterVector& v) const override;
  std::uint64_t model_checksum() const override;
  std::uint64_t data_checksum() const override;

 private:
  Eigen::MatrixXd a_;
  Eigen::VectorXd b_;
  ParameterVector point_;
};

}  // namespace cetq
