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
#include <span>
#include <vector>

namespace cetq {

/// One layer's slice of the flat parameter array.
struct Segment {
  std::size_t layer_id = 0;
  std::size_t offset = 0;
  std::size_t length = 0;

  bool operator==(const Segment&) const = default;
};

/// Ordered, disjoint segments that exactly cover [0, total()).
///
/// Segments appear in layer order (input to output), each starting where the
/// previous one ends. The constructor rejects anything else.
class SegmentMap {
 public:
  SegmentMap() = default;
  explicit SegmentMap(std::vector<Segment> segments);

  /// Builds contiguous segments from lengths; layer ids are 0..n-1.
  static SegmentMap from_lengths(std::span<const std::size_t> lengths);

  std::size_t total() const { return total_; }
  std::size_t size() const { return segments_.size(); }
  bool empty() const { return segments_.empty(); }

  const Segment& operator[](std::size_t i) const { return segments_[i]; }
  auto begin() const { return segments_.begin(); }
  auto end() const { return segments_.end(); }

  /// Index of the segment that owns flat position `pos`.
  std::size_t segment_of(std::size_t pos) const;

  bool operator==(const SegmentMap&) const = default;

 private:
  std::vector<Segment> segments_;
  std::size_t total_ = 0;
};

/// Flat real vector tagged with the segment map of the model it belongs to.
///
/// Weights, gradients, Hessian-vector products and perturbations all share
/// this type so that misaligned arithmetic is caught at the boundary.
class ParameterVector {
 public:
  ParameterVector() = default;
  explicit ParameterVector(SegmentMap segments);
  ParameterVector(SegmentMap segments, Eigen::VectorXd values);

  const SegmentMap& segments() const { return segments_; }
  const Eigen::VectorXd& values() const { return values_; }
  Eigen::VectorXd& values() { return values_; }

  std::size_t size() const { return static_cast<std::size_t>(values_.size()); }
  double operator[](std::size_t i) const { return values_[static_cast<Eigen::Index>(i)]; }
  double& operator[](std::size_t i) { return values_[static_cast<Eigen::Index>(i)]; }

  std::span<const double> span() const { return {values_.data(), size()}; }
  std::span<double> span() { return {values_.data(), size()}; }
  std::span<const double> segment(std::size_t i) const;
  std::span<double> segment(std::size_t i);

  /// Root-mean-square of segment i.
  double segment_rms(std::size_t i) const;
  std::vector<double> segment_rms() const;

  bool aligned_with(const ParameterVector& other) const { return segments_ == other.segments_; }

  /// Copy with every segment except `i` zeroed.
  ParameterVector restricted_to(std::size_t i) const;

  double dot(const ParameterVector& other) const;
  double norm() const { return values_.norm(); }

  ParameterVector& operator+=(const ParameterVector& other);
  ParameterVector& operator-=(const ParameterVector& other);
  ParameterVector& operator*=(double s);

  friend ParameterVector operator+(ParameterVector a, const ParameterVector& b) { return a += b; }
  friend ParameterVector operator-(ParameterVector a, const ParameterVector& b) { return a -= b; }
  friend ParameterVector operator*(ParameterVector a, double s) { return a *= s; }
  friend ParameterVector operator*(double s, ParameterVector a) { return a *= s; }
  friend ParameterVector operator-(ParameterVector a) { return a *= -1.0; }

 private:
  void require_aligned(const ParameterVector& other) const;

  SegmentMap segments_;
  Eigen::VectorXd values_;
};

}  // namespace cetq
