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

#include "cetq/parameter_vector.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "cetq/error.hpp"

namespace cetq {

SegmentMap::SegmentMap(std::vector<Segment> segments) : segments_(std::move(segments)) {
  std::size_t cursor = 0;
  for (std::size_t i = 0; i < segments_.size(); ++i) {
    const Segment& s = segments_[i];
    if (s.offset != cursor) {
      throw ConfigError("segment " + std::to_string(i) + " starts at " +
                        std::to_string(s.offset) + ", expected " + std::to_string(cursor));
    }
    if (i > 0 && s.layer_id <= segments_[i - 1].layer_id) {
      throw ConfigError("segment layer ids must be strictly increasing");
    }
    cursor += s.length;
  }
  total_ = cursor;
}

SegmentMap SegmentMap::from_lengths(std::span<const std::size_t> lengths) {
  std::vector<Segment> segs;
  std::size_t offset = 0;
  for (std::size_t i = 0; i < lengths.size(); ++i) {
    segs.push_back({i, offset, lengths[i]});
    offset += lengths[i];
  }
  return SegmentMap(std::move(segs));
}

std::size_t SegmentMap::segment_of(std::size_t pos) const {
  auto it = std::upper_bound(segments_.begin(), segments_.end(), pos,
                             [](std::size_t p, const Segment& s) { return p < s.offset + s.length; });
  if (it == segments_.end()) throw ContractViolation("position outside segment map");
  return static_cast<std::size_t>(it - segments_.begin());
}

ParameterVector::ParameterVector(SegmentMap segments)
    : segments_(std::move(segments)),
      values_(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(segments_.total()))) {}

ParameterVector::ParameterVector(SegmentMap segments, Eigen::VectorXd values)
    : segments_(std::move(segments)), values_(std::move(values)) {
  if (static_cast<std::size_t>(values_.size()) != segments_.total()) {
    throw ConfigError("parameter vector of length " + std::to_string(values_.size()) +
                      " does not match segment map total " + std::to_string(segments_.total()));
  }
}

std::span<const double> ParameterVector::segment(std::size_t i) const {
  const Segment& s = segments_[i];
  return {values_.data() + s.offset, s.length};
}

std::span<double> ParameterVector::segment(std::size_t i) {
  const Segment& s = segments_[i];
  return {values_.data() + s.offset, s.length};
}

double ParameterVector::segment_rms(std::size_t i) const {
  auto seg = segment(i);
  if (seg.empty()) return 0.0;
  double ss = 0.0;
  for (double v : seg) ss += v * v;
  return std::sqrt(ss / static_cast<double>(seg.size()));
}

std::vector<double> ParameterVector::segment_rms() const {
  std::vector<double> out(segments_.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = segment_rms(i);
  return out;
}

ParameterVector ParameterVector::restricted_to(std::size_t i) const {
  ParameterVector out(segments_);
  auto src = segment(i);
  std::copy(src.begin(), src.end(), out.segment(i).begin());
  return out;
}

double ParameterVector::dot(const ParameterVector& other) const {
  require_aligned(other);
  return values_.dot(other.values_);
}

ParameterVector& ParameterVector::operator+=(const ParameterVector& other) {
  require_aligned(other);
  values_ += other.values_;
  return *this;
}

ParameterVector& ParameterVector::operator-=(const ParameterVector& other) {
  require_aligned(other);
  values_ -= other.values_;
  return *this;
}

ParameterVector& ParameterVector::operator*=(double s) {
  values_ *= s;
  return *this;
}

void ParameterVector::require_aligned(const ParameterVector& other) const {
  if (!aligned_with(other)) throw ConfigError("parameter vectors have different segment maps");
}

}  // namespace cetq
