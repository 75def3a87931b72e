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

#include <cstdint>
#include <span>
#include <string>
#include <string_view>

namespace cetq {

// 64-bit FNV-1a. Stable across platforms, used for cache keys and report provenance.
class Checksum {
 public:
  Checksum& update(std::span<const std::byte> bytes);
  Checksum& update(std::string_view text);
  Checksum& update(std::span<const double> values);
  Checksum& update(std::uint64_t value);

  std::uint64_t value() const { return state_; }
  std::string hex() const;

 private:
  std::uint64_t state_ = 14695981039346656037ULL;
};

}  // namespace cetq
