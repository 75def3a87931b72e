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

#include "cetq/checksum.hpp"

#include <bit>
#include <cstdio>

namespace cetq {

Checksum& Checksum::update(std::span<const std::byte> bytes) {
  for (std::byte b : bytes) {
    state_ ^= static_cast<std::uint64_t>(b);
    state_ *= 1099511628211ULL;
  }
  return *this;
}

Checksum& Checksum::update(std::string_view text) {
  return update(std::as_bytes(std::span(text.data(), text.size())));
}

Checksum& Checksum::update(std::uint64_t value) {
  // Little-endian byte order regardless of host.
  std::byte buf[8];
  for (int i = 0; i < 8; ++i) buf[i] = static_cast<std::byte>((value >> (8 * i)) & 0xFF);
  return update(std::span<const std::byte>(buf, 8));
}

Checksum& Checksum::update(std::span<const double> values) {
  for (double v : values) update(std::bit_cast<std::uint64_t>(v));
  return *this;
}

std::string Checksum::hex() const {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(state_));
  return buf;
}

}  // namespace cetq
