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

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include "cetq/model.hpp"
#include "cetq/parameter_vector.hpp"
#include "cetq/quantizer.hpp"
#include "cetq/spectral.hpp"

namespace cetq {

// Container format: a JSON manifest at `path` plus a sidecar blob at
// `path` + ".bin" holding little-endian values. Every manifest carries
// "schema_version".

inline constexpr int kSchemaVersion = 1;

using Json = nlohmann::json;

struct CheckpointMetadata {
  std::uint64_t seed = 0;
  std::size_t epochs = 0;
  double final_loss = 0.0;
  double gradient_inf_norm = 0.0;
  bool converged = false;
};

/// A model at a (hopefully) converged point.
struct Checkpoint {
  ModelSpec spec;
  ParameterVector params;
  CheckpointMetadata metadata;
};

std::filesystem::path blob_path(const std::filesystem::path& manifest);

Json read_json(const std::filesystem::path& path);
/// Pretty-printed with a trailing newline.
void write_json(const std::filesystem::path& path, const Json& j);

Json to_json(const ModelSpec& spec);
ModelSpec model_spec_from_json(const Json& j);
Json to_json(const SegmentMap& segments);
SegmentMap segment_map_from_json(const Json& j);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Blob: inputs (f64, row-major), labels (i32), then targets (f64) if any.
void save_dataset(const std::filesystem::path& path, const Dataset& data);
Dataset load_dataset(const std::filesystem::path& path);

/// Cache key over the model, the batch and every config field that changes the result.
std::string spectrum_cache_key(std::uint64_t model_checksum, std::uint64_t data_checksum,
                               const LanczosConfig& cfg);
void save_spectrum(const std::filesystem::path& path, const Spectrum& spectrum, const std::string& key);
/// Nothing when the file is missing or was written under another key.
std::optional<Spectrum> load_spectrum(const std::filesystem::path& path, const std::string& key);

Json to_json(const BitPlan& plan);
BitPlan bit_plan_from_json(const Json& j);
void save_bit_plan(const std::filesystem::path& path, const BitPlan& plan);
BitPlan load_bit_plan(const std::filesystem::path& path);

/// Integer codes per layer with their QuantParams in the manifest;
/// full-precision layers are stored as f64.
void save_quantized_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint,
                               const BitPlan& plan);
/// Dequantised weights; equal to apply_plan(params, plan).
Checkpoint load_quantized_checkpoint(const std::filesystem::path& path);

}  // namespace cetq
