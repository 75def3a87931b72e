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


#include "cetq/io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "cetq/checksum.hpp"
#include "cetq/error.hpp"

namespace cetq {

namespace fs = std::filesystem;

namespace {

class BlobWriter {
 public:
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void f64(std::span<const double> v) {
    for (double x : v) f64(x);
  }
  void i32(std::int32_t v) {
    const auto u = static_cast<std::uint32_t>(v);
    for (int i = 0; i < 4; ++i) bytes_.push_back(static_cast<char>((u >> (8 * i)) & 0xFFu));
  }
  void u64(std::uint64_t u) {
    for (int i = 0; i < 8; ++i) bytes_.push_back(static_cast<char>((u >> (8 * i)) & 0xFFu));
  }
  std::size_t size() const { return bytes_.size(); }

  void save(const fs::path& path) const {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    out.write(bytes_.data(), static_cast<std::streamsize>(bytes_.size()));
    if (!out) throw IoError("failed writing " + path.string());
  }

 private:
  std::vector<char> bytes_;
};

class BlobReader {
 public:
  explicit BlobReader(const fs::path& path) : path_(path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    bytes_.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
  }
  double f64() { return std::bit_cast<double>(u64()); }
  void f64(std::span<double> out) {
    for (double& x : out) x = f64();
  }
  std::int32_t i32() {
    need(4);
    std::uint32_t u = 0;
    for (int i = 0; i < 4; ++i) u |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return static_cast<std::int32_t>(u);
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t u = 0;
    for (int i = 0; i < 8; ++i) u |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += 8;
    return u;
  }
  void expect_end() const {
    if (pos_ != bytes_.size()) throw IoError(path_.string() + ": trailing bytes in blob");
  }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) throw IoError(path_.string() + ": blob is truncated");
  }

  fs::path path_;
  std::vector<char> bytes_;
  std::size_t pos_ = 0;
};

Json shape_json(const Shape& s) { return Json::array({s.channels, s.height, s.width}); }

Shape shape_from_json(const Json& j) {
  if (!j.is_array() || j.size() != 3) throw IoError("shape must be [channels, height, width]");
  return {j[0].get<std::size_t>(), j[1].get<std::size_t>(), j[2].get<std::size_t>()};
}

void expect_kind(const Json& j, const std::string& kind, const fs::path& path) {
  if (!j.is_object() || !j.contains("schema_version") || !j.contains("kind")) {
    throw IoError(path.string() + ": not a manifest");
  }
  if (j["schema_version"].get<int>() != kSchemaVersion) {
    throw IoError(path.string() + ": unsupported schema version");
  }
  if (j["kind"].get<std::string>() != kind) {
    throw IoError(path.string() + ": expected a " + kind + ", found " + j["kind"].get<std::string>());
  }
}

std::string hex(std::uint64_t v) {
  std::ostringstream s;
  s << std::hex << std::setw(16) << std::setfill('0') << v;
  return s.str();
}

Json metadata_json(const CheckpointMetadata& m) {
  return {{"seed", m.seed},
          {"epochs", m.epochs},
          {"final_loss", m.final_loss},
          {"gradient_inf_norm", m.gradient_inf_norm},
          {"converged", m.converged}};
}

CheckpointMetadata metadata_from_json(const Json& j) {
  CheckpointMetadata m;
  m.seed = j.value("seed", std::uint64_t{0});
  m.epochs = j.value("epochs", std::size_t{0});
  m.final_loss = j.value("final_loss", 0.0);
  m.gradient_inf_norm = j.value("gradient_inf_norm", 0.0);
  m.converged = j.value("converged", false);
  return m;
}

template <typename F>
auto wrap_json_errors(const fs::path& path, F&& f) {
  try {
    return f();
  } catch (const Json::exception& e) {
    throw IoError(path.string() + ": malformed manifest: " + e.what());
  } catch (const ConfigError& e) {
    throw IoError(path.string() + ": " + e.what());
  }
}

}  // namespace

fs::path blob_path(const fs::path& manifest) {
  fs::path p = manifest;
  p += ".bin";
  return p;
}

Json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  try {
    return Json::parse(in);
  } catch (const Json::exception& e) {
    throw IoError(path.string() + ": invalid JSON: " + e.what());
  }
}

void write_json(const fs::path& path, const Json& j) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << j.dump(2) << '\n';
  if (!out) throw IoError("failed writing " + path.string());
}

Json to_json(const ModelSpec& spec) {
  Json layers = Json::array();
  for (const auto& l : spec.layers) {
    layers.push_back({{"kind", to_string(l.kind)},
                      {"input", shape_json(l.input)},
                      {"output", shape_json(l.output)},
                      {"kernel", l.kernel},
                      {"activation", to_string(l.activation)}});
  }
  return {{"loss", to_string(spec.loss)}, {"layers", layers}};
}

ModelSpec model_spec_from_json(const Json& j) {
  ModelSpec spec;
  spec.loss = loss_kind_from_string(j.at("loss").get<std::string>());
  for (const auto& l : j.at("layers")) {
    LayerSpec layer;
    layer.kind = layer_kind_from_string(l.at("kind").get<std::string>());
    layer.input = shape_from_json(l.at("input"));
    layer.output = shape_from_json(l.at("output"));
    layer.kernel = l.value("kernel", std::size_t{0});
    layer.activation = activation_from_string(l.at("activation").get<std::string>());
    spec.layers.push_back(layer);
  }
  spec.validate();
  return spec;
}

Json to_json(const SegmentMap& segments) {
  Json out = Json::array();
  for (const auto& s : segments) out.push_back({{"layer_id", s.layer_id}, {"offset", s.offset}, {"length", s.length}});
  return out;
}

SegmentMap segment_map_from_json(const Json& j) {
  std::vector<Segment> segs;
  for (const auto& s : j) {
    segs.push_back({s.at("layer_id").get<std::size_t>(), s.at("offset").get<std::size_t>(),
                    s.at("length").get<std::size_t>()});
  }
  return SegmentMap(std::move(segs));
}

void save_checkpoint(const fs::path& path, const Checkpoint& checkpoint) {
  checkpoint.spec.validate();
  if (checkpoint.params.segments() != checkpoint.spec.segment_map()) {
    throw ConfigError("checkpoint parameters do not match the model layout");
  }
  const Json manifest = {{"schema_version", kSchemaVersion},
                         {"kind", "checkpoint"},
                         {"spec", to_json(checkpoint.spec)},
                         {"segments", to_json(checkpoint.params.segments())},
                         {"metadata", metadata_json(checkpoint.metadata)},
                         {"num_values", checkpoint.params.size()},
                         {"blob", blob_path(path).filename().string()},
                         {"checksum", hex(checksum(checkpoint.params))}};
  BlobWriter blob;
  blob.f64(checkpoint.params.span());
  blob.save(blob_path(path));
  write_json(path, manifest);
}

Checkpoint load_checkpoint(const fs::path& path) {
  const Json j = read_json(path);
  expect_kind(j, "checkpoint", path);
  return wrap_json_errors(path, [&] {
    Checkpoint c;
    c.spec = model_spec_from_json(j.at("spec"));
    const SegmentMap segs = segment_map_from_json(j.at("segments"));
    if (segs != c.spec.segment_map()) throw IoError(path.string() + ": segment map does not match spec");
    BlobReader blob(path.parent_path() / j.at("blob").get<std::string>());
    ParameterVector params(segs);
    blob.f64(params.span());
    blob.expect_end();
    if (hex(checksum(params)) != j.at("checksum").get<std::string>()) {
      throw IoError(path.string() + ": checksum mismatch");
    }
    c.params = std::move(params);
    c.metadata = metadata_from_json(j.at("metadata"));
    return c;
  });
}

void save_dataset(const fs::path& path, const Dataset& data) {
  data.validate();
  const Json manifest = {{"schema_version", kSchemaVersion},
                         {"kind", "dataset"},
                         {"split", to_string(data.split())},
                         {"input_shape", shape_json(data.input_shape())},
                         {"num_classes", data.num_classes()},
                         {"target_dim", data.target_dim()},
                         {"num_samples", data.size()},
                         {"blob", blob_path(path).filename().string()},
                         {"checksum", hex(data.checksum())}};
  BlobWriter blob;
  blob.f64(data.inputs());
  for (auto l : data.labels()) blob.i32(l);
  blob.f64(data.targets());
  blob.save(blob_path(path));
  write_json(path, manifest);
}

Dataset load_dataset(const fs::path& path) {
  const Json j = read_json(path);
  expect_kind(j, "dataset", path);
  return wrap_json_errors(path, [&] {
    const Shape shape = shape_from_json(j.at("input_shape"));
    const auto n = j.at("num_samples").get<std::size_t>();
    const auto target_dim = j.at("target_dim").get<std::size_t>();
    Dataset data(shape, j.at("num_classes").get<std::size_t>(),
                 split_from_string(j.at("split").get<std::string>()), target_dim);
    BlobReader blob(path.parent_path() / j.at("blob").get<std::string>());
    std::vector<double> inputs(n * shape.size());
    blob.f64(inputs);
    std::vector<std::int32_t> labels(n);
    for (auto& l : labels) l = blob.i32();
    std::vector<double> targets(n * target_dim);
    blob.f64(targets);
    blob.expect_end();
    for (std::size_t i = 0; i < n; ++i) {
      data.add(std::span<const double>(inputs).subspan(i * shape.size(), shape.size()), labels[i],
               std::span<const double>(targets).subspan(i * target_dim, target_dim));
    }
    if (hex(data.checksum()) != j.at("checksum").get<std::string>()) {
      throw IoError(path.string() + ": checksum mismatch");
    }
    return data;
  });
}

std::string spectrum_cache_key(std::uint64_t model_checksum, std::uint64_t data_checksum,
                               const LanczosConfig& cfg) {
  Checksum c;
  c.update(model_checksum).update(data_checksum);
  c.update(static_cast<std::uint64_t>(cfg.max_iterations));
  c.update(static_cast<std::uint64_t>(cfg.num_eigenpairs));
  c.update(cfg.seed);
  c.update(static_cast<std::uint64_t>(cfg.reorthogonalize));
  c.update(static_cast<std::uint64_t>(cfg.max_restarts));
  const double tol = cfg.residual_tolerance.value_or(-1.0);
  c.update(std::span<const double>(&tol, 1));
  return hex(model_checksum) + "-" + hex(data_checksum) + "-" + c.hex();
}

void save_spectrum(const fs::path& path, const Spectrum& s, const std::string& key) {
  const Json manifest = {{"schema_version", kSchemaVersion},
                         {"kind", "spectrum"},
                         {"key", key},
                         {"dimension", s.dimension},
                         {"count", s.size()},
                         {"segments", to_json(s.segments)},
                         {"residual_tolerance", s.residual_tolerance},
                         {"iterations", s.iterations},
                         {"restarts", s.restarts},
                         {"basis_orthogonality", s.basis_orthogonality},
                         {"blob", blob_path(path).filename().string()}};
  BlobWriter blob;
  blob.f64(std::span<const double>(s.eigenvalues.data(), s.size()));
  blob.f64(std::span<const double>(s.residuals.data(), s.size()));
  blob.f64(std::span<const double>(s.eigenvectors.data(), static_cast<std::size_t>(s.eigenvectors.size())));
  blob.save(blob_path(path));
  write_json(path, manifest);
}

std::optional<Spectrum> load_spectrum(const fs::path& path, const std::string& key) {
  if (!fs::exists(path)) return std::nullopt;
  const Json j = read_json(path);
  expect_kind(j, "spectrum", path);
  if (j.value("key", std::string()) != key) return std::nullopt;
  return wrap_json_errors(path, [&] {
    Spectrum s;
    s.dimension = j.at("dimension").get<std::size_t>();
    const auto k = static_cast<Eigen::Index>(j.at("count").get<std::size_t>());
    s.segments = segment_map_from_json(j.at("segments"));
    s.residual_tolerance = j.at("residual_tolerance").get<double>();
    s.iterations = j.at("iterations").get<std::size_t>();
    s.restarts = j.at("restarts").get<std::size_t>();
    s.basis_orthogonality = j.value("basis_orthogonality", 0.0);
    BlobReader blob(path.parent_path() / j.at("blob").get<std::string>());
    s.eigenvalues.resize(k);
    s.residuals.resize(k);
    s.eigenvectors.resize(static_cast<Eigen::Index>(s.dimension), k);
    blob.f64(std::span<double>(s.eigenvalues.data(), static_cast<std::size_t>(k)));
    blob.f64(std::span<double>(s.residuals.data(), static_cast<std::size_t>(k)));
    blob.f64(std::span<double>(s.eigenvectors.data(), static_cast<std::size_t>(s.eigenvectors.size())));
    blob.expect_end();
    return std::optional<Spectrum>(std::move(s));
  });
}

Json to_json(const BitPlan& plan) {
  Json layers = Json::array();
  for (const auto& l : plan.layers) {
    layers.push_back({{"layer_id", l.layer_id},
                      {"size", l.size},
                      {"bits", l.bits},
                      {"delta_rms_budget", l.delta_rms_budget},
                      {"achieved_quant_rms", l.achieved_quant_rms},
                      {"mapping_used", to_string(l.mapping)}});
  }
  return {{"schema_version", kSchemaVersion},
          {"kind", "bit_plan"},
          {"layers", layers},
          {"total_params", plan.total_params()},
          {"total_bits", plan.total_bits()},
          {"average_bits", plan.average_bits()},
          {"compression_ratio", plan.compression_ratio()}};
}

BitPlan bit_plan_from_json(const Json& j) {
  BitPlan plan;
  for (const auto& l : j.at("layers")) {
    LayerBits lb;
    lb.layer_id = l.at("layer_id").get<std::size_t>();
    lb.size = l.at("size").get<std::size_t>();
    lb.bits = l.at("bits").get<int>();
    lb.delta_rms_budget = l.value("delta_rms_budget", 0.0);
    lb.achieved_quant_rms = l.value("achieved_quant_rms", 0.0);
    lb.mapping = mapping_kind_from_string(l.at("mapping_used").get<std::string>());
    plan.layers.push_back(lb);
  }
  return plan;
}

void save_bit_plan(const fs::path& path, const BitPlan& plan) { write_json(path, to_json(plan)); }

BitPlan load_bit_plan(const fs::path& path) {
  const Json j = read_json(path);
  expect_kind(j, "bit_plan", path);
  return wrap_json_errors(path, [&] { return bit_plan_from_json(j); });
}

void save_quantized_checkpoint(const fs::path& path, const Checkpoint& checkpoint, const BitPlan& plan) {
  const SegmentMap& segs = checkpoint.params.segments();
  plan.validate(segs);
  BlobWriter blob;
  Json layers = Json::array();
  for (std::size_t i = 0; i < segs.size(); ++i) {
    const int b = plan.layers[i].bits;
    const auto w = checkpoint.params.segment(i);
    Json entry = {{"layer_id", segs[i].layer_id}, {"bits", b}, {"length", segs[i].length}};
    if (b == kFullPrecisionBits) {
      blob.f64(w);
    } else {
      const std::vector<int> one{b};
      const QuantParams qp = quant_params(w, b, one);
      const QuantizedTensor q = quantize(w, qp);
      for (auto c : q.codes) blob.i32(c);
      entry["step"] = qp.step;
      entry["zero_point"] = qp.zero_point;
      entry["range_min"] = qp.range_min;
      entry["range_max"] = qp.range_max;
    }
    layers.push_back(entry);
  }
  const Json manifest = {{"schema_version", kSchemaVersion},
                         {"kind", "quantized_checkpoint"},
                         {"spec", to_json(checkpoint.spec)},
                         {"segments", to_json(segs)},
                         {"metadata", metadata_json(checkpoint.metadata)},
                         {"layers", layers},
                         {"blob", blob_path(path).filename().string()}};
  blob.save(blob_path(path));
  write_json(path, manifest);
}

Checkpoint load_quantized_checkpoint(const fs::path& path) {
  const Json j = read_json(path);
  expect_kind(j, "quantized_checkpoint", path);
  return wrap_json_errors(path, [&] {
    Checkpoint c;
    c.spec = model_spec_from_json(j.at("spec"));
    const SegmentMap segs = segment_map_from_json(j.at("segments"));
    c.metadata = metadata_from_json(j.at("metadata"));
    BlobReader blob(path.parent_path() / j.at("blob").get<std::string>());
    ParameterVector params(segs);
    const Json& layers = j.at("layers");
    if (layers.size() != segs.size()) throw IoError(path.string() + ": layer count mismatch");
    for (std::size_t i = 0; i < segs.size(); ++i) {
      const Json& e = layers[i];
      const int b = e.at("bits").get<int>();
      auto out = params.segment(i);
      if (b == kFullPrecisionBits) {
        blob.f64(out);
        continue;
      }
      QuantizedTensor q;
      q.params.bits = b;
      q.params.step = e.at("step").get<double>();
      q.params.zero_point = e.at("zero_point").get<std::int64_t>();
      q.params.range_min = e.at("range_min").get<double>();
      q.params.range_max = e.at("range_max").get<double>();
      q.codes.resize(out.size());
      for (auto& code : q.codes) code = blob.i32();
      const auto deq = dequantize(q);
      std::copy(deq.begin(), deq.end(), out.begin());
    }
    blob.expect_end();
    c.params = std::move(params);
    return c;
  });
}

}  // namespace cetq
