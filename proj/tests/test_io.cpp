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

#include <filesystem>
#include <fstream>
#include <vector>

#include "cetq/error.hpp"
#include "cetq/harness.hpp"
#include "cetq/io.hpp"
#include "cetq/spectral.hpp"
#include "support.hpp"

namespace cetq {
namespace {

namespace fs = std::filesystem;

class IoTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir = fs::temp_directory_path() / ("cetq_io_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir);
    fs::create_directories(dir);
    checkpoint.spec = ModelSpec::mlp(std::vector<std::size_t>{3, 5, 2}, Activation::kRelu, LossKind::kCrossEntropy);
    checkpoint.params = init_params(checkpoint.spec, 4);
    checkpoint.metadata.seed = 4;
    checkpoint.metadata.epochs = 17;
    checkpoint.metadata.final_loss = 0.375;
    checkpoint.metadata.gradient_inf_norm = 2e-4;
    checkpoint.metadata.converged = true;
  }
  void TearDown() override { fs::remove_all(dir); }

  fs::path dir;
  Checkpoint checkpoint;
};

void flip_byte(const fs::path& p, std::size_t offset) {
  std::fstream f(p, std::ios::in | std::ios::out | std::ios::binary);
  f.seekg(static_cast<std::streamoff>(offset));
  char c = 0;
  f.read(&c, 1);
  c = static_cast<char>(c ^ 0x5A);
  f.seekp(static_cast<std::streamoff>(offset));
  f.write(&c, 1);
}

TEST_F(IoTest, CheckpointRoundTrip) {
  save_checkpoint(dir / "m.json", checkpoint);
  EXPECT_TRUE(fs::exists(blob_path(dir / "m.json")));
  const Checkpoint back = load_checkpoint(dir / "m.json");
  EXPECT_EQ(back.params.values(), checkpoint.params.values());
  EXPECT_EQ(back.spec.segment_map(), checkpoint.spec.segment_map());
  EXPECT_EQ(checksum(back.spec), checksum(checkpoint.spec));
  EXPECT_EQ(back.metadata.epochs, 17u);
  EXPECT_EQ(back.metadata.final_loss, 0.375);
  EXPECT_TRUE(back.metadata.converged);
}

TEST_F(IoTest, CorruptedOrTruncatedBlobIsRejected) {
  save_checkpoint(dir / "m.json", checkpoint);
  flip_byte(blob_path(dir / "m.json"), 9);
  EXPECT_THROW(load_checkpoint(dir / "m.json"), IoError);

  save_checkpoint(dir / "t.json", checkpoint);
  fs::resize_file(blob_path(dir / "t.json"), fs::file_size(blob_path(dir / "t.json")) - 3);
  EXPECT_THROW(load_checkpoint(dir / "t.json"), IoError);

  save_checkpoint(dir / "g.json", checkpoint);
  std::ofstream(blob_path(dir / "g.json"), std::ios::app | std::ios::binary) << "extra";
  EXPECT_THROW(load_checkpoint(dir / "g.json"), IoError);

  EXPECT_THROW(load_checkpoint(dir / "missing.json"), IoError);
  std::ofstream(dir / "bad.json") << "{ not json";
  EXPECT_THROW(load_checkpoint(dir / "bad.json"), IoError);
}

TEST_F(IoTest, WrongKindIsRejected) {
  save_bit_plan(dir / "p.json", BitPlan::uniform(checkpoint.params, 4));
  EXPECT_THROW(load_checkpoint(dir / "p.json"), IoError);
  Json j = read_json(dir / "p.json");
  j["schema_version"] = kSchemaVersion + 1;
  write_json(dir / "p.json", j);
  EXPECT_THROW(load_bit_plan(dir / "p.json"), IoError);
}

TEST_F(IoTest, DatasetRoundTrip) {
  GeneratorConfig gen;
  gen.kind = GeneratorKind::kTeacher;
  gen.teacher_outputs = 2;
  gen.input_dim = 3;
  for (const Dataset& d : {generate_data(GeneratorConfig{}).calibration, generate_data(gen).eval}) {
    save_dataset(dir / "d.json", d);
    const Dataset back = load_dataset(dir / "d.json");
    EXPECT_EQ(back.inputs(), d.inputs());
    EXPECT_EQ(back.labels(), d.labels());
    EXPECT_EQ(back.targets(), d.targets());
    EXPECT_EQ(back.split(), d.split());
    EXPECT_EQ(back.input_shape(), d.input_shape());
    EXPECT_EQ(back.checksum(), d.checksum());
  }
  flip_byte(blob_path(dir / "d.json"), 4);
  EXPECT_THROW(load_dataset(dir / "d.json"), IoError);
}

TEST_F(IoTest, BitPlanRoundTrip) {
  const std::vector<int> bits{3, kFullPrecisionBits};
  BitPlan plan = BitPlan::from_bits(checkpoint.params, bits, MappingKind::kErrorMapping);
  plan.layers[0].delta_rms_budget = 0.0123;
  save_bit_plan(dir / "p.json", plan);
  EXPECT_EQ(load_bit_plan(dir / "p.json"), plan);
  EXPECT_EQ(bit_plan_from_json(to_json(plan)), plan);
  EXPECT_EQ(to_json(load_bit_plan(dir / "p.json")).dump(), to_json(plan).dump());
}

TEST_F(IoTest, SpectrumRoundTripAndKey) {
  const SegmentMap segs = checkpoint.params.segments();
  const Spectrum s = dense_eig(testing::random_symmetric(segs.total(), 3), segs);
  LanczosConfig cfg;
  const std::string key = spectrum_cache_key(1, 2, cfg);
  save_spectrum(dir / "s.json", s, key);
  const auto back = load_spectrum(dir / "s.json", key);
  ASSERT_TRUE(back.has_value());
  EXPECT_EQ(back->eigenvalues, s.eigenvalues);
  EXPECT_EQ(back->eigenvectors, s.eigenvectors);
  EXPECT_EQ(back->residuals, s.residuals);
  EXPECT_EQ(back->segments, s.segments);
  EXPECT_EQ(back->basis_orthogonality, s.basis_orthogonality);
  EXPECT_FALSE(load_spectrum(dir / "s.json", spectrum_cache_key(1, 3, cfg)).has_value());
  EXPECT_FALSE(load_spectrum(dir / "absent.json", key).has_value());
  LanczosConfig other = cfg;
  other.seed = 1;
  EXPECT_NE(spectrum_cache_key(1, 2, other), key);
  other = cfg;
  other.max_iterations = 50;
  EXPECT_NE(spectrum_cache_key(1, 2, other), key);
  EXPECT_EQ(spectrum_cache_key(1, 2, cfg), key);
}

TEST_F(IoTest, QuantizedCheckpointMatchesApplyPlan) {
  const std::vector<int> bits{2, 8};
  const BitPlan plan = BitPlan::from_bits(checkpoint.params, bits, MappingKind::kSearch);
  save_quantized_checkpoint(dir / "q.json", checkpoint, plan);
  const Checkpoint back = load_quantized_checkpoint(dir / "q.json");
  EXPECT_EQ(back.params.values(), apply_plan(checkpoint.params, plan).values());
  const std::vector<int> mixed{4, kFullPrecisionBits};
  const BitPlan partial = BitPlan::from_bits(checkpoint.params, mixed, MappingKind::kSearch);
  save_quantized_checkpoint(dir / "r.json", checkpoint, partial);
  EXPECT_EQ(load_quantized_checkpoint(dir / "r.json").params.values(), apply_plan(checkpoint.params, partial).values());
  fs::resize_file(blob_path(dir / "r.json"), 5);
  EXPECT_THROW(load_quantized_checkpoint(dir / "r.json"), IoError);
}

TEST_F(IoTest, JsonHelpers) {
  const Json j = {{"a", 1}, {"b", {1.5, 2.5}}};
  write_json(dir / "x.json", j);
  EXPECT_EQ(read_json(dir / "x.json"), j);
  EXPECT_EQ(model_spec_from_json(to_json(checkpoint.spec)).segment_map(), checkpoint.spec.segment_map());
  EXPECT_EQ(segment_map_from_json(to_json(checkpoint.params.segments())), checkpoint.params.segments());
  EXPECT_THROW(write_json(dir / "no" / "such" / "dir" / "x.json", j), IoError);
}

}  // namespace
}  // namespace cetq
