// Copyright 2026 The lowbit Authors
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "lowbit/artifact.hpp"

#include <cstdio>
#include <fstream>
#include <iterator>

#include <gtest/gtest.h>

#include "lowbit/calib.hpp"
#include "lowbit/errors.hpp"
#include "lowbit/sensitivity.hpp"
#include "support/audit.hpp"

namespace lowbit {
namespace {

struct Fixture {
  ModelSpec spec;
  Model model;
  BitAssignment assignment;
  QuantizedModel quantized;
  nlohmann::json config;
};

const Fixture& fixture() {
  static const Fixture f = [] {
    ModelSpec spec;
    spec.vocab = 32;
    spec.hidden = 16;
    spec.heads = 2;
    spec.ffn = 32;
    spec.n_blocks = 1;
    spec.seed = 9;
    spec.pretrain_steps = 20;
    Model model = Model::build(spec);
    const CalibSet calib = synthetic_calibration(32, 9, 4, 12, 8, 1);
    const SensitivityReport rep = build_report(model, {2, 4, 8}, SchemeFamily::kIntSym, 8, calib);
    const AllocationProblem p = problem_from_report(rep, Rational::of(7, 2), {"lm_head"});
    BitAssignment a = testing::audited(allocate_dp(p), p, "artifact_test");
    TuneConfig cfg;
    cfg.steps = 10;
    QuantizedModel q = quantize_model(model, schemes_from_assignment(model, a), calib, cfg);
    nlohmann::json config = {{"model", spec.to_json()}, {"tune", cfg.to_json()}};
    return Fixture{spec, std::move(model), std::move(a), std::move(q), std::move(config)};
  }();
  return f;
}

QuantizedArtifact make_artifact() {
  const Fixture& f = fixture();
  return build_artifact(f.model, f.quantized, f.config, f.assignment.to_json());
}

TEST(DigestTest, Fnv1aReferenceValues) {
  // Published FNV-1a 64 test vectors.
  EXPECT_EQ(fnv1a64(std::string()), 0xcbf29ce484222325ULL);
  EXPECT_EQ(fnv1a64(std::string("a")), 0xaf63dc4c8601ec8cULL);
  EXPECT_EQ(fnv1a64(std::string("foobar")), 0x85944171f73967e8ULL);
}

TEST(ArtifactTest, BytesRoundTrip) {
  const QuantizedArtifact a = make_artifact();
  const auto bytes = a.to_bytes();
  const QuantizedArtifact b = QuantizedArtifact::from_bytes(bytes);
  EXPECT_EQ(b.layers, a.layers);
  EXPECT_EQ(b.config, a.config);
  EXPECT_EQ(b.trailer, a.trailer);
  EXPECT_EQ(b.to_bytes(), bytes);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "LBQA");
}

TEST(ArtifactTest, DequantizedModelMatchesTunedWeights) {
  const Fixture& f = fixture();
  const Model m = make_artifact().dequantized_model();
  for (std::size_t l = 0; l < m.layers().size(); ++l) {
    EXPECT_EQ(m.weight(l), f.quantized.model.weight(l)) << m.layers()[l].name;
  }
  EXPECT_EQ(m.weight(m.layer_index("lm_head")), f.model.weight(f.model.layer_index("lm_head")));
}

TEST(ArtifactTest, FileRoundTripAndVerify) {
  const std::string path = ::testing::TempDir() + "lowbit_artifact.lbq";
  const QuantizedArtifact a = make_artifact();
  a.write(path);
  const QuantizedArtifact b = QuantizedArtifact::read(path);
  for (const VerifyCheck& c : verify_artifact(b)) EXPECT_TRUE(c.ok) << c.name << ": " << c.detail;
  std::remove(path.c_str());
}

TEST(ArtifactTest, CorruptionIsDetected) {
  auto bytes = make_artifact().to_bytes();
  for (std::size_t pos : {std::size_t{2}, bytes.size() / 2, bytes.size() - 1}) {
    auto bad = bytes;
    bad[pos] ^= 0x10;
    EXPECT_THROW(QuantizedArtifact::from_bytes(bad), FormatError) << pos;
  }
  EXPECT_THROW(QuantizedArtifact::from_bytes(std::span(bytes).first(5)), FormatError);
  EXPECT_THROW(QuantizedArtifact::read(::testing::TempDir() + "does_not_exist.lbq"), FormatError);
}

TEST(ArtifactTest, VerifyFlagsTamperedParameters) {
  QuantizedArtifact a = make_artifact();
  for (ArtifactLayer& l : a.layers) {
    if (l.scheme.is_identity()) continue;
    l.v[0] = l.v[0] > 0 ? -0.5 : 0.5;
    break;
  }
  bool flagged = false;
  for (const VerifyCheck& c : verify_artifact(a)) {
    if (c.name == "re-encode from parameters") flagged = !c.ok;
  }
  EXPECT_TRUE(flagged);
  a = make_artifact();
  a.assignment["solver"] = "tampered";
  bool digest_flagged = false;
  for (const VerifyCheck& c : verify_artifact(a)) {
    if (c.name == "assignment digest") digest_flagged = !c.ok;
  }
  EXPECT_TRUE(digest_flagged);
}

TEST(ArtifactTest, EncodeDecodeLayer) {
  const Fixture& f = fixture();
  for (const TunedLayer& l : f.quantized.layers) {
    const Tensor& w = f.model.weight(l.layer);
    EXPECT_EQ(decode_stream(encode_layer(w, l)), l.qdq(w)) << l.name;
  }
}

}  // namespace
}  // namespace lowbit
