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

// Quantized model files.
//
// Layout, integers little-endian:
//   "LBQA" | u32 version
//   u64 config digest | u64 assignment digest
//   u32 n + config JSON | u32 n + assignment JSON
//   u32 layer count, then per layer:
//     u32 n + name | u8 family | u8 bits | u32 group_size
//     packed weight record (see packing.hpp)
//     v, alpha, beta, init_scale: u64 count + f64 values each
//   u32 n + trailer JSON (per-stage losses)
//   u64 digest of every preceding byte
// Digests are FNV-1a 64 over the compact JSON dump or the raw bytes.

#ifndef LOWBIT_ARTIFACT_HPP_
#define LOWBIT_ARTIFACT_HPP_

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "lowbit/model.hpp"
#include "lowbit/packing.hpp"
#include "lowbit/tuner.hpp"

namespace lowbit {

inline constexpr std::uint32_t kArtifactVersion = 1;

std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes);
std::uint64_t fnv1a64(const std::string& text);
std::uint64_t json_digest(const nlohmann::json& j);

// Codes and scales for one layer; full-precision layers use the raw codec.
CodeStream encode_layer(const Tensor& w, const TunedLayer& layer);
Tensor decode_stream(const CodeStream& stream);

struct ArtifactLayer {
  std::string name;
  QuantScheme scheme;
  PackedWeights weights;
  Tensor v;
  Tensor alpha;
  Tensor beta;
  Tensor init_scale;

  friend bool operator==(const ArtifactLayer&, const ArtifactLayer&) = default;
};

struct QuantizedArtifact {
  nlohmann::json config;  // must hold "model" with a ModelSpec
  nlohmann::json assignment;
  std::uint64_t config_digest = 0;
  std::uint64_t assignment_digest = 0;
  std::vector<ArtifactLayer> layers;  // every weight layer, in model order
  nlohmann::json trailer;

  std::vector<std::uint8_t> to_bytes() const;
  static QuantizedArtifact from_bytes(std::span<const std::uint8_t> bytes);
  // Writes through a temporary file and a rename.
  void write(const std::string& path) const;
  static QuantizedArtifact read(const std::string& path);

  // Rebuilds the model from the config and installs the decoded weights.
  Model dequantized_model() const;
};

QuantizedArtifact build_artifact(const Model& model, const QuantizedModel& quantized,
                                 const nlohmann::json& config, const nlohmann::json& assignment);

struct VerifyCheck {
  std::string name;
  bool ok = false;
  std::string detail;
};

// Digests, per-layer pack/unpack integrity, re-encoding from the rebuilt
// full-precision weights and the stored parameters, and the bit budget.
std::vector<VerifyCheck> verify_artifact(const QuantizedArtifact& artifact);

}  // namespace lowbit

#endif  // LOWBIT_ARTIFACT_HPP_
