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

#ifndef LOWBIT_SCHEME_HPP_
#define LOWBIT_SCHEME_HPP_

#include <cstddef>
#include <string>

#include "lowbit/mx.hpp"
#include "lowbit/packing.hpp"
#include "lowbit/quant.hpp"
#include "lowbit/tensor.hpp"

namespace lowbit {

enum class SchemeFamily {
  kIntSym,  // weight-only symmetric integer (WxA16)
  kMxFp,    // MXFP4 / MXFP8 weights and activations
};

SchemeFamily parse_family(const std::string& name);
std::string family_name(SchemeFamily family);

inline constexpr int kFullPrecisionBits = 16;

// One layer's quantization configuration. bits == 16 leaves the layer in
// full precision for either family.
struct QuantScheme {
  SchemeFamily family = SchemeFamily::kIntSym;
  int bits = 4;
  std::size_t group_size = 32;  // integer group size; MX block size

  bool is_identity() const { return bits >= kFullPrecisionBits; }
  bool quantizes_activations() const { return family == SchemeFamily::kMxFp && !is_identity(); }
  MxBlockFormat mx_format() const;
  CodecId codec() const;
  std::string label() const;
  void validate() const;

  friend bool operator==(const QuantScheme&, const QuantScheme&) = default;
};

// Untuned qdq: RTN scale for integers, shared-exponent rule for MX.
Tensor rtn_qdq(const Tensor& w, const QuantScheme& scheme);
// Activation qdq for schemes that quantize activations; identity otherwise.
Tensor activation_qdq(const Tensor& a, const QuantScheme& scheme);

}  // namespace lowbit

#endif  // LOWBIT_SCHEME_HPP_
