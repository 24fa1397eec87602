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

#include "lowbit/scheme.hpp"

#include "lowbit/errors.hpp"

namespace lowbit {

SchemeFamily parse_family(const std::string& name) {
  if (name == "int-sym" || name == "int") return SchemeFamily::kIntSym;
  if (name == "mxfp" || name == "mx") return SchemeFamily::kMxFp;
  throw ContractError("unknown scheme family '" + name + "' (expected int-sym or mxfp)");
}

std::string family_name(SchemeFamily family) {
  return family == SchemeFamily::kIntSym ? "int-sym" : "mxfp";
}

MxBlockFormat QuantScheme::mx_format() const {
  return {bits == 8 ? MxElement::kE4M3 : MxElement::kE2M1, group_size};
}

CodecId QuantScheme::codec() const {
  if (is_identity()) return CodecId::kRaw;
  if (family == SchemeFamily::kIntSym) return CodecId::kIntSym;
  return bits == 8 ? CodecId::kMxFp8 : CodecId::kMxFp4;
}

std::string QuantScheme::label() const {
  if (is_identity()) return "fp";
  if (family == SchemeFamily::kIntSym) {
    return "w" + std::to_string(bits) + "g" + std::to_string(group_size);
  }
  return "mxfp" + std::to_string(bits);
}

void QuantScheme::validate() const {
  if (group_size == 0) throw ContractError("group size must be positive");
  if (is_identity()) {
    if (bits != kFullPrecisionBits) throw ContractError("full precision is spelled bits=16");
    return;
  }
  if (family == SchemeFamily::kIntSym) {
    if (bits < 2 || bits > 8) throw ContractError("int-sym bits must be in [2, 8] or 16");
  } else if (bits != 4 && bits != 8) {
    throw ContractError("mxfp bits must be 4, 8 or 16");
  }
}

Tensor rtn_qdq(const Tensor& w, const QuantScheme& scheme) {
  scheme.validate();
  if (scheme.is_identity()) return w;
  if (scheme.family == SchemeFamily::kIntSym) {
    return uniform_qdq(w, UniformQuantParams::rtn(scheme.bits, scheme.group_size));
  }
  return mx_qdq(w, scheme.mx_format());
}

Tensor activation_qdq(const Tensor& a, const QuantScheme& scheme) {
  if (!scheme.quantizes_activations()) return a;
  return mx_qdq(a, scheme.mx_format());
}

}  // namespace lowbit
