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

// Microscaling (MX) block floating point: blocks of `block_size` elements
// along the last axis share one E8M0 power-of-two scale
//
//   X = 2^(floor(log2(amax)) - emax_elem)
//
// and each element is rounded half-to-even onto the element format
// (E2M1 for MXFP4, E4M3 for MXFP8), saturating at the largest magnitude.
// A trailing partial block is treated as zero-padded.

#ifndef LOWBIT_MX_HPP_
#define LOWBIT_MX_HPP_

#include <cstddef>
#include <cstdint>
#include <vector>

#include "lowbit/autograd.hpp"
#include "lowbit/tensor.hpp"

namespace lowbit {

enum class MxElement : std::uint8_t { kE2M1, kE4M3 };

struct ElementFormat {
  int exp_bits;
  int man_bits;
  int bias;
  int emin;  // exponent of the smallest normal
  int emax;  // exponent of the largest normal
  double max_value;
  int code_bits() const { return 1 + exp_bits + man_bits; }
};

const ElementFormat& element_format(MxElement element);

struct MxBlockFormat {
  MxElement element = MxElement::kE2M1;
  std::size_t block_size = 32;
};

inline constexpr int kE8M0Bias = 127;

// Shared exponent for a block with the given absolute maximum; clamped to the
// E8M0 range [-127, 127]. amax == 0 yields -127.
int shared_exponent(double amax, MxElement element);

// Nearest representable element value (ties to even mantissa), saturating.
double round_to_element(double y, MxElement element);
// Spacing of the element grid at |y| (the subnormal spacing below emin).
double element_ulp(double y, MxElement element);

std::uint8_t encode_element(double representable, MxElement element);
double decode_element(std::uint8_t code, MxElement element);

struct MxCodes {
  std::vector<std::uint8_t> codes;  // element bit patterns, row-major like the input
  std::vector<int> exponents;       // one shared exponent per block
};

MxCodes mx_quantize(const Tensor& x, const MxBlockFormat& format);
Tensor mx_dequantize(const MxCodes& codes, const Shape& shape, const MxBlockFormat& format);
Tensor mx_qdq(const Tensor& x, const MxBlockFormat& format);

// Activation qdq; backward is the identity.
Var mx_qdq_ste(const Var& x, const MxBlockFormat& format);

// Weight qdq with a learnable rounding offset v in units of the local
// element spacing: X * round(w / X + v * ulp(w / X)). v = 0 reproduces
// mx_qdq exactly. Saturated elements pass no gradient.
Var mx_qdq_tunable(const Tensor& w, const Var& v, const MxBlockFormat& format);
MxCodes mx_quantize_with_offset(const Tensor& w, const Tensor& v, const MxBlockFormat& format);

}  // namespace lowbit

#endif  // LOWBIT_MX_HPP_
