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

#include "lowbit/mx.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <utility>

#include "lowbit/errors.hpp"

namespace lowbit {
namespace {

constexpr ElementFormat kE2M1{2, 1, 1, 0, 2, 6.0};
constexpr ElementFormat kE4M3{4, 3, 7, -6, 8, 448.0};

int floor_log2(double a) {
  int k = 0;
  std::frexp(a, &k);
  return k - 1;
}

struct BlockLayout {
  std::size_t rows, cols, block, blocks_per_row;

  BlockLayout(const Shape& shape, std::size_t block_size) {
    if (block_size == 0) throw ContractError("MX block size must be positive");
    cols = shape.empty() ? 1 : shape.back();
    rows = cols ? shape_numel(shape) / cols : 0;
    block = block_size;
    blocks_per_row = (cols + block - 1) / block;
  }
  std::size_t num_blocks() const { return rows * blocks_per_row; }
  std::size_t begin(std::size_t b) const {
    return (b / blocks_per_row) * cols + (b % blocks_per_row) * block;
  }
  std::size_t length(std::size_t b) const {
    return std::min(block, cols - (b % blocks_per_row) * block);
  }
};

double block_amax(const Tensor& x, std::size_t begin, std::size_t len) {
  double amax = 0.0;
  for (std::size_t i = begin; i < begin + len; ++i) amax = std::max(amax, std::fabs(x[i]));
  return amax;
}

}  // namespace

const ElementFormat& element_format(MxElement element) {
  return element == MxElement::kE2M1 ? kE2M1 : kE4M3;
}

int shared_exponent(double amax, MxElement element) {
  if (!(amax > 0.0)) return -kE8M0Bias;
  if (!std::isfinite(amax)) throw NumericError("non-finite block maximum");
  const int e = floor_log2(amax) - element_format(element).emax;
  return std::clamp(e, -kE8M0Bias, kE8M0Bias);
}

double element_ulp(double y, MxElement element) {
  const ElementFormat& f = element_format(element);
  const double a = std::fabs(y);
  int e = a > 0.0 ? floor_log2(a) : f.emin;
  e = std::clamp(e, f.emin, f.emax);
  return std::ldexp(1.0, e - f.man_bits);
}

double round_to_element(double y, MxElement element) {
  const ElementFormat& f = element_format(element);
  const double a = std::fabs(y);
  double r;
  if (a >= f.max_value) {
    r = f.max_value;
  } else if (a == 0.0) {
    r = 0.0;
  } else {
    const double q = element_ulp(a, element);
    r = std::min(std::nearbyint(a / q) * q, f.max_value);
  }
  return std::signbit(y) ? -r : r;
}

std::uint8_t encode_element(double representable, MxElement element) {
  const ElementFormat& f = element_format(element);
  const unsigned sign = std::signbit(representable) ? 1u : 0u;
  const double a = std::fabs(representable);
  if (a > f.max_value || round_to_element(a, element) != a) {
    throw ContractError("value is not representable in the element format");
  }
  unsigned exp_field = 0, man = 0;
  if (a != 0.0) {
    const double min_normal = std::ldexp(1.0, f.emin);
    if (a < min_normal) {
      man = static_cast<unsigned>(a / std::ldexp(1.0, f.emin - f.man_bits));
    } else {
      const int e = floor_log2(a);
      man = static_cast<unsigned>((std::ldexp(a, -e) - 1.0) * (1u << f.man_bits));
      exp_field = static_cast<unsigned>(e + f.bias);
    }
  }
  return static_cast<std::uint8_t>((sign << (f.exp_bits + f.man_bits)) |
                                   (exp_field << f.man_bits) | man);
}

double decode_element(std::uint8_t code, MxElement element) {
  const ElementFormat& f = element_format(element);
  const unsigned man_mask = (1u << f.man_bits) - 1u;
  const unsigned exp_mask = (1u << f.exp_bits) - 1u;
  const unsigned man = code & man_mask;
  const unsigned exp_field = (code >> f.man_bits) & exp_mask;
  const bool negative = (code >> (f.exp_bits + f.man_bits)) & 1u;
  if (code >> (f.exp_bits + f.man_bits + 1)) {
    throw FormatError("element code " + std::to_string(code) + " wider than the format");
  }
  if (element == MxElement::kE4M3 && exp_field == exp_mask && man == man_mask) {
    return std::numeric_limits<double>::quiet_NaN();
  }
  double a;
  if (exp_field == 0) {
    a = std::ldexp(static_cast<double>(man), f.emin - f.man_bits);
  } else {
    a = std::ldexp(1.0 + static_cast<double>(man) / (1u << f.man_bits),
                   static_cast<int>(exp_field) - f.bias);
  }
  return negative ? -a : a;
}

MxCodes mx_quantize_with_offset(const Tensor& w, const Tensor& v, const MxBlockFormat& format) {
  if (!v.empty() && v.shape() != w.shape()) throw DimensionError("v must match the weight");
  const BlockLayout layout(w.shape(), format.block_size);
  MxCodes out{std::vector<std::uint8_t>(w.size()), std::vector<int>(layout.num_blocks())};
  for (std::size_t b = 0; b < layout.num_blocks(); ++b) {
    const std::size_t begin = layout.begin(b), len = layout.length(b);
    const int e = shared_exponent(block_amax(w, begin, len), format.element);
    out.exponents[b] = e;
    for (std::size_t i = begin; i < begin + len; ++i) {
      double y = std::ldexp(w[i], -e);
      if (!v.empty()) y += v[i] * element_ulp(y, format.element);
      out.codes[i] = encode_element(round_to_element(y, format.element), format.element);
    }
  }
  return out;
}

MxCodes mx_quantize(const Tensor& x, const MxBlockFormat& format) {
  return mx_quantize_with_offset(x, Tensor(), format);
}

Tensor mx_dequantize(const MxCodes& codes, const Shape& shape, const MxBlockFormat& format) {
  const BlockLayout layout(shape, format.block_size);
  if (codes.codes.size() != shape_numel(shape) || codes.exponents.size() != layout.num_blocks()) {
    throw DimensionError("MX code/scale counts do not match shape " + shape_string(shape));
  }
  Tensor out(shape);
  for (std::size_t b = 0; b < layout.num_blocks(); ++b) {
    const std::size_t begin = layout.begin(b), len = layout.length(b);
    for (std::size_t i = begin; i < begin + len; ++i) {
      out[i] = std::ldexp(decode_element(codes.codes[i], format.element), codes.exponents[b]);
    }
  }
  return out;
}

Tensor mx_qdq(const Tensor& x, const MxBlockFormat& format) {
  return mx_dequantize(mx_quantize(x, format), x.shape(), format);
}

Var mx_qdq_ste(const Var& x, const MxBlockFormat& format) {
  return x.tape().record(mx_qdq(x.value(), format), {x}, [](const BackwardContext& ctx) {
    const Tensor& g = ctx.grad_out();
    Tensor& gx = *ctx.input_grad(0);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
  });
}

Var mx_qdq_tunable(const Tensor& w, const Var& v, const MxBlockFormat& format) {
  if (v.shape() != w.shape()) throw DimensionError("v must match the weight shape");
  const ElementFormat& f = element_format(format.element);
  const BlockLayout layout(w.shape(), format.block_size);
  Tensor out(w.shape());
  std::vector<double> slope(w.size(), 0.0);
  for (std::size_t b = 0; b < layout.num_blocks(); ++b) {
    const std::size_t begin = layout.begin(b), len = layout.length(b);
    const int e = shared_exponent(block_amax(w, begin, len), format.element);
    for (std::size_t i = begin; i < begin + len; ++i) {
      const double y = std::ldexp(w[i], -e);
      const double ulp = element_ulp(y, format.element);
      const double shifted = y + v.value()[i] * ulp;
      out[i] = std::ldexp(round_to_element(shifted, format.element), e);
      if (std::fabs(shifted) < f.max_value) slope[i] = std::ldexp(ulp, e);
    }
  }
  return v.tape().record(std::move(out), {v},
                         [slope = std::move(slope)](const BackwardContext& ctx) {
                           const Tensor& g = ctx.grad_out();
                           Tensor& gv = *ctx.input_grad(0);
                           for (std::size_t i = 0; i < g.size(); ++i) gv[i] += g[i] * slope[i];
                         });
}

}  // namespace lowbit
