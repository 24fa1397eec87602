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

// Symmetric uniform integer quantize-dequantize with learnable rounding
// offsets (v) and scale multipliers (alpha, beta).
//
// A weight matrix is [out x in]. Groups are contiguous runs of `group_size`
// input channels within one output row; the last group of a row may be
// short. Per group
//
//   s      = (max(W) * alpha - min(W) * beta) / (2^bits - 1)    (min/max mode)
//   s      = init_scale * alpha                                 (searched mode)
//   qdq(W) = s * clip(round(W / s + v), n, m),  n = -2^(bits-1), m = 2^(bits-1) - 1
//
// Rounding is half-to-even. Scales never drop below kScaleFloor.

#ifndef LOWBIT_QUANT_HPP_
#define LOWBIT_QUANT_HPP_

#include <cstddef>
#include <span>
#include <vector>

#include "lowbit/autograd.hpp"
#include "lowbit/tensor.hpp"

namespace lowbit {

inline constexpr double kScaleFloor = 1e-8;

struct IntGrid {
  int lo;
  int hi;
};

IntGrid symmetric_grid(int bits);

// Min/max scale of one group; alpha = beta = 1 gives the plain RTN scale.
double uniform_scale(std::span<const double> group, int bits, double alpha = 1.0,
                     double beta = 1.0);

// Row-wise grouping of a weight along its last axis.
class GroupLayout {
 public:
  // group_size 0 means one group per row (per-channel).
  GroupLayout(const Shape& shape, std::size_t group_size);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t group_size() const { return group_size_; }
  std::size_t groups_per_row() const { return groups_per_row_; }
  std::size_t num_groups() const { return rows_ * groups_per_row_; }
  Shape group_shape() const { return {rows_, groups_per_row_}; }

  std::size_t begin(std::size_t group) const;  // flat index of the first element
  std::size_t length(std::size_t group) const;
  std::size_t col_begin(std::size_t group) const { return (group % groups_per_row_) * group_size_; }

 private:
  std::size_t rows_;
  std::size_t cols_;
  std::size_t group_size_;
  std::size_t groups_per_row_;
};

struct UniformQuantParams {
  int bits = 4;
  std::size_t group_size = 0;
  Tensor v;           // shape of W; empty means zeros
  Tensor alpha;       // one per group; empty means ones
  Tensor beta;        // one per group; empty means ones; unused in searched mode
  Tensor init_scale;  // one per group; non-empty selects searched mode

  static UniformQuantParams rtn(int bits, std::size_t group_size);
  // Throws ContractError when a field violates its documented range.
  void validate(const Shape& weight_shape) const;
};

struct IntCodes {
  std::vector<int> codes;  // row-major, same layout as W
  Tensor scales;           // [rows x groups_per_row]
};

Tensor group_scales(const Tensor& w, const UniformQuantParams& p);
IntCodes uniform_quantize(const Tensor& w, const UniformQuantParams& p);
Tensor uniform_dequantize(const IntCodes& codes, const Shape& shape, std::size_t group_size);
Tensor uniform_qdq(const Tensor& w, const UniformQuantParams& p);

// Differentiable qdq of a constant weight w.r.t. v [shape of w] and
// alpha/beta [rows x groups]. Rounding uses the straight-through estimator;
// elements whose code clips pass no gradient to v. Only bits, group_size and
// init_scale are read from `meta`.
Var uniform_qdq(const Tensor& w, const Var& v, const Var& alpha, const Var& beta,
                const UniformQuantParams& meta);

}  // namespace lowbit

#endif  // LOWBIT_QUANT_HPP_
