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

// Differentiable primitives. Binary elementwise ops require equal shapes;
// the only broadcast is the explicit per-row vector in add_row.

#ifndef LOWBIT_OPS_HPP_
#define LOWBIT_OPS_HPP_

#include <cstddef>
#include <span>
#include <vector>

#include "lowbit/autograd.hpp"

namespace lowbit {

Var matmul(const Var& a, const Var& b);
// x[m x in] * w[out x in]^T -> [m x out]; weights are stored output-major.
Var linear(const Var& x, const Var& w);

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var div(const Var& a, const Var& b);
Var add_row(const Var& a, const Var& row);
Var scale(const Var& a, double factor);
Var add_scalar(const Var& a, double offset);

Var relu(const Var& a);
// tanh approximation.
Var gelu(const Var& a);
Var abs(const Var& a);
Var square(const Var& a);
Var clip(const Var& a, double lo, double hi);
// Rounds half to even; backward is the identity (straight-through).
Var round_ste(const Var& a);

Var sum(const Var& a);
Var mean(const Var& a);
// Full reductions; the gradient goes to the first extremal element.
Var max_all(const Var& a);
Var min_all(const Var& a);

// Row-wise over the last axis.
Var softmax(const Var& a);
// Row i of a square matrix only sees columns j <= i.
Var causal_softmax(const Var& a);
Var rms_norm(const Var& a, double eps = 1e-6);
Var layer_norm(const Var& a, double eps = 1e-5);

Var reshape(const Var& a, Shape shape);
Var transpose(const Var& a);
Var slice_rows(const Var& a, std::size_t begin, std::size_t count);
Var slice_cols(const Var& a, std::size_t begin, std::size_t count);
Var concat_rows(const std::vector<Var>& parts);
Var concat_cols(const std::vector<Var>& parts);

// Gathers rows of table[vocab x dim].
Var embedding(const Var& table, std::span<const int> ids);
// Mean over rows of -log softmax(logits)[target].
Var cross_entropy(const Var& logits, std::span<const int> targets);

}  // namespace lowbit

#endif  // LOWBIT_OPS_HPP_
