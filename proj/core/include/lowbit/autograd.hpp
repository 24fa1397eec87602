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

// Reverse-mode automatic differentiation over a linear tape.
//
// Every op appends one node whose inputs already exist on the tape, so the
// node order is a topological order and backward() simply walks it in
// reverse. Node values are never mutated once recorded.

#ifndef LOWBIT_AUTOGRAD_HPP_
#define LOWBIT_AUTOGRAD_HPP_

#include <cstddef>
#include <functional>
#include <vector>

#include "lowbit/tensor.hpp"

namespace lowbit {

class Tape;

// Handle to a node on a tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape& tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const;
  bool valid() const { return tape_ != nullptr; }

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

// Context handed to a node's backward function.
class BackwardContext {
 public:
  BackwardContext(const Tape& tape, std::size_t node, const Tensor& grad_out,
                  std::vector<Tensor*> input_grads)
      : tape_(tape), node_(node), grad_out_(grad_out), input_grads_(std::move(input_grads)) {}

  const Tensor& grad_out() const { return grad_out_; }
  const Tensor& output() const;
  const Tensor& input(std::size_t k) const;
  // Accumulator for input k, or nullptr when that input needs no gradient.
  Tensor* input_grad(std::size_t k) const { return input_grads_[k]; }

 private:
  const Tape& tape_;
  std::size_t node_;
  const Tensor& grad_out_;
  std::vector<Tensor*> input_grads_;
};

using BackwardFn = std::function<void(const BackwardContext&)>;

// Gradients produced by Tape::backward. Lookups for tensors the loss does not
// reach return zeros of the right shape.
class Gradients {
 public:
  Gradients() = default;
  Gradients(const Tape* tape, std::vector<Tensor> grads)
      : tape_(tape), grads_(std::move(grads)) {}

  Tensor of(const Var& v) const;
  bool reached(const Var& v) const;

 private:
  const Tape* tape_ = nullptr;
  std::vector<Tensor> grads_;
};

class Tape {
 public:
  enum class Precision { kFloat64, kFloat32 };

  explicit Tape(Precision precision = Precision::kFloat64) : precision_(precision) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  Var parameter(Tensor value);

  // Appends a derived node. `backward` may be empty for non-differentiable
  // results; the node then never propagates gradients.
  Var record(Tensor value, std::vector<Var> inputs, BackwardFn backward);

  // Reverse sweep from a scalar loss.
  Gradients backward(const Var& loss) const;

  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  std::size_t size() const { return nodes_.size(); }
  Precision precision() const { return precision_; }

 private:
  friend class BackwardContext;

  struct Node {
    Tensor value;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    bool requires_grad = false;
  };

  void round_to_precision(Tensor& t) const;

  Precision precision_;
  std::vector<Node> nodes_;
};

// Central differences (f(x + eps e_i) - f(x - eps e_i)) / (2 eps) per element.
Tensor finite_diff_grad(const std::function<double(const Tensor&)>& f, const Tensor& x,
                        double eps);

}  // namespace lowbit

#endif  // LOWBIT_AUTOGRAD_HPP_
