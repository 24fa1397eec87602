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

#include "lowbit/ops.hpp"

#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "lowbit/errors.hpp"
#include "lowbit/rng.hpp"
#include "support/gradcheck.hpp"

namespace lowbit {
namespace {

using testing::check_gradients;
using testing::LossBuilder;
using testing::random_tensor;

// Contracts an op's output with fixed random weights so every output entry
// matters to the scalar being differentiated.
Var contract(const Var& y, std::uint64_t seed) {
  Rng rng(seed);
  return sum(mul(y, y.tape().constant(random_tensor(rng, y.shape()))));
}

void expect_fd(const LossBuilder& build, const std::vector<Tensor>& inputs) {
  const auto r = check_gradients(build, inputs);
  EXPECT_TRUE(r.ok) << r.first_failure;
  EXPECT_GT(r.checked, 0u);
}

TEST(MatmulTest, Identity) {
  Tape t;
  const Var y = matmul(t.constant(Tensor::matrix({{1, 0}, {0, 1}})),
                       t.constant(Tensor::matrix({{3, 4}, {5, 6}})));
  EXPECT_EQ(y.value(), Tensor::matrix({{3, 4}, {5, 6}}));
}

TEST(MatmulTest, RowTimesColumn) {
  Tape t;
  const Var y = matmul(t.constant(Tensor::matrix({{1, 2}})), t.constant(Tensor::matrix({{3}, {4}})));
  EXPECT_EQ(y.value(), Tensor::matrix({{11}}));
}

TEST(MatmulTest, MatchesTripleLoop) {
  Rng rng(1);
  const Tensor a = random_tensor(rng, {4, 4}), b = random_tensor(rng, {4, 4});
  Tape t;
  const Tensor y = matmul(t.constant(a), t.constant(b)).value();
  for (std::size_t i = 0; i < 4; ++i) {
    for (std::size_t j = 0; j < 4; ++j) {
      double ref = 0.0;
      for (std::size_t k = 0; k < 4; ++k) ref += a.at(i, k) * b.at(k, j);
      EXPECT_NEAR(y.at(i, j), ref, 1e-12 * std::max(1.0, std::fabs(ref)));
    }
  }
}

TEST(MatmulTest, InnerMismatchThrows) {
  Tape t;
  EXPECT_THROW(matmul(t.constant(Tensor({2, 3})), t.constant(Tensor({2, 3}))), DimensionError);
  EXPECT_THROW(linear(t.constant(Tensor({2, 3})), t.constant(Tensor({3, 2}))), DimensionError);
}

TEST(CrossEntropyTest, UniformLogits) {
  Tape t;
  const std::vector<int> tgt = {2};
  EXPECT_NEAR(cross_entropy(t.constant(Tensor::full({1, 4}, 0.7)), tgt).value().item(),
              1.386294361, 1e-9);
}

TEST(CrossEntropyTest, TwoClassClosedForm) {
  Tape t;
  const std::vector<int> tgt = {0};
  const double margin = 2.5;
  const double got = cross_entropy(t.constant(Tensor::matrix({{margin, 0.0}})), tgt).value().item();
  EXPECT_NEAR(got, std::log1p(std::exp(-margin)), 1e-12);
}

TEST(CrossEntropyTest, MatchesDirectFormula) {
  Rng rng(4);
  const Tensor logits = random_tensor(rng, {3, 5}, 2.0);
  const std::vector<int> tgt = {4, 0, 2};
  double ref = 0.0;
  for (std::size_t r = 0; r < 3; ++r) {
    double z = 0.0;
    for (std::size_t c = 0; c < 5; ++c) z += std::exp(logits.at(r, c));
    ref += -std::log(std::exp(logits.at(r, static_cast<std::size_t>(tgt[r]))) / z);
  }
  ref /= 3.0;
  Tape t;
  EXPECT_NEAR(cross_entropy(t.constant(logits), tgt).value().item(), ref, 1e-10);
}

TEST(CrossEntropyTest, OutOfRangeTargetThrows) {
  Tape t;
  const std::vector<int> bad = {5};
  const std::vector<int> negative = {-1};
  EXPECT_THROW(cross_entropy(t.constant(Tensor({1, 5})), bad), IndexError);
  EXPECT_THROW(cross_entropy(t.constant(Tensor({1, 5})), negative), IndexError);
}

TEST(EmbeddingTest, LooksUpRowsAndChecksIds) {
  Tape t;
  const Tensor table = Tensor::matrix({{1, 2}, {3, 4}, {5, 6}});
  const std::vector<int> ids = {2, 0, 2};
  EXPECT_EQ(embedding(t.constant(table), ids).value(), Tensor::matrix({{5, 6}, {1, 2}, {5, 6}}));
  const std::vector<int> bad = {3};
  EXPECT_THROW(embedding(t.constant(table), bad), IndexError);
}

TEST(ClipTest, RejectsInvertedRange) {
  Tape t;
  EXPECT_THROW(clip(t.constant(Tensor::scalar(0)), 1.0, -1.0), ContractError);
}

TEST(RoundSteTest, RoundsHalfToEvenAndPassesGradient) {
  Tape t;
  const Var x = t.parameter(Tensor({4}, {0.5, 1.5, 2.5, -0.5}));
  const Var y = round_ste(x);
  EXPECT_EQ(y.value().vec(), (std::vector<double>{0, 2, 2, -0}));
  EXPECT_EQ(t.backward(sum(y)).of(x).vec(), std::vector<double>(4, 1.0));
}

TEST(SoftmaxTest, CausalRowsIgnoreTheFuture) {
  Tape t;
  const Tensor y = causal_softmax(t.constant(Tensor::matrix({{1, 9}, {0, 0}}))).value();
  EXPECT_DOUBLE_EQ(y.at(0, 0), 1.0);
  EXPECT_DOUBLE_EQ(y.at(0, 1), 0.0);
  EXPECT_DOUBLE_EQ(y.at(1, 0), 0.5);
}

TEST(ReductionTest, MaxMinRouteGradientToTheWinner) {
  Tape t;
  const Var x = t.parameter(Tensor({3}, {1, 7, -2}));
  EXPECT_EQ(t.backward(max_all(x)).of(x).vec(), (std::vector<double>{0, 1, 0}));
  Tape t2;
  const Var y = t2.parameter(Tensor({3}, {1, 7, -2}));
  EXPECT_EQ(t2.backward(min_all(y)).of(y).vec(), (std::vector<double>{0, 0, 1}));
}

// Finite-difference checks for every differentiable primitive.

TEST(OpsGradTest, Matmul) {
  Rng rng(10);
  expect_fd([](Tape&, const std::vector<Var>& p) { return contract(matmul(p[0], p[1]), 1); },
            {random_tensor(rng, {3, 5}), random_tensor(rng, {5, 4})});
}

TEST(OpsGradTest, Linear) {
  Rng rng(11);
  expect_fd([](Tape&, const std::vector<Var>& p) { return contract(linear(p[0], p[1]), 2); },
            {random_tensor(rng, {4, 6}), random_tensor(rng, {3, 6})});
}

TEST(OpsGradTest, Elementwise) {
  Rng rng(12);
  Tensor pos = random_tensor(rng, {3, 4});
  for (double& v : pos.values()) v = 0.5 + std::fabs(v);
  expect_fd(
      [](Tape&, const std::vector<Var>& p) {
        return add(add(contract(add(p[0], p[1]), 3), contract(sub(p[0], p[1]), 4)),
                   add(contract(mul(p[0], p[1]), 5), contract(div(p[0], p[2]), 6)));
      },
      {random_tensor(rng, {3, 4}), random_tensor(rng, {3, 4}), pos});
}

TEST(OpsGradTest, AddRowScaleAddScalar) {
  Rng rng(13);
  expect_fd(
      [](Tape&, const std::vector<Var>& p) {
        return contract(add_scalar(scale(add_row(p[0], p[1]), -1.7), 0.3), 7);
      },
      {random_tensor(rng, {4, 5}), random_tensor(rng, {5})});
}

TEST(OpsGradTest, Activations) {
  Rng rng(14);
  // Keep relu and abs inputs away from the kink at zero.
  Tensor x = random_tensor(rng, {5, 6});
  for (double& v : x.values()) v += (v >= 0 ? 0.1 : -0.1);
  expect_fd(
      [](Tape&, const std::vector<Var>& p) {
        return add(add(contract(relu(p[0]), 8), contract(gelu(p[0]), 9)),
                   add(contract(abs(p[0]), 10), contract(square(p[0]), 11)));
      },
      {x});
}

TEST(OpsGradTest, ClipInterior) {
  Rng rng(15);
  Tensor x = random_tensor(rng, {4, 4}, 0.3);
  for (double& v : x.values()) v = std::clamp(v, -0.9, 0.9);
  x[0] = 1.8;
  x[1] = -1.6;
  expect_fd([](Tape&, const std::vector<Var>& p) { return contract(clip(p[0], -1.0, 1.0), 12); },
            {x});
}

TEST(OpsGradTest, Reductions) {
  Rng rng(16);
  expect_fd(
      [](Tape&, const std::vector<Var>& p) {
        return add(add(scale(mean(p[0]), 3.0), max_all(p[0])), scale(min_all(p[0]), 2.0));
      },
      {random_tensor(rng, {3, 7})});
}

TEST(OpsGradTest, Softmaxes) {
  Rng rng(17);
  expect_fd(
      [](Tape&, const std::vector<Var>& p) {
        return add(contract(softmax(p[0]), 13), contract(causal_softmax(p[1]), 14));
      },
      {random_tensor(rng, {4, 6}), random_tensor(rng, {5, 5})});
}

TEST(OpsGradTest, Norms) {
  Rng rng(18);
  expect_fd(
      [](Tape&, const std::vector<Var>& p) {
        return add(contract(rms_norm(p[0]), 15), contract(layer_norm(p[0]), 16));
      },
      {random_tensor(rng, {4, 8})});
}

TEST(OpsGradTest, ShapeOps) {
  Rng rng(19);
  expect_fd(
      [](Tape&, const std::vector<Var>& p) {
        const Var t = transpose(p[0]);               // 6 x 4
        const Var r = reshape(t, {3, 8});
        const Var rows = concat_rows({slice_rows(r, 1, 2), slice_rows(r, 0, 1)});
        const Var cols = concat_cols({slice_cols(p[0], 2, 3), slice_cols(p[0], 0, 2)});
        return add(contract(rows, 17), contract(cols, 18));
      },
      {random_tensor(rng, {4, 6})});
}

TEST(OpsGradTest, EmbeddingAndCrossEntropy) {
  Rng rng(20);
  const std::vector<int> ids = {3, 1, 3, 0};
  const std::vector<int> tgt = {1, 4, 0, 2};
  expect_fd(
      [&](Tape&, const std::vector<Var>& p) {
        return cross_entropy(linear(embedding(p[0], ids), p[1]), tgt);
      },
      {random_tensor(rng, {5, 3}), random_tensor(rng, {5, 3})});
}

TEST(OpsTest, FiniteOutputsOnFiniteInputs) {
  Rng rng(22);
  Tape t;
  const Var x = t.constant(random_tensor(rng, {6, 6}, 30.0));
  for (const Var& y : {softmax(x), causal_softmax(x), rms_norm(x), layer_norm(x), gelu(x)}) {
    EXPECT_TRUE(y.value().all_finite());
  }
  const std::vector<int> tgt = {0, 1, 2, 3, 4, 5};
  EXPECT_TRUE(cross_entropy(x, tgt).value().all_finite());
}

}  // namespace
}  // namespace lowbit
