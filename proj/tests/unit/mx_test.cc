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

#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "lowbit/errors.hpp"
#include "lowbit/ops.hpp"
#include "lowbit/rng.hpp"
#include "support/oracles.hpp"

namespace lowbit {
namespace {

// Positive E4M3 magnitudes by code, built from the bit layout (NaN excluded).
std::vector<double> e4m3_table() {
  std::vector<double> t;
  for (unsigned code = 0; code < 0x7f; ++code) {
    const unsigned exp = code >> 3, man = code & 7u;
    t.push_back(exp == 0 ? man / 8.0 * std::ldexp(1.0, -6)
                         : (1.0 + man / 8.0) * std::ldexp(1.0, static_cast<int>(exp) - 7));
  }
  return t;
}

double nearest_in_table(double y, const std::vector<double>& table) {
  const double a = std::fabs(y);
  std::size_t best = 0;
  for (std::size_t c = 1; c < table.size(); ++c) {
    const double dc = std::fabs(a - table[c]), db = std::fabs(a - table[best]);
    if (dc < db || (dc == db && c % 2 == 0)) best = c;
  }
  return std::copysign(table[best], y);
}

TEST(MxFormatTest, ElementParameters) {
  EXPECT_EQ(element_format(MxElement::kE2M1).max_value, 6.0);
  EXPECT_EQ(element_format(MxElement::kE2M1).code_bits(), 4);
  EXPECT_EQ(element_format(MxElement::kE4M3).max_value, 448.0);
  EXPECT_EQ(element_format(MxElement::kE4M3).code_bits(), 8);
}

TEST(MxFormatTest, SharedExponent) {
  EXPECT_EQ(shared_exponent(6.0, MxElement::kE2M1), 0);
  EXPECT_EQ(shared_exponent(4.0, MxElement::kE2M1), 0);
  EXPECT_EQ(shared_exponent(3.99, MxElement::kE2M1), -1);
  EXPECT_EQ(shared_exponent(1.0, MxElement::kE4M3), -8);
  EXPECT_EQ(shared_exponent(0.0, MxElement::kE2M1), -127);
  EXPECT_EQ(shared_exponent(1e-300, MxElement::kE2M1), -127);
  EXPECT_EQ(shared_exponent(1e300, MxElement::kE2M1), 127);
  EXPECT_THROW(shared_exponent(INFINITY, MxElement::kE2M1), NumericError);
}

TEST(MxFormatTest, E2M1RoundingMatchesCodebookSearch) {
  const auto& table = oracle::e2m1_values();
  for (int i = -700; i <= 700; ++i) {
    const double y = i / 100.0;
    EXPECT_EQ(round_to_element(y, MxElement::kE2M1), nearest_in_table(y, table)) << y;
  }
  // Half-way points go to the even mantissa.
  EXPECT_EQ(round_to_element(2.5, MxElement::kE2M1), 2.0);
  EXPECT_EQ(round_to_element(3.5, MxElement::kE2M1), 4.0);
  EXPECT_EQ(round_to_element(0.25, MxElement::kE2M1), 0.0);
  EXPECT_EQ(round_to_element(5.0, MxElement::kE2M1), 4.0);
}

TEST(MxFormatTest, E4M3RoundingMatchesCodebookSearch) {
  const std::vector<double> table = e4m3_table();
  Rng rng(11);
  for (int i = 0; i < 5000; ++i) {
    const double y = std::ldexp(rng.uniform(-1.0, 1.0), static_cast<int>(rng.below(20)) - 10);
    EXPECT_EQ(round_to_element(y, MxElement::kE4M3), nearest_in_table(y, table)) << y;
  }
  for (double t : table) EXPECT_EQ(round_to_element(t, MxElement::kE4M3), t);
}

TEST(MxFormatTest, EncodeDecodeRoundTrip) {
  for (MxElement el : {MxElement::kE2M1, MxElement::kE4M3}) {
    const int bits = element_format(el).code_bits();
    for (unsigned code = 0; code < (1u << bits); ++code) {
      const double v = decode_element(static_cast<std::uint8_t>(code), el);
      if (std::isnan(v)) continue;
      if (v == 0.0 && std::signbit(v)) continue;
      EXPECT_EQ(encode_element(v, el), code) << "code " << code;
    }
  }
  EXPECT_TRUE(std::isnan(decode_element(0x7f, MxElement::kE4M3)));
  EXPECT_THROW(decode_element(0x10, MxElement::kE2M1), FormatError);
  EXPECT_THROW(encode_element(0.7, MxElement::kE2M1), ContractError);
}

TEST(MxQdqTest, Mxfp4MatchesBlockOracle) {
  Rng rng(12);
  const MxBlockFormat fmt{MxElement::kE2M1, 32};
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> block(32);
    for (double& x : block) x = rng.uniform(-8.0, 8.0);
    const Tensor t({1, 32}, block);
    const Tensor q = mx_qdq(t, fmt);
    const std::vector<double> ref = oracle::mxfp4_block(block);
    for (std::size_t i = 0; i < 32; ++i) EXPECT_EQ(q[i], ref[i]) << trial << ":" << i;
  }
}

TEST(MxQdqTest, Mxfp8MatchesTableSearch) {
  Rng rng(13);
  const MxBlockFormat fmt{MxElement::kE4M3, 32};
  const std::vector<double> table = e4m3_table();
  for (int trial = 0; trial < 50; ++trial) {
    Tensor t({2, 32});
    for (double& x : t.values()) x = rng.normal() * 3.0;
    const Tensor q = mx_qdq(t, fmt);
    for (std::size_t r = 0; r < 2; ++r) {
      double amax = 0.0;
      for (std::size_t c = 0; c < 32; ++c) amax = std::max(amax, std::fabs(t.at(r, c)));
      int e = 0;
      while (amax / std::ldexp(1.0, e) >= 512.0) ++e;
      while (amax / std::ldexp(1.0, e) < 256.0) --e;
      for (std::size_t c = 0; c < 32; ++c) {
        const double ref = std::ldexp(nearest_in_table(std::ldexp(t.at(r, c), -e), table), e);
        EXPECT_EQ(q.at(r, c), ref);
      }
    }
  }
}

TEST(MxQdqTest, ZeroBlockStaysZero) {
  const Tensor z({2, 32});
  const MxCodes c = mx_quantize(z, {MxElement::kE2M1, 32});
  EXPECT_EQ(c.exponents, (std::vector<int>{-127, -127}));
  EXPECT_EQ(mx_qdq(z, {MxElement::kE2M1, 32}), z);
}

TEST(MxQdqTest, RepresentableBlocksAreFixedPoints) {
  std::vector<double> v;
  for (double x : oracle::e2m1_values()) {
    v.push_back(x * 0.5);
    v.push_back(-x * 0.5);
  }
  const Tensor t({1, v.size()}, v);
  EXPECT_EQ(mx_qdq(t, {MxElement::kE2M1, 16}), t);
  Rng rng(14);
  Tensor w({4, 40});
  for (double& x : w.values()) x = rng.normal();
  for (MxElement el : {MxElement::kE2M1, MxElement::kE4M3}) {
    const Tensor once = mx_qdq(w, {el, 32});
    EXPECT_EQ(mx_qdq(once, {el, 32}), once);
  }
}

TEST(MxQdqTest, PartialBlockIsIndependent) {
  Rng rng(15);
  Tensor w({1, 40});
  for (double& x : w.values()) x = rng.normal();
  w[35] = 100.0;  // only affects the trailing block
  const Tensor q = mx_qdq(w, {MxElement::kE2M1, 32});
  const Tensor head = mx_qdq(Tensor({1, 32}, std::vector<double>(w.vec().begin(), w.vec().begin() + 32)),
                             {MxElement::kE2M1, 32});
  for (std::size_t i = 0; i < 32; ++i) EXPECT_EQ(q[i], head[i]);
  EXPECT_EQ(q[35], 96.0);
}

TEST(MxQdqTest, DequantizeChecksCounts) {
  MxCodes c = mx_quantize(Tensor({1, 32}), {MxElement::kE2M1, 32});
  c.exponents.push_back(0);
  EXPECT_THROW(mx_dequantize(c, {1, 32}, {MxElement::kE2M1, 32}), DimensionError);
}

TEST(MxTunableTest, ZeroOffsetEqualsPlainQdq) {
  Rng rng(16);
  Tensor w({3, 48});
  for (double& x : w.values()) x = rng.normal();
  for (MxElement el : {MxElement::kE2M1, MxElement::kE4M3}) {
    Tape tape;
    const Var v = tape.parameter(Tensor(w.shape()));
    EXPECT_EQ(mx_qdq_tunable(w, v, {el, 32}).value(), mx_qdq(w, {el, 32}));
  }
}

TEST(MxTunableTest, OffsetAgreesWithQuantizeAndPassesSpacingGradient) {
  Rng rng(17);
  Tensor w({2, 32});
  for (double& x : w.values()) x = rng.normal();
  Tensor off(w.shape());
  for (double& x : off.values()) x = rng.uniform(-0.5, 0.5);
  const MxBlockFormat fmt{MxElement::kE2M1, 32};
  Tape tape;
  const Var v = tape.parameter(off);
  const Var q = mx_qdq_tunable(w, v, fmt);
  const MxCodes codes = mx_quantize_with_offset(w, off, fmt);
  EXPECT_EQ(q.value(), mx_dequantize(codes, w.shape(), fmt));
  const Tensor g = tape.backward(sum(q)).of(v);
  for (std::size_t r = 0; r < 2; ++r) {
    const int e = codes.exponents[r];
    for (std::size_t c = 0; c < 32; ++c) {
      const std::size_t i = r * 32 + c;
      const double y = std::ldexp(w[i], -e);
      const double ulp = element_ulp(y, fmt.element);
      const double expect = std::fabs(y + off[i] * ulp) < 6.0 ? std::ldexp(ulp, e) : 0.0;
      EXPECT_EQ(g[i], expect) << i;
    }
  }
}

TEST(MxSteTest, BackwardIsIdentity) {
  Tape tape;
  const Var x = tape.parameter(Tensor({1, 4}, {0.3, -1.7, 2.2, 0.0}));
  const Tensor g = tape.backward(sum(mx_qdq_ste(x, {MxElement::kE2M1, 32}))).of(x);
  EXPECT_EQ(g, Tensor::full({1, 4}, 1.0));
}

}  // namespace
}  // namespace lowbit
