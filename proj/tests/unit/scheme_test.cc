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

#include <gtest/gtest.h>

#include "lowbit/errors.hpp"
#include "lowbit/rng.hpp"

namespace lowbit {
namespace {

TEST(SchemeTest, FamilyNames) {
  EXPECT_EQ(parse_family("int-sym"), SchemeFamily::kIntSym);
  EXPECT_EQ(parse_family("mxfp"), SchemeFamily::kMxFp);
  EXPECT_EQ(family_name(SchemeFamily::kMxFp), "mxfp");
  EXPECT_THROW(parse_family("nf4"), ContractError);
}

TEST(SchemeTest, LabelsAndCodecs) {
  EXPECT_EQ((QuantScheme{SchemeFamily::kIntSym, 2, 16}).label(), "w2g16");
  EXPECT_EQ((QuantScheme{SchemeFamily::kMxFp, 8, 32}).label(), "mxfp8");
  EXPECT_EQ((QuantScheme{SchemeFamily::kMxFp, 16, 32}).label(), "fp");
  EXPECT_EQ((QuantScheme{SchemeFamily::kMxFp, 4, 32}).codec(), CodecId::kMxFp4);
  EXPECT_EQ((QuantScheme{SchemeFamily::kIntSym, 16, 32}).codec(), CodecId::kRaw);
  EXPECT_EQ((QuantScheme{SchemeFamily::kMxFp, 8, 32}).mx_format().element, MxElement::kE4M3);
}

TEST(SchemeTest, ValidBitWidths) {
  for (int b : {2, 3, 4, 5, 6, 7, 8, 16}) {
    EXPECT_NO_THROW((QuantScheme{SchemeFamily::kIntSym, b, 32}).validate()) << b;
  }
  for (int b : {1, 9, 12, 17}) {
    EXPECT_THROW((QuantScheme{SchemeFamily::kIntSym, b, 32}).validate(), ContractError) << b;
  }
  for (int b : {4, 8, 16}) EXPECT_NO_THROW((QuantScheme{SchemeFamily::kMxFp, b, 32}).validate());
  EXPECT_THROW((QuantScheme{SchemeFamily::kMxFp, 6, 32}).validate(), ContractError);
  EXPECT_THROW((QuantScheme{SchemeFamily::kIntSym, 4, 0}).validate(), ContractError);
}

TEST(SchemeTest, RtnDispatch) {
  Rng rng(31);
  Tensor w({4, 64});
  for (double& x : w.values()) x = rng.normal();
  EXPECT_EQ(rtn_qdq(w, {SchemeFamily::kIntSym, 16, 32}), w);
  EXPECT_EQ(rtn_qdq(w, {SchemeFamily::kIntSym, 3, 16}),
            uniform_qdq(w, UniformQuantParams::rtn(3, 16)));
  EXPECT_EQ(rtn_qdq(w, {SchemeFamily::kMxFp, 4, 32}), mx_qdq(w, {MxElement::kE2M1, 32}));
}

TEST(SchemeTest, OnlyMxQuantizesActivations) {
  Rng rng(32);
  Tensor a({2, 32});
  for (double& x : a.values()) x = rng.normal();
  EXPECT_EQ(activation_qdq(a, {SchemeFamily::kIntSym, 4, 32}), a);
  EXPECT_EQ(activation_qdq(a, {SchemeFamily::kMxFp, 16, 32}), a);
  EXPECT_EQ(activation_qdq(a, {SchemeFamily::kMxFp, 8, 32}), mx_qdq(a, {MxElement::kE4M3, 32}));
}

}  // namespace
}  // namespace lowbit
