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

#include "lowbit/calib.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <string>

#include <gtest/gtest.h>

#include "lowbit/errors.hpp"

namespace lowbit {
namespace {

std::string temp_path(const std::string& name) {
  return ::testing::TempDir() + "lowbit_calib_" + name;
}

TEST(SyntheticLanguageTest, SamplingIsDeterministicAndInRange) {
  const SyntheticLanguage lang(50, 7);
  const auto a = lang.sample(4, 20, 1), b = lang.sample(4, 20, 1), c = lang.sample(4, 20, 2);
  EXPECT_EQ(a, b);
  EXPECT_NE(a, c);
  for (const auto& seq : a) {
    ASSERT_EQ(seq.size(), 20u);
    for (int t : seq) {
      EXPECT_GE(t, 0);
      EXPECT_LT(t, 50);
    }
  }
  EXPECT_NE(SyntheticLanguage(50, 8).sample(4, 20, 1), a);
}

TEST(SyntheticLanguageTest, EntropyMatchesZipfLaw) {
  const std::size_t v = 40;
  double z = 0.0;
  for (std::size_t k = 1; k <= v; ++k) z += std::pow(double(k), -1.1);
  double h = 0.0;
  for (std::size_t k = 1; k <= v; ++k) {
    const double p = std::pow(double(k), -1.1) / z;
    h -= p * std::log(p);
  }
  EXPECT_NEAR(SyntheticLanguage(v, 3).conditional_entropy(), h, 1e-12);
}

TEST(SyntheticLanguageTest, TransitionsConcentrateOnFewSuccessors) {
  const SyntheticLanguage lang(16, 5);
  std::map<std::pair<int, int>, int> pairs;
  std::map<int, int> firsts;
  for (const auto& seq : lang.sample(400, 32, 9)) {
    for (std::size_t i = 1; i < seq.size(); ++i) ++pairs[{seq[i - 1], seq[i]}];
  }
  // The top successor of each token carries close to 1 / H_16(1.1) of the mass.
  std::map<int, int> total, top;
  for (const auto& [k, n] : pairs) {
    total[k.first] += n;
    top[k.first] = std::max(top[k.first], n);
  }
  double z = 0.0;
  for (int k = 1; k <= 16; ++k) z += std::pow(double(k), -1.1);
  for (const auto& [tok, n] : total) {
    if (n < 300) continue;
    EXPECT_NEAR(double(top[tok]) / n, 1.0 / z, 0.08) << "token " << tok;
  }
}

TEST(CalibrationTest, SyntheticBatches) {
  const CalibSet set = load_calibration("synthetic", 64, 1, 8, 12, 16, 5);
  ASSERT_EQ(set.batches.size(), 2u);
  EXPECT_EQ(set.batches[0].n_seq, 8u);
  EXPECT_EQ(set.batches[1].tokens.size(), 8u * 12);
  EXPECT_EQ(set.source, "synthetic:1:5");
  EXPECT_EQ(set.n_samples, 16u);
  const CalibSet again = load_calibration("synthetic", 64, 1, 8, 12, 16, 5);
  EXPECT_EQ(again.batches[1].tokens, set.batches[1].tokens);
  const CalibSet odd = synthetic_calibration(64, 1, 8, 12, 19, 5);
  ASSERT_EQ(odd.batches.size(), 3u);
  EXPECT_EQ(odd.batches[2].n_seq, 3u);
}

TEST(CalibrationTest, BatchTargetsAreShiftedInputs) {
  const TokenBatch b = synthetic_calibration(64, 1, 2, 5, 2, 5).batches[0];
  const auto in = b.inputs(), tg = b.targets();
  ASSERT_EQ(in.size(), 8u);
  for (std::size_t s = 0; s < 2; ++s) {
    for (std::size_t p = 0; p < 4; ++p) {
      EXPECT_EQ(in[s * 4 + p], b.tokens[s * 5 + p]);
      EXPECT_EQ(tg[s * 4 + p], b.tokens[s * 5 + p + 1]);
    }
  }
}

TEST(CalibrationTest, SizeContracts) {
  EXPECT_THROW(synthetic_calibration(64, 1, 0, 12, 16, 5), ContractError);
  EXPECT_THROW(synthetic_calibration(64, 1, 8, 1, 16, 5), ContractError);
  EXPECT_THROW(synthetic_calibration(64, 1, 8, 12, 0, 5), ContractError);
}

TEST(CalibrationFileTest, RoundTripWithPaddingAndTruncation) {
  const std::string path = temp_path("ok.txt");
  write_calibration_file(path, {{1, 2, 3}, {4, 5, 6, 7, 8, 9}});
  const CalibSet set = load_calibration(path, 10, 0, 4, 4, 2, 0);
  ASSERT_EQ(set.batches.size(), 1u);
  EXPECT_EQ(set.batches[0].tokens, (std::vector<int>{1, 2, 3, 0, 4, 5, 6, 7}));
  EXPECT_EQ(set.source, path);
  std::remove(path.c_str());
}

TEST(CalibrationFileTest, TooFewSequences) {
  const std::string path = temp_path("short.txt");
  write_calibration_file(path, {{1, 2}, {3, 4}, {5, 6}});
  EXPECT_THROW(load_calibration(path, 10, 0, 8, 4, 16, 0), FormatError);
  std::remove(path.c_str());
}

TEST(CalibrationFileTest, BadTokensNameTheLine) {
  const std::string path = temp_path("bad.txt");
  {
    std::ofstream out(path);
    out << "1 2 3\n4 12 5\n";
  }
  try {
    load_calibration(path, 10, 0, 2, 4, 2, 0);
    FAIL() << "expected FormatError";
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find(":2:"), std::string::npos) << e.what();
  }
  {
    std::ofstream out(path);
    out << "1 x 3\n";
  }
  EXPECT_THROW(load_calibration(path, 10, 0, 1, 4, 1, 0), FormatError);
  std::remove(path.c_str());
  EXPECT_THROW(load_calibration(temp_path("missing.txt"), 10, 0, 1, 4, 1, 0), FormatError);
}

}  // namespace
}  // namespace lowbit
