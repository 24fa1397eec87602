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

#include "lowbit/scale_init.hpp"

#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "lowbit/errors.hpp"
#include "lowbit/quant.hpp"
#include "lowbit/rng.hpp"
#include "support/oracles.hpp"

namespace lowbit {
namespace {

TEST(CandidateScalesTest, GridOf180Offsets) {
  EXPECT_DOUBLE_EQ(epsilon_at(0), -0.9);
  EXPECT_DOUBLE_EQ(epsilon_at(90), 0.0);
  EXPECT_DOUBLE_EQ(epsilon_at(179), 0.89);
  const std::vector<double> g = {0.5, -2.0, 1.0};
  const ScaleCandidateSet set = candidate_scales(g, 4);
  ASSERT_EQ(set.scales.size(), kEpsilonCount);
  EXPECT_DOUBLE_EQ(set.scales[90], 2.0 / 8.0);
  EXPECT_DOUBLE_EQ(set.scales[0], 2.0 / 7.1);
  for (std::size_t i = 1; i < set.scales.size(); ++i) EXPECT_LT(set.scales[i], set.scales[i - 1]);
}

TEST(CandidateScalesTest, ZeroGroupHasOneFloorCandidate) {
  const std::vector<double> z(8, 0.0);
  const ScaleCandidateSet set = candidate_scales(z, 2);
  EXPECT_EQ(set.scales, (std::vector<double>{kScaleFloor}));
  const ScaleSearchResult r = search_scale(z, {}, 2);
  EXPECT_EQ(r.scale, kScaleFloor);
  EXPECT_EQ(r.objective, 0.0);
  EXPECT_THROW(candidate_scales(std::vector<double>{}, 4), ContractError);
}

TEST(ScaleSearchTest, MatchesExhaustiveOracle) {
  Rng rng(41);
  for (int trial = 0; trial < 300; ++trial) {
    const int bits = 2 + static_cast<int>(rng.below(7));
    std::vector<double> w(1 + rng.below(40)), act(w.size());
    for (double& x : w) x = rng.normal() * std::exp(rng.uniform(-3, 3));
    for (double& a : act) a = std::exp(rng.uniform(-1, 1));
    const bool weighted = trial % 2 == 0;
    const std::vector<double> none;
    const ScaleSearchResult r = search_scale(w, weighted ? act : none, bits);
    const std::size_t want = oracle::scale_search_index(w, weighted ? act : none, bits);
    EXPECT_EQ(r.index, want) << "trial " << trial;
    EXPECT_NEAR(r.objective, oracle::scale_objective(w, weighted ? act : none, bits, r.scale),
                1e-12 * (1.0 + r.objective));
  }
}

TEST(ScaleSearchTest, TiesGoToSmallerOffset) {
  // Zero importance makes every candidate score 0.
  const std::vector<double> w = {1.0, -0.3};
  const std::vector<double> zero_act = {0.0, 0.0};
  const ScaleSearchResult t = search_scale(w, zero_act, 4);
  EXPECT_EQ(t.index, 0u);
  EXPECT_EQ(t.objective, 0.0);
  EXPECT_EQ(oracle::scale_search_index(w, zero_act, 4), 0u);
}

TEST(ScaleSearchTest, NeverWorseThanMinMaxEpsilonZero) {
  Rng rng(42);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> w(32), act(32);
    for (double& x : w) x = rng.normal();
    for (double& a : act) a = rng.uniform(0.1, 3.0);
    const ScaleSearchResult r = search_scale(w, act, 3);
    double amax = 0.0;
    for (double x : w) amax = std::max(amax, std::fabs(x));
    EXPECT_LE(r.objective, importance_objective(w, act, 3, amax / 4.0));
  }
}

TEST(ScaleSearchTest, LayerScalesUseChannelSlices) {
  Rng rng(43);
  Tensor w({3, 10});
  for (double& x : w.values()) x = rng.normal();
  std::vector<double> act(10);
  for (double& a : act) a = rng.uniform(0.2, 2.0);
  const Tensor s = search_layer_scales(w, 4, 3, act);
  ASSERT_EQ(s.shape(), (Shape{3, 3}));
  const GroupLayout layout(w.shape(), 4);
  for (std::size_t g = 0; g < layout.num_groups(); ++g) {
    std::vector<double> grp, a;
    for (std::size_t k = 0; k < layout.length(g); ++k) {
      grp.push_back(w[layout.begin(g) + k]);
      a.push_back(act[layout.col_begin(g) + k]);
    }
    const std::size_t idx = oracle::scale_search_index(grp, a, 3);
    double amax = 0.0;
    for (double x : grp) amax = std::max(amax, std::fabs(x));
    EXPECT_DOUBLE_EQ(s[g], amax / (4.0 + epsilon_at(idx)));
  }
  EXPECT_THROW(search_layer_scales(w, 4, 3, std::vector<double>(9, 1.0)), DimensionError);
}

TEST(ApplyAlphaTest, RangeContract) {
  EXPECT_DOUBLE_EQ(apply_alpha(0.2, 1.5), 0.3);
  EXPECT_DOUBLE_EQ(apply_alpha(0.2, 0.5), 0.1);
  EXPECT_THROW(apply_alpha(0.2, 1.6), ContractError);
  EXPECT_THROW(apply_alpha(0.2, 0.4), ContractError);
}

TEST(ActStatsTest, ObserveMergeAndJson) {
  ActChannelStats a, b;
  a.observe("fc0", Tensor({2, 3}, {1, -5, 2, -3, 0.5, 1}), 2);
  b.observe("fc0", Tensor({1, 3}, {0, 7, -2.5}), 1);
  b.observe("fc1", Tensor({1, 2}, {1, 1}), 1);
  a.merge(b);
  EXPECT_EQ(a.at("fc0").max_abs, (std::vector<double>{3, 7, 2.5}));
  EXPECT_EQ(a.at("fc0").samples, 3u);
  EXPECT_TRUE(a.contains("fc1"));
  EXPECT_THROW(a.at("fc2"), ContractError);
  EXPECT_THROW(a.observe("fc0", Tensor({1, 2}), 1), DimensionError);
  EXPECT_EQ(ActChannelStats::from_json(a.to_json()), a);
  const std::string path = ::testing::TempDir() + "lowbit_stats.json";
  a.save(path);
  EXPECT_EQ(ActChannelStats::load(path), a);
  nlohmann::json bad = a.to_json();
  bad["layers"][0]["max_abs"][0] = -1.0;
  EXPECT_THROW(ActChannelStats::from_json(bad), FormatError);
}

TEST(ActStatsTest, CalibrationCoversEveryLayer) {
  ModelSpec spec;
  spec.vocab = 32;
  spec.hidden = 16;
  spec.heads = 2;
  spec.ffn = 24;
  spec.n_blocks = 1;
  spec.seed = 2;
  const Model m = Model::build(spec);
  const CalibSet calib = synthetic_calibration(32, 2, 2, 8, 4, 1);
  const ActChannelStats stats = calibrate_act_stats(m, calib);
  for (const LayerInfo& l : m.layers()) {
    ASSERT_TRUE(stats.contains(l.name)) << l.name;
    EXPECT_EQ(stats.at(l.name).max_abs.size(), l.in_features);
    EXPECT_EQ(stats.at(l.name).samples, 4u);
  }
  // The embedding feeds q/k/v through rms_norm, so their stats coincide.
  EXPECT_EQ(stats.at("block0.q_proj").max_abs, stats.at("block0.k_proj").max_abs);
}

}  // namespace
}  // namespace lowbit
