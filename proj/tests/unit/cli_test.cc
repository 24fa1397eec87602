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

#include "cli.hpp"

#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "support/audit.hpp"

namespace lowbit::tools {
namespace {

namespace fs = std::filesystem;

struct Result {
  int code;
  std::string out;
  std::string err;
};

Result run(std::vector<std::string> args) {
  args.insert(args.begin(), "lowbit");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::path(::testing::TempDir()) /
           ("lowbit_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
    config_ = (dir_ / "run.ini").string();
    std::ofstream(config_) << "[model]\narch = tiny-transformer\nvocab = 32\nhidden = 16\n"
                              "heads = 2\nffn = 32\nblocks = 1\npretrain_steps = 30\n"
                              "[quant]\noptions = 2,4,8\ntarget_bits = 3\ngroup_size = 8\n"
                              "[calib]\nsamples = 4\nseq_len = 16\n"
                              "[tune]\nsteps = 10\nseq_len = 16\ncalib_samples = 8\n"
                              "[eval]\nsamples = 8\nseq_len = 16\n"
                              "[run]\nseed = 3\n";
  }
  void TearDown() override { fs::remove_all(dir_); }

  std::vector<std::string> common(const std::string& sub, const fs::path& out) const {
    return {sub, "-c", config_, "-o", out.string()};
  }

  fs::path dir_;
  std::string config_;
};

TEST_F(CliTest, UsageErrorsAreConfigErrors) {
  EXPECT_EQ(run({}).code, kExitConfig);
  EXPECT_EQ(run({"frobnicate"}).code, kExitConfig);
  auto args = common("sensitivity", dir_ / "o");
  args.insert(args.end(), {"--set", "quant.colour=blue"});
  const Result r = run(args);
  EXPECT_EQ(r.code, kExitConfig);
  EXPECT_NE(r.err.find("quant.colour"), std::string::npos) << r.err;
}

TEST_F(CliTest, MissingCalibrationFileNamesThePath) {
  auto args = common("sensitivity", dir_ / "o");
  const std::string missing = (dir_ / "no_such_calib.txt").string();
  args.insert(args.end(), {"--set", "calib.source=" + missing});
  const Result r = run(args);
  EXPECT_NE(r.code, kExitOk);
  EXPECT_NE(r.err.find(missing), std::string::npos) << r.err;
}

TEST_F(CliTest, SensitivityThenAllocate) {
  const fs::path out = dir_ / "o";
  ASSERT_EQ(run(common("sensitivity", out)).code, kExitOk);
  ASSERT_TRUE(fs::exists(out / "sensitivity.json"));
  const SensitivityReport rep = SensitivityReport::load((out / "sensitivity.json").string());
  EXPECT_EQ(rep.layers.size(), 7u);

  auto args = common("allocate", out);
  args.insert(args.end(), {"--report", (out / "sensitivity.json").string(), "--target", "8/3"});
  const Result ok = run(args);
  ASSERT_EQ(ok.code, kExitOk) << ok.err;
  const BitAssignment a = BitAssignment::load((out / "assignment.json").string());
  std::vector<std::uint64_t> params;
  for (const auto& l : rep.layers) params.push_back(l.params);
  testing::audit(a, params, "cli_test.allocate");
  EXPECT_EQ(a.target, Rational::of(8, 3));

  for (const char* mode : {"head", "tail", "brute"}) {
    auto h = args;
    h.insert(h.end(), {"--mode", mode});
    ASSERT_EQ(run(h).code, kExitOk) << mode;
    const BitAssignment ha = BitAssignment::load((out / "assignment.json").string());
    EXPECT_EQ(ha.solver, mode);
    testing::audit(ha, params, std::string("cli_test.") + mode);
  }

  auto low = common("allocate", out);
  low.insert(low.end(), {"--report", (out / "sensitivity.json").string(), "--target", "1.5"});
  const Result inf = run(low);
  EXPECT_EQ(inf.code, kExitInfeasible);
  EXPECT_NE(inf.err.find("infeasible"), std::string::npos) << inf.err;
}

TEST_F(CliTest, QuantizeIsDeterministicAndVerifies) {
  const fs::path a = dir_ / "a", b = dir_ / "b";
  const Result ra = run(common("quantize", a));
  ASSERT_EQ(ra.code, kExitOk) << ra.err;
  ASSERT_EQ(run(common("quantize", b)).code, kExitOk);
  EXPECT_EQ(slurp(a / "model.lbqa"), slurp(b / "model.lbqa"));
  EXPECT_EQ(slurp(a / "metrics.json"), slurp(b / "metrics.json"));
  const Result v = run({"verify", (a / "model.lbqa").string()});
  EXPECT_EQ(v.code, kExitOk) << v.out;
  EXPECT_EQ(v.out.find("FAIL"), std::string::npos) << v.out;

  const QuantizedArtifact art = QuantizedArtifact::read((a / "model.lbqa").string());
  const BitAssignment asg = BitAssignment::from_json(art.assignment);
  const Model m = Model::build(ModelSpec::from_json(art.config.at("model")));
  std::vector<std::uint64_t> params;
  for (const auto& name : asg.names) params.push_back(m.layers()[m.layer_index(name)].params());
  testing::audit(asg, params, "cli_test.quantize");
}

TEST_F(CliTest, VerifyRejectsCorruptArtifact) {
  const fs::path a = dir_ / "a";
  ASSERT_EQ(run(common("quantize", a)).code, kExitOk);
  std::string bytes = slurp(a / "model.lbqa");
  bytes[bytes.size() / 2] ^= 0x01;
  std::ofstream(a / "bad.lbqa", std::ios::binary) << bytes;
  const Result r = run({"verify", (a / "bad.lbqa").string()});
  EXPECT_EQ(r.code, kExitFailure);
  EXPECT_NE(r.err.find("checksum"), std::string::npos) << r.err;
}

TEST_F(CliTest, ReportComparesAllocations) {
  const fs::path out = dir_ / "o";
  const Result r = run(common("report", out));
  ASSERT_EQ(r.code, kExitOk) << r.err;
  for (const char* row : {"dl-only", "head-8", "tail-8"}) {
    EXPECT_NE(r.out.find(row), std::string::npos) << row;
  }
  const nlohmann::json rep = nlohmann::json::parse(slurp(out / "report.json"));
  EXPECT_EQ(rep.at("rows").size(), 3u);
  const Model m = Model::build([&] {
    RunConfig cfg = load_config(config_, {});
    return cfg.model;
  }());
  for (const auto& row : rep.at("rows")) {
    const BitAssignment asg = BitAssignment::from_json(row.at("assignment"));
    std::vector<std::uint64_t> params;
    for (const auto& name : asg.names) params.push_back(m.layers()[m.layer_index(name)].params());
    testing::audit(asg, params, "cli_test.report");
  }
}

}  // namespace
}  // namespace lowbit::tools
