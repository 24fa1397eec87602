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

// Run configuration for the command-line tool.
//
// Config files are INI with the sections [model] [quant] [calib] [tune]
// [eval] [run]. Overrides use "section.key=value". Unknown keys are errors.
// Every seed derives from run.seed.

#ifndef LOWBIT_TOOLS_RUN_CONFIG_HPP_
#define LOWBIT_TOOLS_RUN_CONFIG_HPP_

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "lowbit/allocator.hpp"
#include "lowbit/calib.hpp"
#include "lowbit/model.hpp"
#include "lowbit/tuner.hpp"

namespace lowbit::tools {

struct RunConfig {
  ModelSpec model = [] {
    ModelSpec s;
    s.pretrain_steps = 300;
    return s;
  }();

  SchemeFamily family = SchemeFamily::kIntSym;
  std::vector<int> options = {2, 4, 8};
  Rational target = Rational::of(5, 2);
  std::size_t group_size = 32;
  std::vector<std::string> exclude;
  std::string solver = "dp";  // dp | brute | head | tail
  int high_bits = 8;

  // Sensitivity calibration. Sources: "synthetic" (the model's own
  // synthetic language) or a file path.
  std::string calib_source = "synthetic";
  std::size_t calib_samples = 16;
  std::size_t calib_seq_len = 256;
  std::size_t calib_batch_size = 8;
  bool grad_at_full_precision = false;

  TuneConfig tune;

  std::string eval_source = "synthetic";
  std::size_t eval_samples = 64;
  std::size_t eval_seq_len = 64;
  std::size_t eval_batch_size = 16;

  std::uint64_t seed = 0;
  std::string out_dir;

  void validate() const;
  // Canonical form; its digest identifies a run.
  nlohmann::json to_json() const;

  CalibSet sensitivity_calib() const;
  CalibSet tune_calib() const;
  CalibSet eval_set() const;
};

// Defaults, then the file (if non-empty), then the overrides. The output
// directory falls back to $LOWBIT_OUT_DIR, then "lowbit-out".
RunConfig load_config(const std::string& path, const std::vector<std::string>& overrides);

}  // namespace lowbit::tools

#endif  // LOWBIT_TOOLS_RUN_CONFIG_HPP_
