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

#ifndef LOWBIT_TOOLS_CLI_HPP_
#define LOWBIT_TOOLS_CLI_HPP_

#include <iosfwd>
#include <string>

#include <nlohmann/json.hpp>

#include "lowbit/allocator.hpp"
#include "lowbit/artifact.hpp"
#include "lowbit/sensitivity.hpp"
#include "run_config.hpp"

namespace lowbit::tools {

enum ExitCode : int {
  kExitOk = 0,
  kExitFailure = 1,
  kExitConfig = 2,
  kExitInfeasible = 3,
  kExitNumeric = 4,
};

SensitivityReport run_sensitivity(const RunConfig& cfg);
BitAssignment run_allocate(const SensitivityReport& report, const RunConfig& cfg);

struct QuantizeOutputs {
  QuantizedArtifact artifact;
  nlohmann::json metrics;
};
QuantizeOutputs run_quantize(const RunConfig& cfg, const BitAssignment& assignment);

// Entry point shared by the executable and the tests.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace lowbit::tools

#endif  // LOWBIT_TOOLS_CLI_HPP_
