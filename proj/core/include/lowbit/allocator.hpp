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

// Layer-wise bit allocation under an average-bit budget.
//
// Choose one option b_i per layer to minimize sum_i cost_i(b_i) subject to
//
//   sum_i b_i P_i <= T sum_i P_i
//
// where P_i is the parameter count of layer i. This is a multiple-choice
// knapsack; allocate_dp solves it exactly over integer budget units and
// allocate_brute enumerates every assignment.

#ifndef LOWBIT_ALLOCATOR_HPP_
#define LOWBIT_ALLOCATOR_HPP_

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "lowbit/scheme.hpp"
#include "lowbit/sensitivity.hpp"

namespace lowbit {

// Exact non-negative rational, reduced.
struct Rational {
  std::int64_t num = 0;
  std::int64_t den = 1;

  // "2.5", "4", "8/3".
  static Rational parse(const std::string& text);
  static Rational of(std::int64_t num, std::int64_t den);
  double to_double() const { return static_cast<double>(num) / static_cast<double>(den); }
  std::string str() const;
  friend bool operator==(const Rational&, const Rational&) = default;
};

struct AllocationProblem {
  std::vector<std::string> names;
  std::vector<int> options;                // ascending, distinct
  std::vector<std::vector<double>> costs;  // [layer][option index]
  std::vector<std::uint64_t> params;
  Rational target;
  // Carried through to the assignment.
  SchemeFamily family = SchemeFamily::kIntSym;
  std::size_t group_size = 32;
  std::vector<std::string> excluded;

  std::size_t size() const { return names.size(); }
  void validate() const;
};

// Layers named in `exclude` stay in full precision and do not count toward
// the budget.
AllocationProblem problem_from_report(const SensitivityReport& report, const Rational& target,
                                      const std::vector<std::string>& exclude = {});

struct BitAssignment {
  std::string solver;  // dp | brute | head | tail
  SchemeFamily family = SchemeFamily::kIntSym;
  std::size_t group_size = 32;
  Rational target;
  std::vector<std::string> names;
  std::vector<int> bits;
  std::vector<std::string> excluded;
  double objective = 0.0;   // left-to-right sum of chosen costs
  double average_bits = 0.0;

  // Full precision for excluded or unknown layers.
  int bits_for(const std::string& name) const;
  QuantScheme scheme_for(const std::string& name) const;

  nlohmann::json to_json() const;
  static BitAssignment from_json(const nlohmann::json& j);
  void save(const std::string& path) const;
  static BitAssignment load(const std::string& path);
};

// Exact integer check of sum b_i P_i <= T sum P_i.
bool budget_feasible(const std::vector<int>& bits, const std::vector<std::uint64_t>& params,
                     const Rational& target);

// Throws ContractError unless `a` picks one valid option per problem layer
// and meets the budget.
void validate_assignment(const AllocationProblem& problem, const BitAssignment& a);

inline constexpr std::uint64_t kDpCapacityLimit = 1'000'000;
inline constexpr std::uint64_t kBruteForceLimit = 10'000'000;

BitAssignment allocate_dp(const AllocationProblem& problem);
BitAssignment allocate_brute(const AllocationProblem& problem);

enum class HeuristicMode {
  kHead,  // upgrade layers nearest the output head first
  kTail,  // upgrade layers nearest the embedding first
};
HeuristicMode parse_heuristic(const std::string& name);

// Upgrades a contiguous run of layers from one end to `high_bits` while the
// budget allows; everything else takes the smallest option.
BitAssignment allocate_heuristic(const AllocationProblem& problem, HeuristicMode mode,
                                 int high_bits);

}  // namespace lowbit

#endif  // LOWBIT_ALLOCATOR_HPP_
