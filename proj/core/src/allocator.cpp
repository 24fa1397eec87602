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

#include "lowbit/allocator.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

#include "lowbit/errors.hpp"

namespace lowbit {
namespace {

__extension__ typedef __int128 i128;

std::string i128_str(i128 v) {
  if (v == 0) return "0";
  std::string s;
  const bool neg = v < 0;
  if (neg) v = -v;
  while (v > 0) {
    s.push_back(static_cast<char>('0' + static_cast<int>(v % 10)));
    v /= 10;
  }
  if (neg) s.push_back('-');
  return {s.rbegin(), s.rend()};
}

std::int64_t parse_digits(const std::string& text, const std::string& whole) {
  if (text.empty() || text.size() > 15 ||
      !std::all_of(text.begin(), text.end(), [](char c) { return c >= '0' && c <= '9'; })) {
    throw ContractError("'" + whole + "' is not a rational like 2.5 or 8/3");
  }
  return std::stoll(text);
}

i128 total_params(const std::vector<std::uint64_t>& params) {
  i128 t = 0;
  for (auto p : params) t += p;
  return t;
}

// Throws unless the all-minimum assignment fits.
void check_min_feasible(const AllocationProblem& p) {
  const i128 sum_p = total_params(p.params);
  const i128 need = i128{p.options.front()} * sum_p * p.target.den;
  const i128 allow = i128{p.target.num} * sum_p;
  if (need > allow) {
    throw InfeasibleError("budget infeasible: every layer at " +
                          std::to_string(p.options.front()) + " bits needs " +
                          i128_str(i128{p.options.front()} * sum_p) + " bit-params but T=" +
                          p.target.str() + " over " + i128_str(sum_p) + " params allows " +
                          i128_str(allow / p.target.den));
  }
}

BitAssignment make_assignment(const AllocationProblem& p, std::vector<int> bits,
                              std::string solver) {
  BitAssignment a;
  a.solver = std::move(solver);
  a.family = p.family;
  a.group_size = p.group_size;
  a.target = p.target;
  a.names = p.names;
  a.excluded = p.excluded;
  a.bits = std::move(bits);
  double num = 0.0;
  double den = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const auto k = static_cast<std::size_t>(
        std::find(p.options.begin(), p.options.end(), a.bits[i]) - p.options.begin());
    a.objective += p.costs[i][k];
    num += static_cast<double>(a.bits[i]) * static_cast<double>(p.params[i]);
    den += static_cast<double>(p.params[i]);
  }
  a.average_bits = den > 0.0 ? num / den : 0.0;
  return a;
}

}  // namespace

Rational Rational::of(std::int64_t num, std::int64_t den) {
  if (den <= 0 || num < 0) throw ContractError("rational needs num >= 0 and den > 0");
  const std::int64_t g = std::gcd(num, den);
  return {num / g, den / g};
}

Rational Rational::parse(const std::string& text) {
  const auto slash = text.find('/');
  if (slash != std::string::npos) {
    return of(parse_digits(text.substr(0, slash), text), parse_digits(text.substr(slash + 1), text));
  }
  const auto dot = text.find('.');
  if (dot == std::string::npos) return of(parse_digits(text, text), 1);
  const std::string frac = text.substr(dot + 1);
  if (frac.size() > 9) throw ContractError("'" + text + "' has too many decimals");
  std::int64_t den = 1;
  for (std::size_t i = 0; i < frac.size(); ++i) den *= 10;
  const std::string ip = text.substr(0, dot);
  return of(parse_digits(ip.empty() ? "0" : ip, text) * den + (frac.empty() ? 0 : parse_digits(frac, text)),
            den);
}

std::string Rational::str() const {
  return den == 1 ? std::to_string(num) : std::to_string(num) + "/" + std::to_string(den);
}

void AllocationProblem::validate() const {
  if (names.empty()) throw ContractError("allocation needs at least one layer");
  if (costs.size() != names.size() || params.size() != names.size()) {
    throw ContractError("names, costs and params must have one entry per layer");
  }
  if (options.empty()) throw ContractError("option set must be nonempty");
  if (options.size() > 255) throw ContractError("at most 255 options are supported");
  for (std::size_t k = 1; k < options.size(); ++k) {
    if (options[k] <= options[k - 1]) throw ContractError("options must be ascending and distinct");
  }
  if (options.front() < 1) throw ContractError("options must be positive bit widths");
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (params[i] == 0) throw ContractError("layer " + names[i] + " has no parameters");
    if (costs[i].size() != options.size()) {
      throw ContractError("layer " + names[i] + " needs one cost per option");
    }
    for (double c : costs[i]) {
      if (!(c >= 0.0) || !std::isfinite(c)) {
        throw ContractError("layer " + names[i] + " has a negative or non-finite cost");
      }
    }
  }
  // A target below min(B) is reported by the solvers as infeasible.
  const i128 hi = i128{options.back()} * target.den;
  if (target.den <= 0 || target.num > hi) {
    throw ContractError("target " + target.str() + " above the largest option " +
                        std::to_string(options.back()));
  }
}

AllocationProblem problem_from_report(const SensitivityReport& report, const Rational& target,
                                      const std::vector<std::string>& exclude) {
  for (const auto& name : exclude) report.layer_index(name);
  AllocationProblem p;
  p.options = report.options;
  p.target = target;
  p.family = report.family;
  p.group_size = report.group_size;
  for (std::size_t i = 0; i < report.layers.size(); ++i) {
    const auto& l = report.layers[i];
    if (std::find(exclude.begin(), exclude.end(), l.name) != exclude.end()) {
      p.excluded.push_back(l.name);
      continue;
    }
    p.names.push_back(l.name);
    p.params.push_back(l.params);
    std::vector<double> row;
    for (int b : p.options) row.push_back(report.score(i, b));
    p.costs.push_back(std::move(row));
  }
  return p;
}

int BitAssignment::bits_for(const std::string& name) const {
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (names[i] == name) return bits[i];
  }
  return kFullPrecisionBits;
}

QuantScheme BitAssignment::scheme_for(const std::string& name) const {
  return {family, bits_for(name), group_size};
}

nlohmann::json BitAssignment::to_json() const {
  nlohmann::json layers = nlohmann::json::array();
  for (std::size_t i = 0; i < names.size(); ++i) {
    layers.push_back({{"name", names[i]},
                      {"bits", bits[i]},
                      {"label", QuantScheme{family, bits[i], group_size}.label()}});
  }
  return {{"format", "lowbit-assignment/1"},
          {"solver", solver},
          {"family", family_name(family)},
          {"group_size", group_size},
          {"target", target.str()},
          {"average_bits", average_bits},
          {"objective", objective},
          {"layers", layers},
          {"excluded", excluded}};
}

BitAssignment BitAssignment::from_json(const nlohmann::json& j) {
  BitAssignment a;
  try {
    a.solver = j.at("solver").get<std::string>();
    a.family = parse_family(j.at("family").get<std::string>());
    a.group_size = j.at("group_size").get<std::size_t>();
    a.target = Rational::parse(j.at("target").get<std::string>());
    a.average_bits = j.at("average_bits").get<double>();
    a.objective = j.at("objective").get<double>();
    for (const auto& l : j.at("layers")) {
      a.names.push_back(l.at("name").get<std::string>());
      a.bits.push_back(l.at("bits").get<int>());
    }
    a.excluded = j.at("excluded").get<std::vector<std::string>>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed assignment: ") + e.what());
  }
  return a;
}

void BitAssignment::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write '" + path + "'");
  out << to_json().dump(1) << '\n';
}

BitAssignment BitAssignment::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open '" + path + "'");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("'" + path + "' is not JSON: " + e.what());
  }
  return from_json(j);
}

bool budget_feasible(const std::vector<int>& bits, const std::vector<std::uint64_t>& params,
                     const Rational& target) {
  if (bits.size() != params.size()) throw ContractError("one bit width per layer required");
  i128 used = 0;
  for (std::size_t i = 0; i < bits.size(); ++i) used += i128{bits[i]} * params[i];
  return used * target.den <= i128{target.num} * total_params(params);
}

void validate_assignment(const AllocationProblem& problem, const BitAssignment& a) {
  if (a.names != problem.names || a.bits.size() != problem.size()) {
    throw ContractError("assignment layers do not match the problem");
  }
  for (std::size_t i = 0; i < a.bits.size(); ++i) {
    if (std::find(problem.options.begin(), problem.options.end(), a.bits[i]) ==
        problem.options.end()) {
      throw ContractError("layer " + a.names[i] + " got " + std::to_string(a.bits[i]) +
                          " bits, not an allowed option");
    }
  }
  if (!budget_feasible(a.bits, problem.params, problem.target)) {
    throw ContractError("assignment exceeds the bit budget");
  }
}

BitAssignment allocate_dp(const AllocationProblem& problem) {
  problem.validate();
  check_min_feasible(problem);
  const std::size_t n = problem.size();
  const std::size_t k_opts = problem.options.size();
  const int b_min = problem.options.front();

  std::uint64_t g = 0;
  for (auto p : problem.params) g = std::gcd(g, p);
  std::vector<std::uint64_t> units(n);
  for (std::size_t i = 0; i < n; ++i) units[i] = problem.params[i] / g;

  // Budget beyond the all-minimum assignment, in normalized units.
  const i128 sum_u = total_params(units);
  i128 slack = i128{problem.target.num} * sum_u / problem.target.den - i128{b_min} * sum_u;
  i128 max_extra = 0;
  for (std::size_t i = 0; i < n; ++i) max_extra += i128{problem.options.back() - b_min} * units[i];
  slack = std::min(slack, max_extra);

  // Coarsen: ceil the item weights, floor the capacity.
  std::uint64_t factor = 1;
  if (slack > static_cast<i128>(kDpCapacityLimit)) {
    factor = static_cast<std::uint64_t>((slack + kDpCapacityLimit - 1) / kDpCapacityLimit);
  }
  const auto cap = static_cast<std::size_t>(slack / factor);
  std::vector<std::vector<std::size_t>> weight(n, std::vector<std::size_t>(k_opts));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < k_opts; ++k) {
      const i128 w = i128{problem.options[k] - b_min} * units[i];
      weight[i][k] = static_cast<std::size_t>((w + factor - 1) / factor);
    }
  }

  // best[c]: minimum cost of layers i.. with c budget units left.
  constexpr double kInf = std::numeric_limits<double>::infinity();
  std::vector<double> next(cap + 1, 0.0);
  std::vector<double> cur(cap + 1);
  std::vector<std::uint8_t> choice(n * (cap + 1));
  for (std::size_t i = n; i-- > 0;) {
    for (std::size_t c = 0; c <= cap; ++c) {
      double best = kInf;
      std::uint8_t pick = 0;
      for (std::size_t k = k_opts; k-- > 0;) {
        if (weight[i][k] > c) continue;
        const double v = problem.costs[i][k] + next[c - weight[i][k]];
        if (v < best) {
          best = v;
          pick = static_cast<std::uint8_t>(k);
        }
      }
      cur[c] = best;
      choice[i * (cap + 1) + c] = pick;
    }
    std::swap(cur, next);
  }

  std::vector<int> bits(n);
  std::size_t c = cap;
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint8_t k = choice[i * (cap + 1) + c];
    bits[i] = problem.options[k];
    c -= weight[i][k];
  }
  return make_assignment(problem, std::move(bits), "dp");
}

BitAssignment allocate_brute(const AllocationProblem& problem) {
  problem.validate();
  const std::size_t n = problem.size();
  const std::size_t k_opts = problem.options.size();
  double count = std::pow(static_cast<double>(k_opts), static_cast<double>(n));
  if (count > static_cast<double>(kBruteForceLimit)) {
    throw SizeError("brute force over " + std::to_string(k_opts) + "^" + std::to_string(n) +
                    " assignments exceeds the limit of " + std::to_string(kBruteForceLimit));
  }
  check_min_feasible(problem);

  std::vector<std::size_t> idx(n, 0);
  std::vector<int> bits(n);
  std::vector<int> best_bits;
  double best = std::numeric_limits<double>::infinity();
  for (;;) {
    double obj = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      bits[i] = problem.options[idx[i]];
      obj += problem.costs[i][idx[i]];
    }
    if (budget_feasible(bits, problem.params, problem.target) &&
        (obj < best || (obj == best && bits > best_bits))) {
      best = obj;
      best_bits = bits;
    }
    std::size_t i = n;
    while (i > 0 && ++idx[i - 1] == k_opts) idx[--i] = 0;
    if (i == 0) break;
  }
  return make_assignment(problem, std::move(best_bits), "brute");
}

HeuristicMode parse_heuristic(const std::string& name) {
  if (name == "head") return HeuristicMode::kHead;
  if (name == "tail") return HeuristicMode::kTail;
  throw ContractError("unknown heuristic '" + name + "' (expected head or tail)");
}

BitAssignment allocate_heuristic(const AllocationProblem& problem, HeuristicMode mode,
                                 int high_bits) {
  problem.validate();
  if (std::find(problem.options.begin(), problem.options.end(), high_bits) ==
      problem.options.end()) {
    throw ContractError(std::to_string(high_bits) + " bits is not in the option set");
  }
  check_min_feasible(problem);
  const std::size_t n = problem.size();
  std::vector<int> bits(n, problem.options.front());
  for (std::size_t step = 0; step < n; ++step) {
    const std::size_t i = mode == HeuristicMode::kHead ? n - 1 - step : step;
    const int previous = bits[i];
    bits[i] = high_bits;
    if (!budget_feasible(bits, problem.params, problem.target)) {
      bits[i] = previous;
      break;
    }
  }
  return make_assignment(problem, std::move(bits),
                         mode == HeuristicMode::kHead ? "head" : "tail");
}

}  // namespace lowbit
