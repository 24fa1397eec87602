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

#include "run_config.hpp"

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <map>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "lowbit/errors.hpp"

namespace lowbit::tools {
namespace {

namespace pt = boost::property_tree;

std::uint64_t to_uint(const std::string& field, const std::string& v) {
  std::size_t used = 0;
  unsigned long long out = 0;
  try {
    if (!v.empty() && v[0] == '-') throw std::invalid_argument("negative");
    out = std::stoull(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != v.size()) throw ConfigError(field, "'" + v + "' is not a non-negative integer");
  return out;
}

int to_int(const std::string& field, const std::string& v) {
  std::size_t used = 0;
  int out = 0;
  try {
    out = std::stoi(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != v.size()) throw ConfigError(field, "'" + v + "' is not an integer");
  return out;
}

double to_double(const std::string& field, const std::string& v) {
  std::size_t used = 0;
  double out = 0.0;
  try {
    out = std::stod(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != v.size()) throw ConfigError(field, "'" + v + "' is not a number");
  return out;
}

bool to_bool(const std::string& field, const std::string& v) {
  if (v == "true" || v == "1" || v == "on" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "off" || v == "no") return false;
  throw ConfigError(field, "'" + v + "' is not a boolean");
}

std::vector<std::string> to_list(const std::string& v) {
  std::vector<std::string> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item.erase(0, item.find_first_not_of(" \t"));
    item.erase(item.find_last_not_of(" \t") + 1);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

using Setter = std::function<void(RunConfig&, const std::string& field, const std::string&)>;

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = {
      {"model.arch", [](RunConfig& c, auto& f, auto& v) {
         try {
           c.model.arch = parse_architecture(v);
         } catch (const Error& e) {
           throw ConfigError(f, e.what());
         }
       }},
      {"model.vocab", [](RunConfig& c, auto& f, auto& v) { c.model.vocab = to_uint(f, v); }},
      {"model.hidden", [](RunConfig& c, auto& f, auto& v) { c.model.hidden = to_uint(f, v); }},
      {"model.heads", [](RunConfig& c, auto& f, auto& v) { c.model.heads = to_uint(f, v); }},
      {"model.ffn", [](RunConfig& c, auto& f, auto& v) { c.model.ffn = to_uint(f, v); }},
      {"model.blocks", [](RunConfig& c, auto& f, auto& v) { c.model.n_blocks = to_uint(f, v); }},
      {"model.pretrain_steps",
       [](RunConfig& c, auto& f, auto& v) { c.model.pretrain_steps = to_uint(f, v); }},
      {"model.mlp_dims", [](RunConfig& c, auto& f, auto& v) {
         c.model.mlp_dims.clear();
         for (const auto& d : to_list(v)) c.model.mlp_dims.push_back(to_uint(f, d));
       }},
      {"quant.family", [](RunConfig& c, auto& f, auto& v) {
         try {
           c.family = parse_family(v);
         } catch (const Error& e) {
           throw ConfigError(f, e.what());
         }
       }},
      {"quant.options", [](RunConfig& c, auto& f, auto& v) {
         c.options.clear();
         for (const auto& b : to_list(v)) c.options.push_back(to_int(f, b));
       }},
      {"quant.target_bits", [](RunConfig& c, auto& f, auto& v) {
         try {
           c.target = Rational::parse(v);
         } catch (const Error& e) {
           throw ConfigError(f, e.what());
         }
       }},
      {"quant.group_size", [](RunConfig& c, auto& f, auto& v) { c.group_size = to_uint(f, v); }},
      {"quant.exclude", [](RunConfig& c, auto&, auto& v) { c.exclude = to_list(v); }},
      {"quant.solver", [](RunConfig& c, auto&, auto& v) { c.solver = v; }},
      {"quant.high_bits", [](RunConfig& c, auto& f, auto& v) { c.high_bits = to_int(f, v); }},
      {"calib.source", [](RunConfig& c, auto&, auto& v) { c.calib_source = v; }},
      {"calib.samples", [](RunConfig& c, auto& f, auto& v) { c.calib_samples = to_uint(f, v); }},
      {"calib.seq_len", [](RunConfig& c, auto& f, auto& v) { c.calib_seq_len = to_uint(f, v); }},
      {"calib.batch_size",
       [](RunConfig& c, auto& f, auto& v) { c.calib_batch_size = to_uint(f, v); }},
      {"calib.grad_at_full_precision",
       [](RunConfig& c, auto& f, auto& v) { c.grad_at_full_precision = to_bool(f, v); }},
      {"tune.steps", [](RunConfig& c, auto& f, auto& v) { c.tune.steps = to_int(f, v); }},
      {"tune.lr", [](RunConfig& c, auto& f, auto& v) { c.tune.lr = to_double(f, v); }},
      {"tune.batch_size",
       [](RunConfig& c, auto& f, auto& v) { c.tune.batch_size = to_uint(f, v); }},
      {"tune.seq_len", [](RunConfig& c, auto& f, auto& v) { c.tune.seq_len = to_uint(f, v); }},
      {"tune.calib_samples",
       [](RunConfig& c, auto& f, auto& v) { c.tune.calib_samples = to_uint(f, v); }},
      {"tune.trim_fraction",
       [](RunConfig& c, auto& f, auto& v) { c.tune.trim_fraction = to_double(f, v); }},
      {"tune.scale_init", [](RunConfig& c, auto& f, auto& v) { c.tune.scale_init = to_bool(f, v); }},
      {"tune.propagate_quantized",
       [](RunConfig& c, auto& f, auto& v) { c.tune.propagate_quantized = to_bool(f, v); }},
      {"eval.source", [](RunConfig& c, auto&, auto& v) { c.eval_source = v; }},
      {"eval.samples", [](RunConfig& c, auto& f, auto& v) { c.eval_samples = to_uint(f, v); }},
      {"eval.seq_len", [](RunConfig& c, auto& f, auto& v) { c.eval_seq_len = to_uint(f, v); }},
      {"eval.batch_size",
       [](RunConfig& c, auto& f, auto& v) { c.eval_batch_size = to_uint(f, v); }},
      {"run.seed", [](RunConfig& c, auto& f, auto& v) { c.seed = to_uint(f, v); }},
      {"run.out_dir", [](RunConfig& c, auto&, auto& v) { c.out_dir = v; }},
  };
  return table;
}

void apply(RunConfig& c, const std::string& field, const std::string& value) {
  const auto& table = setters();
  const auto it = table.find(field);
  if (it == table.end()) throw ConfigError(field, "unknown setting");
  it->second(c, field, value);
}

void check_source(const std::string& field, const std::string& source) {
  if (source != "synthetic" && !std::filesystem::exists(source)) {
    throw ConfigError(field, "calibration file '" + source + "' does not exist");
  }
}

}  // namespace

RunConfig load_config(const std::string& path, const std::vector<std::string>& overrides) {
  std::vector<std::pair<std::string, std::string>> entries;
  if (!path.empty()) {
    pt::ptree tree;
    try {
      pt::read_ini(path, tree);
    } catch (const pt::ini_parser_error& e) {
      throw ConfigError("config", e.what());
    }
    for (const auto& [section, body] : tree) {
      if (body.empty()) throw ConfigError(section, "setting outside a section");
      for (const auto& [key, leaf] : body) entries.emplace_back(section + "." + key, leaf.data());
    }
  }
  for (const auto& o : overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos || eq == 0) {
      throw ConfigError(o, "override must look like section.key=value");
    }
    entries.emplace_back(o.substr(0, eq), o.substr(eq + 1));
  }

  RunConfig c;
  // The recipe sets several tune fields at once; explicit keys win.
  for (const auto& [field, value] : entries) {
    if (field != "tune.recipe") continue;
    try {
      const TuneConfig preset = TuneConfig::recipe(parse_recipe(value));
      c.tune.steps = preset.steps;
      c.tune.lr = preset.lr;
      c.tune.calib_samples = preset.calib_samples;
    } catch (const ContractError& e) {
      throw ConfigError(field, e.what());
    }
  }
  for (const auto& [field, value] : entries) {
    if (field != "tune.recipe") apply(c, field, value);
  }
  c.model.seed = c.seed;
  if (c.out_dir.empty()) {
    const char* env = std::getenv("LOWBIT_OUT_DIR");
    c.out_dir = (env != nullptr && *env != '\0') ? env : "lowbit-out";
  }
  c.validate();
  return c;
}

void RunConfig::validate() const {
  try {
    model.validate();
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError("model", e.what());
  }
  if (options.empty()) throw ConfigError("quant.options", "must list at least one bit width");
  for (int b : options) {
    try {
      QuantScheme{family, b, group_size}.validate();
    } catch (const Error& e) {
      throw ConfigError("quant.options", e.what());
    }
  }
  // Targets below the smallest option reach the allocator, which reports
  // them as infeasible with the budget numbers.
  const int hi = *std::max_element(options.begin(), options.end());
  if (target.num > std::int64_t{hi} * target.den) {
    throw ConfigError("quant.target_bits",
                      target.str() + " above the largest option " + std::to_string(hi));
  }
  if (solver != "dp" && solver != "brute" && solver != "head" && solver != "tail") {
    throw ConfigError("quant.solver", "expected dp, brute, head or tail");
  }
  if (std::find(options.begin(), options.end(), high_bits) == options.end()) {
    throw ConfigError("quant.high_bits", "must be one of quant.options");
  }
  check_source("calib.source", calib_source);
  check_source("eval.source", eval_source);
  if (calib_samples == 0) throw ConfigError("calib.samples", "must be positive");
  if (calib_seq_len < 2) throw ConfigError("calib.seq_len", "must be at least 2");
  if (calib_batch_size == 0) throw ConfigError("calib.batch_size", "must be positive");
  if (eval_samples == 0) throw ConfigError("eval.samples", "must be positive");
  if (eval_seq_len < 2) throw ConfigError("eval.seq_len", "must be at least 2");
  if (eval_batch_size == 0) throw ConfigError("eval.batch_size", "must be positive");
  tune.validate();
}

nlohmann::json RunConfig::to_json() const {
  std::vector<int> sorted = options;
  std::sort(sorted.begin(), sorted.end());
  return {{"model", model.to_json()},
          {"quant",
           {{"family", family_name(family)},
            {"options", sorted},
            {"target_bits", target.str()},
            {"group_size", group_size},
            {"exclude", exclude},
            {"solver", solver},
            {"high_bits", high_bits}}},
          {"calib",
           {{"source", calib_source},
            {"samples", calib_samples},
            {"seq_len", calib_seq_len},
            {"batch_size", calib_batch_size},
            {"grad_at_full_precision", grad_at_full_precision}}},
          {"tune", tune.to_json()},
          {"eval",
           {{"source", eval_source},
            {"samples", eval_samples},
            {"seq_len", eval_seq_len},
            {"batch_size", eval_batch_size}}},
          {"run", {{"seed", seed}}}};
}

namespace {

CalibSet make_set(const ModelSpec& spec, const std::string& source, std::size_t batch_size,
                  std::size_t seq_len, std::size_t n_samples, std::uint64_t seed) {
  return load_calibration(source, spec.vocab, spec.seed, batch_size, seq_len, n_samples, seed);
}

}  // namespace

CalibSet RunConfig::sensitivity_calib() const {
  return make_set(model, calib_source, calib_batch_size, calib_seq_len, calib_samples, seed + 1);
}

CalibSet RunConfig::tune_calib() const {
  return make_set(model, calib_source, tune.batch_size, tune.seq_len, tune.calib_samples,
                  seed + 2);
}

CalibSet RunConfig::eval_set() const {
  return make_set(model, eval_source, eval_batch_size, eval_seq_len, eval_samples, seed + 3);
}

}  // namespace lowbit::tools
