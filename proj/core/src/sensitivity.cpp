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

#include "lowbit/sensitivity.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <optional>

#include "lowbit/errors.hpp"
#include "lowbit/ops.hpp"

namespace lowbit {
namespace {

double abs_dot(const Tensor& g, const Tensor& a, const Tensor& b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < g.size(); ++i) acc += std::fabs(g[i] * (a[i] - b[i]));
  return acc;
}

// Replaces one layer's weight by a gradient-tracking leaf.
class WeightProbe : public LayerHooks {
 public:
  WeightProbe(std::size_t layer, Tensor probe) : layer_(layer), probe_(std::move(probe)) {}

  Var weight(Tape& tape, std::size_t layer, const Tensor& w) override {
    if (layer != layer_) return tape.constant(w);
    leaf_ = tape.parameter(probe_);
    return *leaf_;
  }

  const Var& leaf() const { return *leaf_; }

 private:
  std::size_t layer_;
  Tensor probe_;
  std::optional<Var> leaf_;
};

// Cuts the graph at one layer's input and records the full and quantized
// activations there.
class ActivationProbe : public LayerHooks {
 public:
  ActivationProbe(std::size_t layer, const QuantScheme& scheme, bool at_full_precision)
      : layer_(layer), scheme_(scheme), at_full_precision_(at_full_precision) {}

  Var weight(Tape& tape, std::size_t layer, const Tensor& w) override {
    if (layer != layer_ || at_full_precision_) return tape.constant(w);
    return tape.constant(rtn_qdq(w, scheme_));
  }

  Var input(Tape& tape, std::size_t layer, const Var& x) override {
    if (layer != layer_) return x;
    full_ = x.value();
    quant_ = activation_qdq(full_, scheme_);
    leaf_ = tape.parameter(at_full_precision_ ? full_ : quant_);
    return *leaf_;
  }

  double score(const Gradients& grads) const {
    return abs_dot(grads.of(*leaf_), full_, quant_);
  }

 private:
  std::size_t layer_;
  QuantScheme scheme_;
  bool at_full_precision_;
  Tensor full_;
  Tensor quant_;
  std::optional<Var> leaf_;
};

void check_probe(const Model& model, std::size_t layer, const CalibSet& calib) {
  if (layer >= model.layers().size()) {
    throw IndexError("layer " + std::to_string(layer) + " out of range");
  }
  if (calib.batches.empty()) throw ContractError("sensitivity needs at least one batch");
}

}  // namespace

double delta_loss_weight_only(const Model& model, std::size_t layer, const QuantScheme& scheme,
                              const CalibSet& calib, const SensitivityOptions& opts) {
  check_probe(model, layer, calib);
  scheme.validate();
  if (scheme.is_identity()) return 0.0;
  const Tensor& w_full = model.weight(layer);
  const Tensor w_quant = rtn_qdq(w_full, scheme);
  double total = 0.0;
  for (const TokenBatch& batch : calib.batches) {
    WeightProbe probe(layer, opts.grad_at_full_precision ? w_full : w_quant);
    Tape tape;
    const Var loss = model.loss(tape, batch, probe);
    total += abs_dot(tape.backward(loss).of(probe.leaf()), w_full, w_quant);
  }
  return total / static_cast<double>(calib.batches.size());
}

double delta_loss_weight_act(const Model& model, std::size_t layer, const QuantScheme& scheme,
                             const CalibSet& calib, const SensitivityOptions& opts) {
  check_probe(model, layer, calib);
  scheme.validate();
  if (!scheme.quantizes_activations()) return 0.0;
  double total = 0.0;
  for (const TokenBatch& batch : calib.batches) {
    ActivationProbe probe(layer, scheme, opts.grad_at_full_precision);
    Tape tape;
    const Var loss = model.loss(tape, batch, probe);
    total += probe.score(tape.backward(loss));
  }
  return total / static_cast<double>(calib.batches.size());
}

double delta_loss(const Model& model, std::size_t layer, const QuantScheme& scheme,
                  const CalibSet& calib, const SensitivityOptions& opts) {
  if (scheme.quantizes_activations()) return delta_loss_weight_act(model, layer, scheme, calib, opts);
  return delta_loss_weight_only(model, layer, scheme, calib, opts);
}

std::size_t SensitivityReport::layer_index(const std::string& name) const {
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (layers[i].name == name) return i;
  }
  throw ContractError("layer '" + name + "' is not in the sensitivity report");
}

double SensitivityReport::score(std::size_t layer, int bits) const {
  const auto& scores = layers.at(layer).scores;
  const auto it = scores.find(bits);
  if (it == scores.end()) {
    throw ContractError("no score for " + std::to_string(bits) + " bits on layer " +
                        layers[layer].name);
  }
  return it->second;
}

nlohmann::json SensitivityReport::to_json() const {
  nlohmann::json opts = nlohmann::json::array();
  for (int b : options) opts.push_back({{"bits", b}, {"label", scheme(b).label()}});
  nlohmann::json ls = nlohmann::json::array();
  for (const auto& l : layers) {
    nlohmann::json scores = nlohmann::json::object();
    for (const auto& [b, s] : l.scores) scores[scheme(b).label()] = s;
    ls.push_back({{"name", l.name}, {"params", l.params}, {"scores", scores}});
  }
  return {{"format", "lowbit-sensitivity/1"},
          {"family", family_name(family)},
          {"group_size", group_size},
          {"options", opts},
          {"calib", {{"samples", calib_samples}, {"seq_len", calib_seq_len}}},
          {"layers", ls}};
}

SensitivityReport SensitivityReport::from_json(const nlohmann::json& j) {
  SensitivityReport r;
  try {
    r.family = parse_family(j.at("family").get<std::string>());
    r.group_size = j.at("group_size").get<std::size_t>();
    for (const auto& o : j.at("options")) r.options.push_back(o.at("bits").get<int>());
    r.calib_samples = j.at("calib").at("samples").get<std::size_t>();
    r.calib_seq_len = j.at("calib").at("seq_len").get<std::size_t>();
    for (const auto& l : j.at("layers")) {
      LayerSensitivity ls;
      ls.name = l.at("name").get<std::string>();
      ls.params = l.at("params").get<std::uint64_t>();
      for (int b : r.options) {
        const double s = l.at("scores").at(r.scheme(b).label()).get<double>();
        if (!(s >= 0.0)) throw FormatError("negative score for layer " + ls.name);
        ls.scores[b] = s;
      }
      r.layers.push_back(std::move(ls));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed sensitivity report: ") + e.what());
  }
  if (!std::is_sorted(r.options.begin(), r.options.end())) {
    throw FormatError("sensitivity report options must be ascending");
  }
  return r;
}

void SensitivityReport::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write '" + path + "'");
  out << to_json().dump(1) << '\n';
}

SensitivityReport SensitivityReport::load(const std::string& path) {
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

SensitivityReport build_report(const Model& model, const std::vector<int>& options,
                               SchemeFamily family, std::size_t group_size,
                               const CalibSet& calib, const SensitivityOptions& opts) {
  if (options.empty()) throw ContractError("option set must be nonempty");
  SensitivityReport r;
  r.family = family;
  r.group_size = group_size;
  r.options = options;
  std::sort(r.options.begin(), r.options.end());
  r.options.erase(std::unique(r.options.begin(), r.options.end()), r.options.end());
  for (int b : r.options) r.scheme(b).validate();
  r.calib_samples = calib.n_samples;
  r.calib_seq_len = calib.seq_len;
  for (std::size_t i = 0; i < model.layers().size(); ++i) {
    LayerSensitivity ls{model.layers()[i].name, model.layers()[i].params(), {}};
    for (int b : r.options) ls.scores[b] = delta_loss(model, i, r.scheme(b), calib, opts);
    r.layers.push_back(std::move(ls));
  }
  return r;
}

}  // namespace lowbit
