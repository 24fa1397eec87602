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

#include <algorithm>
#include <cmath>
#include <fstream>

#include "lowbit/errors.hpp"
#include "lowbit/quant.hpp"

namespace lowbit {

void ActChannelStats::observe(const std::string& layer, const Tensor& activations,
                              std::size_t samples) {
  const std::size_t cols = activations.cols();
  LayerActStats& st = layers_[layer];
  if (st.max_abs.empty()) st.max_abs.assign(cols, 0.0);
  if (st.max_abs.size() != cols) {
    throw DimensionError("activation width changed for layer " + layer);
  }
  for (std::size_t i = 0; i < activations.size(); ++i) {
    double& m = st.max_abs[i % cols];
    m = std::max(m, std::fabs(activations[i]));
  }
  st.samples += samples;
}

void ActChannelStats::merge(const ActChannelStats& other) {
  for (const auto& [name, theirs] : other.layers_) {
    LayerActStats& mine = layers_[name];
    if (mine.max_abs.empty()) mine.max_abs.assign(theirs.max_abs.size(), 0.0);
    if (mine.max_abs.size() != theirs.max_abs.size()) {
      throw DimensionError("cannot merge stats of different widths for " + name);
    }
    for (std::size_t c = 0; c < mine.max_abs.size(); ++c) {
      mine.max_abs[c] = std::max(mine.max_abs[c], theirs.max_abs[c]);
    }
    mine.samples += theirs.samples;
  }
}

const LayerActStats& ActChannelStats::at(const std::string& layer) const {
  const auto it = layers_.find(layer);
  if (it == layers_.end()) throw ContractError("no activation stats for layer " + layer);
  return it->second;
}

nlohmann::json ActChannelStats::to_json() const {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& [name, st] : layers_) {
    layers.push_back({{"name", name}, {"samples", st.samples}, {"max_abs", st.max_abs}});
  }
  return {{"format", "lowbit-act-stats/1"}, {"layers", layers}};
}

ActChannelStats ActChannelStats::from_json(const nlohmann::json& j) {
  ActChannelStats out;
  for (const auto& l : j.at("layers")) {
    LayerActStats st;
    st.max_abs = l.at("max_abs").get<std::vector<double>>();
    st.samples = l.at("samples").get<std::size_t>();
    for (double v : st.max_abs) {
      if (!(v >= 0.0)) throw FormatError("activation stats must be non-negative");
    }
    out.layers_[l.at("name").get<std::string>()] = std::move(st);
  }
  return out;
}

void ActChannelStats::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write '" + path + "'");
  out << to_json().dump(1) << '\n';
}

ActChannelStats ActChannelStats::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open '" + path + "'");
  return from_json(nlohmann::json::parse(in));
}

namespace {

class StatsHooks : public LayerHooks {
 public:
  StatsHooks(const Model& model, ActChannelStats& stats, std::size_t samples)
      : model_(model), stats_(stats), samples_(samples) {}

  Var input(Tape&, std::size_t layer, const Var& x) override {
    stats_.observe(model_.layers()[layer].name, x.value(), samples_);
    return x;
  }

 private:
  const Model& model_;
  ActChannelStats& stats_;
  std::size_t samples_;
};

}  // namespace

ActChannelStats calibrate_act_stats(const Model& model, const CalibSet& calib) {
  if (calib.batches.empty()) throw ContractError("calibration needs at least one batch");
  ActChannelStats stats;
  for (const TokenBatch& batch : calib.batches) {
    if (batch.n_seq == 0) throw ContractError("empty calibration batch");
    StatsHooks hooks(model, stats, batch.n_seq);
    Tape tape;
    model.logits(tape, batch, hooks);
  }
  return stats;
}

double epsilon_at(std::size_t i) { return (static_cast<double>(i) - 90.0) / 100.0; }

ScaleCandidateSet candidate_scales(std::span<const double> group, int bits) {
  if (group.empty()) throw ContractError("candidate_scales of an empty group");
  symmetric_grid(bits);
  double amax = 0.0;
  for (double w : group) amax = std::max(amax, std::fabs(w));
  ScaleCandidateSet set;
  if (amax == 0.0) {
    set.epsilons = {0.0};
    set.scales = {kScaleFloor};
    return set;
  }
  const double half = std::ldexp(1.0, bits - 1);
  set.epsilons.reserve(kEpsilonCount);
  set.scales.reserve(kEpsilonCount);
  for (std::size_t i = 0; i < kEpsilonCount; ++i) {
    const double eps = epsilon_at(i);
    set.epsilons.push_back(eps);
    set.scales.push_back(std::max(amax / (half + eps), kScaleFloor));
  }
  return set;
}

double importance_objective(std::span<const double> group, std::span<const double> act_max,
                            int bits, double scale) {
  if (!act_max.empty() && act_max.size() != group.size()) {
    throw DimensionError("activation stats slice does not match the group");
  }
  const IntGrid grid = symmetric_grid(bits);
  double acc = 0.0;
  for (std::size_t j = 0; j < group.size(); ++j) {
    const double q =
        scale * std::clamp(std::nearbyint(group[j] / scale), double(grid.lo), double(grid.hi));
    const double weight = act_max.empty() ? 1.0 : act_max[j] * act_max[j];
    const double e = (group[j] - q) * weight;
    acc += e * e;
  }
  return acc / static_cast<double>(group.size());
}

ScaleSearchResult search_scale(std::span<const double> group, std::span<const double> act_max,
                               int bits) {
  const ScaleCandidateSet set = candidate_scales(group, bits);
  ScaleSearchResult best;
  for (std::size_t i = 0; i < set.scales.size(); ++i) {
    const double obj = importance_objective(group, act_max, bits, set.scales[i]);
    if (i == 0 || obj < best.objective) best = {set.scales[i], i, obj};
  }
  return best;
}

Tensor search_layer_scales(const Tensor& w, std::size_t group_size, int bits,
                           std::span<const double> act_max) {
  const GroupLayout layout(w.shape(), group_size);
  if (!act_max.empty() && act_max.size() != layout.cols()) {
    throw DimensionError("activation stats have " + std::to_string(act_max.size()) +
                         " channels, weight has " + std::to_string(layout.cols()));
  }
  Tensor scales(layout.group_shape());
  for (std::size_t g = 0; g < layout.num_groups(); ++g) {
    const auto group = w.values().subspan(layout.begin(g), layout.length(g));
    const auto stats = act_max.empty()
                           ? std::span<const double>()
                           : act_max.subspan(layout.col_begin(g), layout.length(g));
    scales[g] = search_scale(group, stats, bits).scale;
  }
  return scales;
}

double apply_alpha(double s_init, double alpha) {
  if (!(alpha >= 0.5 && alpha <= 1.5)) {
    throw ContractError("alpha must lie in [0.5, 1.5], got " + std::to_string(alpha));
  }
  return s_init * alpha;
}

}  // namespace lowbit
