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

// Pre-tuning scale search.
//
// For each group the candidate scales are
//
//   s_i = max|W| / (2^(bits-1) + eps_i),  eps_i = -0.9 + 0.01 i,  i = 0..179
//
// and the chosen scale minimizes
//
//   (1/N) sum_j ((w_j - qdq_s(w_j)) * a_j^2)^2
//
// where a_j is the calibrated max |activation| of input channel j and
// qdq_s is RTN at scale s. Ties go to the smaller eps.

#ifndef LOWBIT_SCALE_INIT_HPP_
#define LOWBIT_SCALE_INIT_HPP_

#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "lowbit/calib.hpp"
#include "lowbit/model.hpp"
#include "lowbit/tensor.hpp"

namespace lowbit {

struct LayerActStats {
  std::vector<double> max_abs;  // one per input channel
  std::size_t samples = 0;
};

// Per-layer, per-input-channel max |activation|.
class ActChannelStats {
 public:
  void observe(const std::string& layer, const Tensor& activations, std::size_t samples);
  // Elementwise max; sample counts add.
  void merge(const ActChannelStats& other);

  bool contains(const std::string& layer) const { return layers_.count(layer) != 0; }
  const LayerActStats& at(const std::string& layer) const;
  const std::map<std::string, LayerActStats>& layers() const { return layers_; }

  nlohmann::json to_json() const;
  static ActChannelStats from_json(const nlohmann::json& j);
  void save(const std::string& path) const;
  static ActChannelStats load(const std::string& path);

  friend bool operator==(const ActChannelStats& a, const ActChannelStats& b) {
    return a.to_json() == b.to_json();
  }

 private:
  std::map<std::string, LayerActStats> layers_;
};

ActChannelStats calibrate_act_stats(const Model& model, const CalibSet& calib);

inline constexpr std::size_t kEpsilonCount = 180;
double epsilon_at(std::size_t i);

struct ScaleCandidateSet {
  std::vector<double> epsilons;
  std::vector<double> scales;
};

ScaleCandidateSet candidate_scales(std::span<const double> group, int bits);

// Importance-weighted objective at one scale. An empty `act_max` means unit
// weights (plain MSE).
double importance_objective(std::span<const double> group, std::span<const double> act_max,
                            int bits, double scale);

struct ScaleSearchResult {
  double scale = 0.0;
  std::size_t index = 0;  // into the candidate set
  double objective = 0.0;
};

ScaleSearchResult search_scale(std::span<const double> group, std::span<const double> act_max,
                               int bits);

// One searched scale per group of a [out x in] weight; `act_max` has one
// entry per input channel or is empty.
Tensor search_layer_scales(const Tensor& w, std::size_t group_size, int bits,
                           std::span<const double> act_max);

// s_init * alpha with alpha restricted to [0.5, 1.5].
double apply_alpha(double s_init, double alpha);

}  // namespace lowbit

#endif  // LOWBIT_SCALE_INIT_HPP_
