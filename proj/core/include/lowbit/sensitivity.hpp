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

// First-order loss-change scores per layer and quantization option.
//
// Each probe quantizes exactly one layer with RTN and leaves the rest in full
// precision. For weight-only schemes the score is
//
//   sum_ij |dL/dW_q (i,j) * (W_f - W_q)(i,j)|
//
// with the gradient taken at the quantized weight. For schemes that also
// quantize activations, the weights are quantized for the forward pass but
// the score only uses the activation term |dL/dA_q * (A_f - A_q)|. Scores
// are averaged over calibration batches.

#ifndef LOWBIT_SENSITIVITY_HPP_
#define LOWBIT_SENSITIVITY_HPP_

#include <cstddef>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "lowbit/calib.hpp"
#include "lowbit/model.hpp"
#include "lowbit/scheme.hpp"

namespace lowbit {

struct SensitivityOptions {
  // Take gradients at the full-precision point, which is cheaper to share
  // but less faithful.
  bool grad_at_full_precision = false;
};

double delta_loss_weight_only(const Model& model, std::size_t layer, const QuantScheme& scheme,
                              const CalibSet& calib, const SensitivityOptions& opts = {});
double delta_loss_weight_act(const Model& model, std::size_t layer, const QuantScheme& scheme,
                             const CalibSet& calib, const SensitivityOptions& opts = {});
// Picks the form matching the scheme. Identity schemes score 0.
double delta_loss(const Model& model, std::size_t layer, const QuantScheme& scheme,
                  const CalibSet& calib, const SensitivityOptions& opts = {});

struct LayerSensitivity {
  std::string name;
  std::uint64_t params = 0;
  std::map<int, double> scores;  // bits -> score
};

struct SensitivityReport {
  SchemeFamily family = SchemeFamily::kIntSym;
  std::size_t group_size = 32;
  std::vector<int> options;  // ascending
  std::vector<LayerSensitivity> layers;
  std::size_t calib_samples = 0;
  std::size_t calib_seq_len = 0;

  QuantScheme scheme(int bits) const { return {family, bits, group_size}; }
  std::size_t layer_index(const std::string& name) const;
  double score(std::size_t layer, int bits) const;

  nlohmann::json to_json() const;
  static SensitivityReport from_json(const nlohmann::json& j);
  void save(const std::string& path) const;
  static SensitivityReport load(const std::string& path);
};

SensitivityReport build_report(const Model& model, const std::vector<int>& options,
                               SchemeFamily family, std::size_t group_size,
                               const CalibSet& calib, const SensitivityOptions& opts = {});

}  // namespace lowbit

#endif  // LOWBIT_SENSITIVITY_HPP_
