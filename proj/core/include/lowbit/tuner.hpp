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

// Block-wise reconstruction of quantized stages.
//
// Each stage is tuned against its full-precision output with signed
// gradient descent on the rounding offsets v and the scale factors
// alpha/beta:
//
//   theta <- clamp(theta - lr * sign(dL/dtheta))
//
// where L drops the k largest squared errors of the batch before summing.

#ifndef LOWBIT_TUNER_HPP_
#define LOWBIT_TUNER_HPP_

#include <cstddef>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "lowbit/allocator.hpp"
#include "lowbit/autograd.hpp"
#include "lowbit/calib.hpp"
#include "lowbit/model.hpp"
#include "lowbit/scheme.hpp"

namespace lowbit {

enum class Recipe { kDefault, kEnhanced };
Recipe parse_recipe(const std::string& name);

struct TuneConfig {
  int steps = 200;
  double lr = 0.0;  // 0 means 1 / steps
  std::size_t batch_size = 8;
  std::size_t seq_len = 64;
  std::size_t calib_samples = 128;
  double trim_fraction = 0.001;
  bool scale_init = true;
  // Feed each stage the outputs of the already-quantized stages before it.
  bool propagate_quantized = true;

  // Default: 200 steps, lr 1/steps, 128 samples. Enhanced: 500 steps,
  // lr 2/steps, 512 samples.
  static TuneConfig recipe(Recipe r);
  double effective_lr() const;
  void validate() const;
  nlohmann::json to_json() const;
};

// Sum of squared errors after dropping the floor(k_frac * N) largest ones.
// Ties among the largest are dropped in index order.
Var trimmed_mse(const Var& q_out, const Tensor& f_out, double k_frac);
double trimmed_mse_value(const Tensor& q_out, const Tensor& f_out, double k_frac);

inline constexpr double kOffsetLimit = 0.5;
inline constexpr double kFactorLo = 0.5;
inline constexpr double kFactorHi = 1.5;

// Quantization state of one weight layer.
struct TunedLayer {
  std::size_t layer = 0;
  std::string name;
  QuantScheme scheme;
  Tensor v;           // shape of W
  Tensor alpha;       // int only, one per group
  Tensor beta;        // int only, one per group
  Tensor init_scale;  // int only; empty selects min/max scales

  static TunedLayer rtn(std::size_t layer, const std::string& name, const QuantScheme& scheme,
                        const Tensor& w);
  UniformQuantParams int_params() const;
  Tensor qdq(const Tensor& w) const;
  // Differentiable qdq w.r.t. the given parameter leaves.
  Var qdq(const Tensor& w, const Var& v_leaf, const Var& alpha_leaf, const Var& beta_leaf) const;
};

struct StageData {
  std::vector<Tensor> inputs;   // per batch, entering the stage
  std::vector<Tensor> targets;  // per batch, full-precision stage output
  std::size_t positions = 0;    // rows per sequence
};

struct StageReport {
  std::size_t stage = 0;
  std::vector<std::string> layers;
  // Mean per-batch trimmed loss over the calibration set.
  double rtn_loss = 0.0;
  double initial_loss = 0.0;
  double final_loss = 0.0;
  // Step losses on the cycling batches.
  double first_step_loss = 0.0;
  double best_step_loss = 0.0;
  int best_step = 0;
  std::vector<double> step_losses;

  nlohmann::json to_json() const;
};

struct TunedStage {
  std::vector<TunedLayer> layers;
  StageReport report;
};

// Initial per-layer state: searched scales when `init_scales[i]` is
// non-empty, alpha = beta = 1 and v = 0 otherwise.
std::vector<TunedLayer> initial_layers(const Model& model, std::size_t stage,
                                       const std::vector<QuantScheme>& schemes,
                                       const std::vector<Tensor>& init_scales);

// Tunes the quantized layers of one stage. `schemes` and `init_scales` have
// one entry per stage layer; identity schemes stay in full precision.
TunedStage tune_block(const Model& model, std::size_t stage, const StageData& data,
                      const std::vector<QuantScheme>& schemes,
                      const std::vector<Tensor>& init_scales, const TuneConfig& cfg);

// Runs a model with per-layer quantized weights and, for MX schemes,
// quantized activations.
class QuantizedHooks : public LayerHooks {
 public:
  explicit QuantizedHooks(std::vector<QuantScheme> schemes) : schemes_(std::move(schemes)) {}
  Var input(Tape& tape, std::size_t layer, const Var& x) override;

 private:
  std::vector<QuantScheme> schemes_;
};

struct QuantizedModel {
  Model model;  // dequantized weights
  std::vector<QuantScheme> schemes;  // one per layer
  std::vector<TunedLayer> layers;    // quantized layers in execution order
  std::vector<StageReport> stages;

  double loss_value(const TokenBatch& batch) const;
  double eval_loss(const CalibSet& eval) const;
};

// One scheme per model layer from an assignment; layers it does not name
// stay in full precision.
std::vector<QuantScheme> schemes_from_assignment(const Model& model, const BitAssignment& a);

QuantizedModel quantize_model(const Model& model, const std::vector<QuantScheme>& schemes,
                              const CalibSet& calib, const TuneConfig& cfg);

double eval_loss(const Model& model, const CalibSet& eval);

}  // namespace lowbit

#endif  // LOWBIT_TUNER_HPP_
