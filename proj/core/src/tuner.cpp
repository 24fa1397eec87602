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

#include "lowbit/tuner.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "lowbit/errors.hpp"
#include "lowbit/mx.hpp"
#include "lowbit/ops.hpp"
#include "lowbit/scale_init.hpp"

namespace lowbit {
namespace {

// Indices of the k largest squared errors, ties broken by lower index.
std::vector<bool> dropped_mask(const std::vector<double>& err, std::size_t k) {
  std::vector<bool> drop(err.size(), false);
  if (k == 0) return drop;
  std::vector<std::size_t> order(err.size());
  std::iota(order.begin(), order.end(), 0);
  const auto larger = [&](std::size_t a, std::size_t b) {
    return err[a] != err[b] ? err[a] > err[b] : a < b;
  };
  std::nth_element(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k - 1), order.end(),
                   larger);
  for (std::size_t i = 0; i < k; ++i) drop[order[i]] = true;
  return drop;
}

std::size_t trim_count(std::size_t n, double k_frac) {
  if (!(k_frac >= 0.0 && k_frac < 1.0)) {
    throw ContractError("trim fraction must lie in [0, 1)");
  }
  return static_cast<std::size_t>(std::floor(k_frac * static_cast<double>(n)));
}

double sign(double g) { return g > 0.0 ? 1.0 : (g < 0.0 ? -1.0 : 0.0); }

void sign_step(Tensor& theta, const Tensor& grad, double lr, double lo, double hi) {
  for (std::size_t i = 0; i < theta.size(); ++i) {
    theta[i] = std::clamp(theta[i] - lr * sign(grad[i]), lo, hi);
  }
}

// Stage forward with per-layer weight overrides and activation qdq.
class StageHooks : public LayerHooks {
 public:
  explicit StageHooks(const std::map<std::size_t, QuantScheme>& schemes) : schemes_(schemes) {}

  Var weight(Tape& tape, std::size_t layer, const Tensor& w) override {
    const auto it = overrides_.find(layer);
    return it == overrides_.end() ? tape.constant(w) : it->second;
  }

  Var input(Tape&, std::size_t layer, const Var& x) override {
    const auto it = schemes_.find(layer);
    if (it == schemes_.end() || !it->second.quantizes_activations()) return x;
    return mx_qdq_ste(x, it->second.mx_format());
  }

  void set(std::size_t layer, const Var& w) { overrides_.insert_or_assign(layer, w); }

 private:
  const std::map<std::size_t, QuantScheme>& schemes_;
  std::map<std::size_t, Var> overrides_;
};

std::string join_names(const std::vector<TunedLayer>& layers) {
  std::string s;
  for (const auto& l : layers) s += (s.empty() ? "" : ", ") + l.name;
  return s;
}

}  // namespace

Recipe parse_recipe(const std::string& name) {
  if (name == "default") return Recipe::kDefault;
  if (name == "enhanced") return Recipe::kEnhanced;
  throw ContractError("unknown recipe '" + name + "' (expected default or enhanced)");
}

TuneConfig TuneConfig::recipe(Recipe r) {
  TuneConfig c;
  if (r == Recipe::kEnhanced) {
    c.steps = 500;
    c.lr = 2.0 / 500;
    c.calib_samples = 512;
  }
  return c;
}

double TuneConfig::effective_lr() const {
  if (lr > 0.0) return lr;
  return steps > 0 ? 1.0 / steps : 0.0;
}

void TuneConfig::validate() const {
  if (steps < 0) throw ConfigError("tune.steps", "must be >= 0");
  if (lr < 0.0 || !std::isfinite(lr)) throw ConfigError("tune.lr", "must be positive (0 = 1/steps)");
  if (batch_size == 0) throw ConfigError("tune.batch_size", "must be positive");
  if (seq_len < 2) throw ConfigError("tune.seq_len", "must be at least 2");
  if (calib_samples == 0) throw ConfigError("tune.calib_samples", "must be positive");
  if (!(trim_fraction >= 0.0 && trim_fraction < 1.0)) {
    throw ConfigError("tune.trim_fraction", "must lie in [0, 1)");
  }
}

nlohmann::json TuneConfig::to_json() const {
  return {{"steps", steps},
          {"lr", effective_lr()},
          {"batch_size", batch_size},
          {"seq_len", seq_len},
          {"calib_samples", calib_samples},
          {"trim_fraction", trim_fraction},
          {"scale_init", scale_init},
          {"propagate_quantized", propagate_quantized}};
}

double trimmed_mse_value(const Tensor& q_out, const Tensor& f_out, double k_frac) {
  if (q_out.shape() != f_out.shape()) {
    throw DimensionError("trimmed_mse: " + shape_string(q_out.shape()) + " vs " +
                         shape_string(f_out.shape()));
  }
  std::vector<double> err(q_out.size());
  for (std::size_t i = 0; i < err.size(); ++i) {
    const double d = q_out[i] - f_out[i];
    err[i] = d * d;
  }
  const std::vector<bool> drop = dropped_mask(err, trim_count(err.size(), k_frac));
  double acc = 0.0;
  for (std::size_t i = 0; i < err.size(); ++i) {
    if (!drop[i]) acc += err[i];
  }
  return acc;
}

Var trimmed_mse(const Var& q_out, const Tensor& f_out, double k_frac) {
  const Tensor& q = q_out.value();
  if (q.shape() != f_out.shape()) {
    throw DimensionError("trimmed_mse: " + shape_string(q.shape()) + " vs " +
                         shape_string(f_out.shape()));
  }
  std::vector<double> err(q.size());
  for (std::size_t i = 0; i < err.size(); ++i) {
    const double d = q[i] - f_out[i];
    err[i] = d * d;
  }
  std::vector<bool> drop = dropped_mask(err, trim_count(err.size(), k_frac));
  double acc = 0.0;
  for (std::size_t i = 0; i < err.size(); ++i) {
    if (!drop[i]) acc += err[i];
  }
  return q_out.tape().record(
      Tensor::scalar(acc), {q_out},
      [f_out, drop = std::move(drop)](const BackwardContext& ctx) {
        const double g = ctx.grad_out()[0];
        const Tensor& q = ctx.input(0);
        Tensor& gq = *ctx.input_grad(0);
        for (std::size_t i = 0; i < gq.size(); ++i) {
          if (!drop[i]) gq[i] += 2.0 * (q[i] - f_out[i]) * g;
        }
      });
}

TunedLayer TunedLayer::rtn(std::size_t layer, const std::string& name, const QuantScheme& scheme,
                           const Tensor& w) {
  TunedLayer t;
  t.layer = layer;
  t.name = name;
  t.scheme = scheme;
  t.v = Tensor(w.shape());
  if (scheme.family == SchemeFamily::kIntSym) {
    const GroupLayout layout(w.shape(), scheme.group_size);
    t.alpha = Tensor::full(layout.group_shape(), 1.0);
    t.beta = Tensor::full(layout.group_shape(), 1.0);
  }
  return t;
}

UniformQuantParams TunedLayer::int_params() const {
  UniformQuantParams p;
  p.bits = scheme.bits;
  p.group_size = scheme.group_size;
  p.v = v;
  p.alpha = alpha;
  p.beta = beta;
  p.init_scale = init_scale;
  return p;
}

Tensor TunedLayer::qdq(const Tensor& w) const {
  if (scheme.is_identity()) return w;
  if (scheme.family == SchemeFamily::kIntSym) return uniform_qdq(w, int_params());
  const MxBlockFormat fmt = scheme.mx_format();
  return mx_dequantize(mx_quantize_with_offset(w, v, fmt), w.shape(), fmt);
}

Var TunedLayer::qdq(const Tensor& w, const Var& v_leaf, const Var& alpha_leaf,
                    const Var& beta_leaf) const {
  if (scheme.family == SchemeFamily::kIntSym) {
    return uniform_qdq(w, v_leaf, alpha_leaf, beta_leaf, int_params());
  }
  return mx_qdq_tunable(w, v_leaf, scheme.mx_format());
}

nlohmann::json StageReport::to_json() const {
  return {{"stage", stage},
          {"layers", layers},
          {"rtn_loss", rtn_loss},
          {"initial_loss", initial_loss},
          {"final_loss", final_loss},
          {"first_step_loss", first_step_loss},
          {"best_step_loss", best_step_loss},
          {"best_step", best_step}};
}

std::vector<TunedLayer> initial_layers(const Model& model, std::size_t stage,
                                       const std::vector<QuantScheme>& schemes,
                                       const std::vector<Tensor>& init_scales) {
  const std::vector<std::size_t> ids = model.stage_layers(stage);
  if (schemes.size() != ids.size() || init_scales.size() != ids.size()) {
    throw ContractError("need one scheme and one init entry per stage layer");
  }
  std::vector<TunedLayer> out;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    schemes[i].validate();
    if (schemes[i].is_identity()) continue;
    TunedLayer t =
        TunedLayer::rtn(ids[i], model.layers()[ids[i]].name, schemes[i], model.weight(ids[i]));
    if (!init_scales[i].empty()) {
      if (schemes[i].family != SchemeFamily::kIntSym) {
        throw ContractError("searched scales apply to integer schemes only");
      }
      if (init_scales[i].size() != t.alpha.size()) {
        throw DimensionError("init scales for " + t.name + " need one value per group");
      }
      t.init_scale = init_scales[i];
    }
    out.push_back(std::move(t));
  }
  return out;
}

TunedStage tune_block(const Model& model, std::size_t stage, const StageData& data,
                      const std::vector<QuantScheme>& schemes,
                      const std::vector<Tensor>& init_scales, const TuneConfig& cfg) {
  cfg.validate();
  if (data.inputs.empty() || data.inputs.size() != data.targets.size()) {
    throw ContractError("stage data needs matching, nonempty inputs and targets");
  }
  TunedStage result;
  result.layers = initial_layers(model, stage, schemes, init_scales);
  result.report.stage = stage;
  for (const auto& l : result.layers) result.report.layers.push_back(l.name);
  if (result.layers.empty()) return result;

  std::map<std::size_t, QuantScheme> by_layer;
  for (const auto& l : result.layers) by_layer.emplace(l.layer, l.scheme);

  const auto mean_loss = [&](const std::vector<TunedLayer>& layers) {
    double acc = 0.0;
    for (std::size_t b = 0; b < data.inputs.size(); ++b) {
      Tape tape;
      StageHooks hooks(by_layer);
      for (const auto& l : layers) hooks.set(l.layer, tape.constant(l.qdq(model.weight(l.layer))));
      const Var out =
          model.stage_forward(tape, stage, tape.constant(data.inputs[b]), data.positions, hooks);
      acc += trimmed_mse_value(out.value(), data.targets[b], cfg.trim_fraction);
    }
    return acc / static_cast<double>(data.inputs.size());
  };

  std::vector<TunedLayer> rtn;
  for (const auto& l : result.layers) {
    rtn.push_back(TunedLayer::rtn(l.layer, l.name, l.scheme, model.weight(l.layer)));
  }
  StageReport& rep = result.report;
  rep.rtn_loss = mean_loss(rtn);
  rep.initial_loss = mean_loss(result.layers);

  const double lr = cfg.effective_lr();
  std::vector<TunedLayer> current = result.layers;
  std::vector<TunedLayer> start = result.layers;
  for (int step = 0; step < cfg.steps; ++step) {
    const std::size_t b = static_cast<std::size_t>(step) % data.inputs.size();
    Tape tape;
    StageHooks hooks(by_layer);
    struct Leaves {
      Var v, alpha, beta;
    };
    std::vector<Leaves> leaves;
    for (const auto& l : current) {
      const bool is_int = l.scheme.family == SchemeFamily::kIntSym;
      Leaves lv{tape.parameter(l.v), is_int ? tape.parameter(l.alpha) : tape.constant(Tensor()),
                is_int ? tape.parameter(l.beta) : tape.constant(Tensor())};
      hooks.set(l.layer, l.qdq(model.weight(l.layer), lv.v, lv.alpha, lv.beta));
      leaves.push_back(lv);
    }
    const Var out =
        model.stage_forward(tape, stage, tape.constant(data.inputs[b]), data.positions, hooks);
    const Var loss = trimmed_mse(out, data.targets[b], cfg.trim_fraction);
    const double value = loss.value().item();
    if (!std::isfinite(value)) {
      std::string culprit = join_names(current);
      for (const auto& l : current) {
        if (!l.qdq(model.weight(l.layer)).all_finite()) {
          culprit = l.name;
          break;
        }
      }
      throw NumericError("non-finite trimmed loss at step " + std::to_string(step) +
                         " of stage " + std::to_string(stage) + " (layer " + culprit + ")");
    }
    rep.step_losses.push_back(value);
    if (step == 0 || value < rep.best_step_loss) {
      rep.best_step_loss = value;
      rep.best_step = step;
      result.layers = current;
    }
    if (step == 0) rep.first_step_loss = value;

    const Gradients grads = tape.backward(loss);
    for (std::size_t i = 0; i < current.size(); ++i) {
      TunedLayer& l = current[i];
      sign_step(l.v, grads.of(leaves[i].v), lr, -kOffsetLimit, kOffsetLimit);
      if (l.scheme.family == SchemeFamily::kIntSym) {
        sign_step(l.alpha, grads.of(leaves[i].alpha), lr, kFactorLo, kFactorHi);
        sign_step(l.beta, grads.of(leaves[i].beta), lr, kFactorLo, kFactorHi);
      }
    }
  }
  rep.final_loss = rep.initial_loss;
  if (cfg.steps > 0) {
    // The best step is chosen on single batches; keep the starting point if
    // it is still better over the whole calibration set.
    const double tuned = mean_loss(result.layers);
    if (tuned <= rep.initial_loss) {
      rep.final_loss = tuned;
    } else {
      result.layers = std::move(start);
    }
  }
  return result;
}

Var QuantizedHooks::input(Tape&, std::size_t layer, const Var& x) {
  if (layer >= schemes_.size() || !schemes_[layer].quantizes_activations()) return x;
  return mx_qdq_ste(x, schemes_[layer].mx_format());
}

double QuantizedModel::loss_value(const TokenBatch& batch) const {
  QuantizedHooks hooks(schemes);
  return model.loss_value(batch, hooks);
}

namespace {

template <typename LossFn>
double weighted_eval(const CalibSet& eval, LossFn&& loss) {
  if (eval.batches.empty()) throw ContractError("evaluation needs at least one batch");
  double acc = 0.0;
  double count = 0.0;
  for (const TokenBatch& b : eval.batches) {
    const double n = static_cast<double>(b.n_seq * b.positions());
    acc += loss(b) * n;
    count += n;
  }
  return acc / count;
}

}  // namespace

double QuantizedModel::eval_loss(const CalibSet& eval) const {
  return weighted_eval(eval, [&](const TokenBatch& b) { return loss_value(b); });
}

double eval_loss(const Model& model, const CalibSet& eval) {
  return weighted_eval(eval, [&](const TokenBatch& b) { return model.loss_value(b); });
}

std::vector<QuantScheme> schemes_from_assignment(const Model& model, const BitAssignment& a) {
  for (const auto& name : a.names) model.layer_index(name);
  for (const auto& name : a.excluded) model.layer_index(name);
  std::vector<QuantScheme> out;
  for (const auto& l : model.layers()) {
    QuantScheme s = a.scheme_for(l.name);
    s.validate();
    out.push_back(s);
  }
  return out;
}

QuantizedModel quantize_model(const Model& model, const std::vector<QuantScheme>& schemes,
                              const CalibSet& calib, const TuneConfig& cfg) {
  cfg.validate();
  if (schemes.size() != model.layers().size()) {
    throw ContractError("need one scheme per model layer");
  }
  if (calib.batches.empty()) throw ContractError("tuning needs at least one calibration batch");
  for (const auto& s : schemes) s.validate();

  const bool tuning = cfg.steps > 0;
  bool any_int = false;
  for (const auto& s : schemes) {
    any_int = any_int || (!s.is_identity() && s.family == SchemeFamily::kIntSym);
  }
  ActChannelStats stats;
  if (tuning && cfg.scale_init && any_int) stats = calibrate_act_stats(model, calib);

  QuantizedModel q{model, schemes, {}, {}};
  QuantizedHooks qhooks(schemes);
  LayerHooks fp_hooks;

  std::vector<Tensor> h_fp;
  for (const TokenBatch& b : calib.batches) {
    Tape tape;
    h_fp.push_back(model.embed(tape, b).value());
  }
  std::vector<Tensor> h_q = h_fp;
  const std::size_t positions = calib.batches.front().positions();

  for (std::size_t stage = 0; stage < model.num_stages(); ++stage) {
    StageData data;
    data.positions = positions;
    for (const Tensor& h : h_fp) {
      Tape tape;
      data.targets.push_back(
          model.stage_forward(tape, stage, tape.constant(h), positions, fp_hooks).value());
    }
    data.inputs = cfg.propagate_quantized ? h_q : h_fp;

    const std::vector<std::size_t> ids = model.stage_layers(stage);
    std::vector<QuantScheme> stage_schemes;
    std::vector<Tensor> init;
    for (std::size_t id : ids) {
      const QuantScheme& s = schemes[id];
      stage_schemes.push_back(s);
      if (tuning && cfg.scale_init && !s.is_identity() && s.family == SchemeFamily::kIntSym) {
        init.push_back(search_layer_scales(model.weight(id), s.group_size, s.bits,
                                           stats.at(model.layers()[id].name).max_abs));
      } else {
        init.emplace_back();
      }
    }

    TunedStage tuned = tune_block(model, stage, data, stage_schemes, init, cfg);
    for (const TunedLayer& l : tuned.layers) {
      q.model.set_weight(l.layer, l.qdq(model.weight(l.layer)));
      q.layers.push_back(l);
    }
    q.stages.push_back(std::move(tuned.report));

    if (stage + 1 < model.num_stages()) {
      for (std::size_t b = 0; b < h_q.size(); ++b) {
        Tape tape;
        h_q[b] = q.model.stage_forward(tape, stage, tape.constant(h_q[b]), positions, qhooks)
                     .value();
      }
      h_fp = std::move(data.targets);
    }
  }
  return q;
}

}  // namespace lowbit
