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

#include "lowbit/model.hpp"

#include <cmath>
#include <utility>

#include "lowbit/calib.hpp"
#include "lowbit/errors.hpp"
#include "lowbit/ops.hpp"
#include "lowbit/rng.hpp"

namespace lowbit {

Architecture parse_architecture(const std::string& name) {
  if (name == "mlp") return Architecture::kMlp;
  if (name == "tiny-transformer") return Architecture::kTinyTransformer;
  throw ContractError("unknown architecture '" + name + "' (expected mlp or tiny-transformer)");
}

std::string architecture_name(Architecture arch) {
  return arch == Architecture::kMlp ? "mlp" : "tiny-transformer";
}

void ModelSpec::validate() const {
  if (vocab < 2) throw ContractError("model.vocab must be at least 2");
  if (hidden == 0) throw ContractError("model.hidden must be positive");
  if (arch == Architecture::kTinyTransformer) {
    if (heads == 0 || hidden % heads != 0) {
      throw ContractError("model.heads must divide model.hidden");
    }
    if (ffn == 0) throw ContractError("model.ffn must be positive");
    if (n_blocks == 0) throw ContractError("model.blocks must be positive");
  } else {
    if (mlp_dims.empty()) throw ContractError("model.mlp_dims must list at least one layer");
    for (std::size_t d : mlp_dims) {
      if (d == 0) throw ContractError("model.mlp_dims entries must be positive");
    }
  }
}

nlohmann::json ModelSpec::to_json() const {
  nlohmann::json j;
  j["arch"] = architecture_name(arch);
  j["vocab"] = vocab;
  j["hidden"] = hidden;
  if (arch == Architecture::kTinyTransformer) {
    j["heads"] = heads;
    j["ffn"] = ffn;
    j["blocks"] = n_blocks;
  } else {
    j["mlp_dims"] = mlp_dims;
  }
  j["seed"] = seed;
  j["pretrain_steps"] = pretrain_steps;
  return j;
}

ModelSpec ModelSpec::from_json(const nlohmann::json& j) {
  ModelSpec s;
  s.arch = parse_architecture(j.at("arch").get<std::string>());
  s.vocab = j.at("vocab").get<std::size_t>();
  s.hidden = j.at("hidden").get<std::size_t>();
  if (s.arch == Architecture::kTinyTransformer) {
    s.heads = j.at("heads").get<std::size_t>();
    s.ffn = j.at("ffn").get<std::size_t>();
    s.n_blocks = j.at("blocks").get<std::size_t>();
  } else {
    s.mlp_dims = j.at("mlp_dims").get<std::vector<std::size_t>>();
  }
  s.seed = j.at("seed").get<std::uint64_t>();
  s.pretrain_steps = j.at("pretrain_steps").get<std::size_t>();
  s.validate();
  return s;
}

std::vector<int> TokenBatch::inputs() const {
  std::vector<int> out;
  out.reserve(n_seq * positions());
  for (std::size_t s = 0; s < n_seq; ++s) {
    for (std::size_t t = 0; t + 1 < seq_len; ++t) out.push_back(tokens[s * seq_len + t]);
  }
  return out;
}

std::vector<int> TokenBatch::targets() const {
  std::vector<int> out;
  out.reserve(n_seq * positions());
  for (std::size_t s = 0; s < n_seq; ++s) {
    for (std::size_t t = 1; t < seq_len; ++t) out.push_back(tokens[s * seq_len + t]);
  }
  return out;
}

namespace {

// Gaussian init scaled by gain / sqrt(in), with sparse large entries so the
// per-group maxima are set by outliers the way they are in real checkpoints.
Tensor init_weight(Rng& rng, std::size_t out, std::size_t in, double gain) {
  Tensor w({out, in});
  const double sd = gain / std::sqrt(static_cast<double>(in));
  for (double& x : w.values()) {
    x = rng.normal() * sd;
    if (rng.uniform() < 0.01) x *= 4.0;
  }
  return w;
}

class TrainHooks : public LayerHooks {
 public:
  explicit TrainHooks(std::size_t n) : leaves(n) {}
  Var weight(Tape& tape, std::size_t layer, const Tensor& w) override {
    leaves[layer] = tape.parameter(w);
    return leaves[layer];
  }
  std::vector<Var> leaves;
};

constexpr std::size_t kPretrainBatch = 8;
constexpr std::size_t kPretrainSeqLen = 32;
constexpr double kPretrainLr = 1e-2;
constexpr double kBeta1 = 0.9;
constexpr double kBeta2 = 0.999;
constexpr double kAdamEps = 1e-8;

}  // namespace

Model Model::build(const ModelSpec& spec) {
  spec.validate();
  Model m;
  m.spec_ = spec;
  Rng rng(spec.seed);

  // Channel-wise magnitudes vary log-normally, giving activations the
  // per-input-channel outliers the importance weighting is meant to see.
  m.embedding_ = Tensor({spec.vocab, spec.hidden});
  std::vector<double> channel_scale(spec.hidden);
  for (double& c : channel_scale) c = std::exp(0.75 * rng.normal());
  for (std::size_t t = 0; t < spec.vocab; ++t) {
    for (std::size_t c = 0; c < spec.hidden; ++c) {
      m.embedding_.at(t, c) = rng.normal() * channel_scale[c];
    }
  }

  auto add_layer = [&](std::string name, std::size_t stage, std::size_t out, std::size_t in) {
    const double gain = std::exp(rng.uniform(-0.7, 0.7));
    m.layers_.push_back(LayerInfo{std::move(name), stage, out, in});
    m.weights_.push_back(init_weight(rng, out, in, gain));
  };

  std::size_t head_in = spec.hidden;
  if (spec.arch == Architecture::kTinyTransformer) {
    const std::size_t h = spec.hidden;
    for (std::size_t b = 0; b < spec.n_blocks; ++b) {
      const std::string p = "block" + std::to_string(b) + ".";
      add_layer(p + "q_proj", b, h, h);
      add_layer(p + "k_proj", b, h, h);
      add_layer(p + "v_proj", b, h, h);
      add_layer(p + "o_proj", b, h, h);
      add_layer(p + "up_proj", b, spec.ffn, h);
      add_layer(p + "down_proj", b, h, spec.ffn);
    }
    m.num_stages_ = spec.n_blocks + 1;
  } else {
    std::size_t in = spec.hidden;
    for (std::size_t i = 0; i < spec.mlp_dims.size(); ++i) {
      add_layer("fc" + std::to_string(i), i, spec.mlp_dims[i], in);
      in = spec.mlp_dims[i];
    }
    head_in = in;
    m.num_stages_ = spec.mlp_dims.size() + 1;
  }
  add_layer("lm_head", m.num_stages_ - 1, spec.vocab, head_in);
  if (spec.pretrain_steps > 0) m.pretrain();
  return m;
}

void Model::pretrain() {
  const SyntheticLanguage language(spec_.vocab, spec_.seed);
  const std::size_t n = weights_.size();
  std::vector<Tensor> m1, m2;
  for (const Tensor& w : weights_) {
    m1.emplace_back(w.shape());
    m2.emplace_back(w.shape());
  }
  for (std::size_t step = 0; step < spec_.pretrain_steps; ++step) {
    TokenBatch batch;
    batch.n_seq = kPretrainBatch;
    batch.seq_len = kPretrainSeqLen;
    for (const auto& seq : language.sample(kPretrainBatch, kPretrainSeqLen,
                                           spec_.seed * 0x9e3779b97f4a7c15ULL + step)) {
      batch.tokens.insert(batch.tokens.end(), seq.begin(), seq.end());
    }
    Tape tape;
    TrainHooks hooks(n);
    const Gradients grads = tape.backward(loss(tape, batch, hooks));
    const double t = static_cast<double>(step + 1);
    const double c1 = 1.0 - std::pow(kBeta1, t);
    const double c2 = 1.0 - std::pow(kBeta2, t);
    for (std::size_t l = 0; l < n; ++l) {
      const Tensor g = grads.of(hooks.leaves[l]);
      Tensor& w = weights_[l];
      for (std::size_t i = 0; i < w.size(); ++i) {
        m1[l][i] = kBeta1 * m1[l][i] + (1.0 - kBeta1) * g[i];
        m2[l][i] = kBeta2 * m2[l][i] + (1.0 - kBeta2) * g[i] * g[i];
        w[i] -= kPretrainLr * (m1[l][i] / c1) / (std::sqrt(m2[l][i] / c2) + kAdamEps);
      }
    }
  }
}

std::size_t Model::layer_index(const std::string& name) const {
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    if (layers_[i].name == name) return i;
  }
  throw ContractError("model has no layer named '" + name + "'");
}

void Model::set_weight(std::size_t layer, Tensor w) {
  if (w.shape() != weights_.at(layer).shape()) {
    throw DimensionError("replacement weight for " + layers_[layer].name + " has shape " +
                         shape_string(w.shape()));
  }
  weights_[layer] = std::move(w);
}

std::vector<std::size_t> Model::stage_layers(std::size_t stage) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    if (layers_[i].stage == stage) out.push_back(i);
  }
  return out;
}

Var Model::embed(Tape& tape, const TokenBatch& batch) const {
  if (batch.seq_len < 2) throw ContractError("sequences need at least two tokens");
  if (batch.tokens.size() != batch.n_seq * batch.seq_len) {
    throw DimensionError("token batch holds the wrong number of tokens");
  }
  const std::vector<int> ids = batch.inputs();
  return embedding(tape.constant(embedding_), ids);
}

Var Model::attention(Tape& tape, const Var& q, const Var& k, const Var& v,
                     std::size_t positions) const {
  (void)tape;
  const std::size_t n_seq = q.shape()[0] / positions;
  const std::size_t dh = spec_.hidden / spec_.heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<Var> sequences;
  sequences.reserve(n_seq);
  for (std::size_t s = 0; s < n_seq; ++s) {
    const Var qs = slice_rows(q, s * positions, positions);
    const Var ks = slice_rows(k, s * positions, positions);
    const Var vs = slice_rows(v, s * positions, positions);
    std::vector<Var> heads;
    heads.reserve(spec_.heads);
    for (std::size_t h = 0; h < spec_.heads; ++h) {
      const Var qh = slice_cols(qs, h * dh, dh);
      const Var kh = slice_cols(ks, h * dh, dh);
      const Var vh = slice_cols(vs, h * dh, dh);
      const Var scores = scale(matmul(qh, transpose(kh)), inv_sqrt);
      heads.push_back(matmul(causal_softmax(scores), vh));
    }
    sequences.push_back(concat_cols(heads));
  }
  return concat_rows(sequences);
}

Var Model::stage_forward(Tape& tape, std::size_t stage, const Var& h, std::size_t positions,
                         LayerHooks& hooks) const {
  if (stage >= num_stages_) throw ContractError("stage index out of range");
  if (positions == 0 || h.shape()[0] % positions != 0) {
    throw DimensionError("hidden-state rows are not a whole number of sequences");
  }
  const std::vector<std::size_t> ids = stage_layers(stage);
  auto proj = [&](std::size_t layer, const Var& x) {
    return linear(hooks.input(tape, layer, x), hooks.weight(tape, layer, weights_[layer]));
  };

  if (is_head_stage(stage)) {
    return proj(ids[0], rms_norm(h));
  }
  if (spec_.arch == Architecture::kMlp) return gelu(proj(ids[0], rms_norm(h)));

  const Var x = rms_norm(h);
  const Var q = proj(ids[0], x);
  const Var k = proj(ids[1], x);
  const Var v = proj(ids[2], x);
  const Var attn = proj(ids[3], attention(tape, q, k, v, positions));
  const Var h1 = add(h, attn);
  const Var up = gelu(proj(ids[4], rms_norm(h1)));
  return add(h1, proj(ids[5], up));
}

Var Model::logits(Tape& tape, const TokenBatch& batch, LayerHooks& hooks) const {
  Var h = embed(tape, batch);
  for (std::size_t s = 0; s < num_stages_; ++s) {
    h = stage_forward(tape, s, h, batch.positions(), hooks);
  }
  return h;
}

Var Model::loss(Tape& tape, const TokenBatch& batch, LayerHooks& hooks) const {
  const std::vector<int> targets = batch.targets();
  return cross_entropy(logits(tape, batch, hooks), targets);
}

double Model::loss_value(const TokenBatch& batch) const {
  LayerHooks identity;
  return loss_value(batch, identity);
}

double Model::loss_value(const TokenBatch& batch, LayerHooks& hooks) const {
  Tape tape;
  return loss(tape, batch, hooks).value().item();
}

}  // namespace lowbit
