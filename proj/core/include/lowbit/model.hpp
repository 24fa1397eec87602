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

// Bundled toy language models.
//
// Both architectures embed tokens, run a sequence of stages and predict the
// next token with cross-entropy. A stage is the unit of block-wise tuning:
// one transformer block (q/k/v/o/up/down projections) or one MLP layer,
// followed by a final head stage (rms_norm + lm_head). Weight layers are
// enumerated in execution order and stored [out x in].
//
// With pretrain_steps > 0 the weight layers are then trained with Adam on
// SyntheticLanguage(vocab, seed) (see calib.hpp); the embedding keeps its
// initial values.

#ifndef LOWBIT_MODEL_HPP_
#define LOWBIT_MODEL_HPP_

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "lowbit/autograd.hpp"
#include "lowbit/tensor.hpp"

namespace lowbit {

enum class Architecture { kMlp, kTinyTransformer };

Architecture parse_architecture(const std::string& name);
std::string architecture_name(Architecture arch);

struct ModelSpec {
  Architecture arch = Architecture::kTinyTransformer;
  std::size_t vocab = 512;
  std::size_t hidden = 128;
  std::size_t heads = 4;
  std::size_t ffn = 512;
  std::size_t n_blocks = 2;
  // MLP only: output width of each hidden layer; the input width is `hidden`.
  std::vector<std::size_t> mlp_dims = {128, 128};
  std::uint64_t seed = 0;
  std::size_t pretrain_steps = 0;

  void validate() const;
  nlohmann::json to_json() const;
  static ModelSpec from_json(const nlohmann::json& j);
};

struct LayerInfo {
  std::string name;
  std::size_t stage = 0;
  std::size_t out_features = 0;
  std::size_t in_features = 0;
  std::uint64_t params() const { return std::uint64_t{out_features} * in_features; }
};

// n_seq sequences of seq_len tokens. The model reads positions [0, L-1) and
// predicts positions [1, L).
struct TokenBatch {
  std::size_t n_seq = 0;
  std::size_t seq_len = 0;
  std::vector<int> tokens;

  std::size_t positions() const { return seq_len - 1; }
  std::vector<int> inputs() const;
  std::vector<int> targets() const;
};

// Interception points used by quantization. The defaults run the model in
// full precision.
class LayerHooks {
 public:
  virtual ~LayerHooks() = default;
  virtual Var weight(Tape& tape, std::size_t /*layer*/, const Tensor& w) {
    return tape.constant(w);
  }
  virtual Var input(Tape& /*tape*/, std::size_t /*layer*/, const Var& x) { return x; }
};

class Model {
 public:
  static Model build(const ModelSpec& spec);

  const ModelSpec& spec() const { return spec_; }
  const std::vector<LayerInfo>& layers() const { return layers_; }
  std::size_t layer_index(const std::string& name) const;
  const Tensor& weight(std::size_t layer) const { return weights_.at(layer); }
  void set_weight(std::size_t layer, Tensor w);
  const Tensor& embedding_table() const { return embedding_; }

  std::size_t num_stages() const { return num_stages_; }
  std::vector<std::size_t> stage_layers(std::size_t stage) const;
  bool is_head_stage(std::size_t stage) const { return stage + 1 == num_stages_; }

  // [n_seq * positions x hidden] hidden states entering stage 0.
  Var embed(Tape& tape, const TokenBatch& batch) const;
  // `positions` is the per-sequence length of the rows of `h`; attention
  // never crosses sequence boundaries.
  Var stage_forward(Tape& tape, std::size_t stage, const Var& h, std::size_t positions,
                    LayerHooks& hooks) const;
  Var logits(Tape& tape, const TokenBatch& batch, LayerHooks& hooks) const;
  Var loss(Tape& tape, const TokenBatch& batch, LayerHooks& hooks) const;

  double loss_value(const TokenBatch& batch) const;
  double loss_value(const TokenBatch& batch, LayerHooks& hooks) const;

 private:
  Var attention(Tape& tape, const Var& q, const Var& k, const Var& v,
                std::size_t positions) const;
  void pretrain();

  ModelSpec spec_;
  std::vector<LayerInfo> layers_;
  std::vector<Tensor> weights_;
  Tensor embedding_;
  std::size_t num_stages_ = 0;
};

}  // namespace lowbit

#endif  // LOWBIT_MODEL_HPP_
