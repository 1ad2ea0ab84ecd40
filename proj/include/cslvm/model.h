// Copyright 2026 The cslvm Authors.
//
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

// Network for the cross-sentence latent variable model.
//
//   encoder     m_s = LSTM(x_s) final state
//   code head   mu_s = normalize(W m_s + b)
//   decoder     s_i = LSTM([w_{i-1}; y; z], s_{i-1}),  p(w_i) = softmax(s_i E' + b)
//   classifier  softmax(MLP(fuse(h_1, h_2)))
//
// E is the word embedding table, reused as the output projection. The
// posterior encoder and the classifier encoder share one set of weights
// unless tying is turned off.

#ifndef CSLVM_MODEL_H_
#define CSLVM_MODEL_H_

#include <array>
#include <cstddef>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cslvm/autograd.h"

namespace cslvm {

inline constexpr std::size_t kPadId = 0;
inline constexpr std::size_t kUnkId = 1;
inline constexpr std::size_t kStartId = 2;
inline constexpr std::size_t kEndId = 3;
inline constexpr std::size_t kNumSpecials = 4;
inline constexpr std::size_t kMaxSequenceLength = 64;

enum class Fusion { kNli, kSymmetric };

std::string_view fusion_name(Fusion f);
Fusion parse_fusion(std::string_view s);

struct ModelConfig {
  std::size_t vocab_size = 0;
  std::size_t embed_dim = 300;
  std::size_t hidden_dim = 300;
  std::size_t label_dim = 50;
  std::size_t latent_dim = 64;
  std::size_t classifier_hidden = 1200;
  std::size_t num_labels = 3;
  Fusion fusion = Fusion::kNli;
  bool tie_encoders = true;

  // The tied output projection needs embed_dim == hidden_dim.
  void validate() const;
};

// Padded token ids, time-major: ids[t * batch + b]. Rows shorter than
// max_len hold kPadId past their length.
struct SequenceBatch {
  std::size_t batch = 0;
  std::size_t max_len = 0;
  std::vector<std::size_t> ids;
  std::vector<std::size_t> lengths;

  // Throws DomainError on an empty batch or an empty sequence.
  static SequenceBatch from(std::span<const std::vector<std::size_t>> seqs,
                            std::size_t extra_pad = 0);
  std::span<const std::size_t> step(std::size_t t) const {
    return {ids.data() + t * batch, batch};
  }
  std::vector<std::size_t> row(std::size_t b) const;
};

enum class ParamGroup {
  kGenerator,   // decoder, word and label embeddings, output bias
  kPosterior,   // generative encoder, code head
  kClassifier,  // classifier encoder, fusion MLP
  kConstraint,  // log sigma^2 weights
};

struct LstmParams {
  ag::Parameter* weight = nullptr;  // [in + hidden, 4 hidden], gates i f g o
  ag::Parameter* bias = nullptr;    // [1, 4 hidden]
};

class Model {
 public:
  Model(const ModelConfig& config, Rng& rng);
  Model(const Model& other);
  Model& operator=(const Model& other);
  Model(Model&&) = default;
  Model& operator=(Model&&) = default;

  const ModelConfig& config() const { return config_; }

  // Distinct parameters in construction order; a tied slot appears once.
  const std::vector<ag::Parameter*>& parameters() const { return order_; }
  ag::Parameter& param(std::string_view name) const;
  bool in_group(const ag::Parameter* p, ParamGroup g) const;
  std::vector<ag::Parameter*> group(ParamGroup g) const;
  std::size_t num_values() const;

  ag::Parameter* word_embedding = nullptr;
  ag::Parameter* label_embedding = nullptr;
  LstmParams encoder;
  LstmParams classifier_encoder;  // aliases `encoder` when tied
  ag::Parameter* code_weight = nullptr;
  ag::Parameter* code_bias = nullptr;
  LstmParams decoder;
  ag::Parameter* output_bias = nullptr;
  ag::Parameter* mlp_weight = nullptr;
  ag::Parameter* mlp_bias = nullptr;
  ag::Parameter* out_weight = nullptr;
  ag::Parameter* out_bias = nullptr;
  std::array<ag::Parameter*, 3> log_sigma2{};  // y, z, mu

 private:
  ag::Parameter* add(const std::string& name, Tensor value);
  void build(Rng& rng);
  void bind();

  ModelConfig config_;
  std::vector<std::unique_ptr<ag::Parameter>> storage_;
  std::vector<ag::Parameter*> order_;
};

// Everything a forward pass needs besides the inputs.
struct Forward {
  const Model& model;
  ag::Tape& tape;
  bool train = false;
  double word_dropout = 0.0;
  double classifier_dropout = 0.0;
  Rng* rng = nullptr;  // required when train is set and a dropout rate is > 0

  ag::Var p(const ag::Parameter* param) const { return tape.param(*param); }
  ag::Var drop(ag::Var x, double rate) const;
};

enum class EncoderRole { kPosterior, kClassifier };

struct LstmState {
  ag::Var h;
  ag::Var c;
};

LstmState zero_state(const Forward& f, std::size_t rows);
LstmState lstm_step(const Forward& f, const LstmParams& lstm, ag::Var x, const LstmState& s);

// Final hidden state per row, [B, H]. Rows stop updating past their length.
ag::Var encode(const Forward& f, const SequenceBatch& seqs, EncoderRole role);

// Same recurrence over soft inputs: one [B, E] embedding per step.
ag::Var encode_embedded(const Forward& f, std::span<const ag::Var> inputs,
                        std::span<const std::size_t> lengths, EncoderRole role);

// normalize(m_s W + b), [B, m].
ag::Var posterior_mu(const Forward& f, ag::Var m_s);

ag::Var label_vectors(const Forward& f, std::span<const std::size_t> labels);

// One decoder step: logits over the vocabulary, [B, V].
ag::Var decoder_step(const Forward& f, ag::Var word, ag::Var label, ag::Var z, LstmState& state);

// log p(x_t | y, z) per row, [B, 1], with teacher forcing from the start
// token and the end token as final target.
ag::Var decoder_log_likelihood(const Forward& f, const SequenceBatch& targets, ag::Var label,
                               ag::Var z);

ag::Var fuse(const Forward& f, ag::Var h1, ag::Var h2);
ag::Var classifier_logits(const Forward& f, ag::Var h1, ag::Var h2);

// q(y | x1, x2), [B, K].
ag::Var classify(const Forward& f, const SequenceBatch& x1, const SequenceBatch& x2);

}  // namespace cslvm

#endif  // CSLVM_MODEL_H_
