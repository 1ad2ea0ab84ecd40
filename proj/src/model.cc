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

#include "cslvm/model.h"

#include <algorithm>
#include <cmath>

#include "cslvm/error.h"

namespace cslvm {

using ag::Var;

std::string_view fusion_name(Fusion f) { return f == Fusion::kNli ? "nli" : "symmetric"; }

Fusion parse_fusion(std::string_view s) {
  if (s == "nli") return Fusion::kNli;
  if (s == "symmetric") return Fusion::kSymmetric;
  throw ConfigError("unknown fusion '" + std::string(s) + "' (nli|symmetric)");
}

void ModelConfig::validate() const {
  if (vocab_size <= kNumSpecials) {
    throw ConfigError("vocabulary of " + std::to_string(vocab_size) +
                      " entries cannot hold the pad/unk/start/end specials plus a word");
  }
  if (embed_dim == 0 || hidden_dim == 0 || label_dim == 0 || classifier_hidden == 0) {
    throw ConfigError("model dimensions must be positive");
  }
  if (embed_dim != hidden_dim) {
    throw ConfigError("tied output projection needs embed_dim == hidden_dim, got " +
                      std::to_string(embed_dim) + " and " + std::to_string(hidden_dim));
  }
  if (latent_dim < 2) throw ConfigError("latent_dim must be at least 2");
  if (num_labels < 2) throw ConfigError("num_labels must be at least 2");
}

SequenceBatch SequenceBatch::from(std::span<const std::vector<std::size_t>> seqs,
                                  std::size_t extra_pad) {
  if (seqs.empty()) throw DomainError("empty sequence batch");
  SequenceBatch out;
  out.batch = seqs.size();
  for (const auto& s : seqs) {
    if (s.empty()) throw DomainError("empty token sequence");
    out.lengths.push_back(s.size());
    out.max_len = std::max(out.max_len, s.size());
  }
  out.max_len += extra_pad;
  out.ids.assign(out.max_len * out.batch, kPadId);
  for (std::size_t b = 0; b < out.batch; ++b) {
    for (std::size_t t = 0; t < seqs[b].size(); ++t) out.ids[t * out.batch + b] = seqs[b][t];
  }
  return out;
}

std::vector<std::size_t> SequenceBatch::row(std::size_t b) const {
  std::vector<std::size_t> r(lengths.at(b));
  for (std::size_t t = 0; t < r.size(); ++t) r[t] = ids[t * batch + b];
  return r;
}

// ---- Model ------------------------------------------------------------------

namespace {

Tensor uniform(Shape shape, double bound, Rng& rng) {
  std::uniform_real_distribution<double> u(-bound, bound);
  Tensor t(std::move(shape));
  for (double& v : t.values()) v = u(rng);
  return t;
}

bool starts_with(std::string_view s, std::string_view prefix) {
  return s.substr(0, prefix.size()) == prefix;
}

}  // namespace

Model::Model(const ModelConfig& config, Rng& rng) : config_(config) {
  config_.validate();
  build(rng);
}

Model::Model(const Model& other) : config_(other.config_) {
  for (const auto& p : other.storage_) {
    storage_.push_back(std::make_unique<ag::Parameter>(*p));
    order_.push_back(storage_.back().get());
  }
  bind();
}

Model& Model::operator=(const Model& other) {
  if (this != &other) *this = Model(other);
  return *this;
}

ag::Parameter* Model::add(const std::string& name, Tensor value) {
  storage_.push_back(std::make_unique<ag::Parameter>(ag::Parameter{name, std::move(value)}));
  order_.push_back(storage_.back().get());
  return order_.back();
}

void Model::build(Rng& rng) {
  const ModelConfig& c = config_;
  const std::size_t h = c.hidden_dim;
  const double lstm_bound = 1.0 / std::sqrt(static_cast<double>(h));
  auto lstm = [&](const std::string& name, std::size_t in) {
    add(name + ".weight", uniform({in + h, 4 * h}, lstm_bound, rng));
    Tensor bias({1, 4 * h}, 0.0);
    for (std::size_t j = h; j < 2 * h; ++j) bias[j] = 1.0;
    add(name + ".bias", std::move(bias));
  };
  auto linear = [&](const std::string& name, std::size_t in, std::size_t out) {
    add(name + ".weight", uniform({in, out}, 1.0 / std::sqrt(static_cast<double>(in)), rng));
    add(name + ".bias", Tensor({1, out}, 0.0));
  };

  add("word_embedding", uniform({c.vocab_size, c.embed_dim}, 0.1, rng));
  add("label_embedding", uniform({c.num_labels, c.label_dim}, 0.1, rng));
  lstm("encoder", c.embed_dim);
  if (!c.tie_encoders) lstm("classifier_encoder", c.embed_dim);
  linear("code", h, c.latent_dim);
  lstm("decoder", c.embed_dim + c.label_dim + c.latent_dim);
  add("output.bias", Tensor({1, c.vocab_size}, 0.0));
  const std::size_t fused = c.fusion == Fusion::kNli ? 4 * h : 2 * h;
  linear("mlp", fused, c.classifier_hidden);
  linear("out", c.classifier_hidden, c.num_labels);
  for (const char* k : {"y", "z", "mu"}) add(std::string("log_sigma2.") + k, Tensor({1}, 0.0));
  bind();
}

void Model::bind() {
  word_embedding = &param("word_embedding");
  label_embedding = &param("label_embedding");
  encoder = {&param("encoder.weight"), &param("encoder.bias")};
  classifier_encoder = config_.tie_encoders
                           ? encoder
                           : LstmParams{&param("classifier_encoder.weight"),
                                        &param("classifier_encoder.bias")};
  code_weight = &param("code.weight");
  code_bias = &param("code.bias");
  decoder = {&param("decoder.weight"), &param("decoder.bias")};
  output_bias = &param("output.bias");
  mlp_weight = &param("mlp.weight");
  mlp_bias = &param("mlp.bias");
  out_weight = &param("out.weight");
  out_bias = &param("out.bias");
  log_sigma2 = {&param("log_sigma2.y"), &param("log_sigma2.z"), &param("log_sigma2.mu")};
}

ag::Parameter& Model::param(std::string_view name) const {
  for (ag::Parameter* p : order_) {
    if (p->name == name) return *p;
  }
  throw ConfigError("model has no parameter '" + std::string(name) + "'");
}

bool Model::in_group(const ag::Parameter* p, ParamGroup g) const {
  const std::string_view n = p->name;
  switch (g) {
    case ParamGroup::kGenerator:
      return n == "word_embedding" || n == "label_embedding" || n == "output.bias" ||
             starts_with(n, "decoder.");
    case ParamGroup::kPosterior:
      return starts_with(n, "encoder.") || starts_with(n, "code.");
    case ParamGroup::kClassifier:
      return starts_with(n, "mlp.") || starts_with(n, "out.") ||
             starts_with(n, "classifier_encoder.") ||
             (config_.tie_encoders && starts_with(n, "encoder."));
    case ParamGroup::kConstraint:
      return starts_with(n, "log_sigma2.");
  }
  return false;
}

std::vector<ag::Parameter*> Model::group(ParamGroup g) const {
  std::vector<ag::Parameter*> out;
  for (ag::Parameter* p : order_) {
    if (in_group(p, g)) out.push_back(p);
  }
  return out;
}

std::size_t Model::num_values() const {
  std::size_t n = 0;
  for (const ag::Parameter* p : order_) n += p->value.size();
  return n;
}

// ---- forward ----------------------------------------------------------------

Var Forward::drop(Var x, double rate) const {
  if (!train || rate == 0.0) return x;
  if (!rng) throw ConfigError("training-mode dropout needs a randomness source");
  return ag::dropout(x, rate, *rng);
}

LstmState zero_state(const Forward& f, std::size_t rows) {
  const std::size_t h = f.model.config().hidden_dim;
  return {f.tape.constant(Tensor({rows, h}, 0.0)), f.tape.constant(Tensor({rows, h}, 0.0))};
}

LstmState lstm_step(const Forward& f, const LstmParams& lstm, Var x, const LstmState& s) {
  const std::size_t h = s.h.cols();
  Var gates = ag::add(ag::matmul(ag::concat({x, s.h}), f.p(lstm.weight)), f.p(lstm.bias));
  Var i = ag::sigmoid(ag::slice(gates, 0, h));
  Var fg = ag::sigmoid(ag::slice(gates, h, 2 * h));
  Var g = ag::tanh(ag::slice(gates, 2 * h, 3 * h));
  Var o = ag::sigmoid(ag::slice(gates, 3 * h, 4 * h));
  Var c = ag::add(ag::mul(fg, s.c), ag::mul(i, g));
  return {ag::mul(o, ag::tanh(c)), c};
}

namespace {

const LstmParams& encoder_for(const Model& m, EncoderRole role) {
  return role == EncoderRole::kPosterior ? m.encoder : m.classifier_encoder;
}

// Row b keeps its state once t >= lengths[b]; blending with 0/1 masks
// leaves finished rows bit-identical to their last real step.
LstmState masked_update(const Forward& f, const LstmState& prev, const LstmState& next,
                        std::span<const std::size_t> lengths, std::size_t t) {
  const std::size_t rows = lengths.size();
  if (std::all_of(lengths.begin(), lengths.end(), [t](std::size_t n) { return n > t; })) {
    return next;
  }
  const std::size_t h = next.h.cols();
  Tensor keep({rows, h}, 0.0), hold({rows, h}, 0.0);
  for (std::size_t b = 0; b < rows; ++b) {
    const bool active = lengths[b] > t;
    for (std::size_t j = 0; j < h; ++j) (active ? keep : hold)[b * h + j] = 1.0;
  }
  Var k = f.tape.constant(std::move(keep));
  Var d = f.tape.constant(std::move(hold));
  return {ag::add(ag::mul(next.h, k), ag::mul(prev.h, d)),
          ag::add(ag::mul(next.c, k), ag::mul(prev.c, d))};
}

}  // namespace

Var encode_embedded(const Forward& f, std::span<const Var> inputs,
                    std::span<const std::size_t> lengths, EncoderRole role) {
  if (inputs.empty()) throw DomainError("encode: empty sequence");
  const LstmParams& lstm = encoder_for(f.model, role);
  LstmState s = zero_state(f, lengths.size());
  for (std::size_t t = 0; t < inputs.size(); ++t) {
    if (std::none_of(lengths.begin(), lengths.end(), [t](std::size_t n) { return n > t; })) break;
    Var x = f.drop(inputs[t], f.word_dropout);
    s = masked_update(f, s, lstm_step(f, lstm, x, s), lengths, t);
  }
  return s.h;
}

Var encode(const Forward& f, const SequenceBatch& seqs, EncoderRole role) {
  if (seqs.batch == 0 || seqs.max_len == 0) throw DomainError("encode: empty sequence");
  Var table = f.p(f.model.word_embedding);
  std::vector<Var> inputs;
  inputs.reserve(seqs.max_len);
  for (std::size_t t = 0; t < seqs.max_len; ++t) inputs.push_back(ag::embedding(table, seqs.step(t)));
  return encode_embedded(f, inputs, seqs.lengths, role);
}

Var posterior_mu(const Forward& f, Var m_s) {
  return ag::l2_normalize(ag::add(ag::matmul(m_s, f.p(f.model.code_weight)), f.p(f.model.code_bias)));
}

Var label_vectors(const Forward& f, std::span<const std::size_t> labels) {
  return ag::embedding(f.p(f.model.label_embedding), labels);
}

Var decoder_step(const Forward& f, Var word, Var label, Var z, LstmState& state) {
  Var x = ag::concat({f.drop(word, f.word_dropout), label, z});
  state = lstm_step(f, f.model.decoder, x, state);
  return ag::add(ag::matmul_nt(state.h, f.p(f.model.word_embedding)), f.p(f.model.output_bias));
}

Var decoder_log_likelihood(const Forward& f, const SequenceBatch& targets, Var label, Var z) {
  const std::size_t rows = targets.batch;
  const std::size_t vocab = f.model.config().vocab_size;
  if (label.rows() != rows || z.rows() != rows) {
    throw ShapeError("decoder_log_likelihood: " + std::to_string(rows) + " targets but label " +
                     shape_str(label.shape()) + " and z " + shape_str(z.shape()));
  }
  Var table = f.p(f.model.word_embedding);
  LstmState state = zero_state(f, rows);
  std::vector<std::size_t> prev(rows, kStartId);
  Var total;
  for (std::size_t t = 0; t <= targets.max_len; ++t) {
    Tensor pick({rows, vocab}, 0.0);
    bool any = false;
    for (std::size_t b = 0; b < rows; ++b) {
      const std::size_t n = targets.lengths[b];
      if (t > n) continue;
      const std::size_t target = t < n ? targets.ids[t * rows + b] : kEndId;
      if (target >= vocab) throw DomainError("target id " + std::to_string(target) + " out of range");
      pick[b * vocab + target] = 1.0;
      any = true;
    }
    if (!any) break;
    Var logits = decoder_step(f, ag::embedding(table, prev), label, z, state);
    Var ll = ag::sum_rows(ag::mul(ag::log_softmax(logits), f.tape.constant(std::move(pick))));
    total = total.valid() ? ag::add(total, ll) : ll;
    if (t < targets.max_len) {
      auto step = targets.step(t);
      prev.assign(step.begin(), step.end());
    }
  }
  return total;
}

Var fuse(const Forward& f, Var h1, Var h2) {
  Var diff = ag::abs(ag::sub(h1, h2));
  if (f.model.config().fusion == Fusion::kNli) return ag::concat({h1, h2, diff, ag::mul(h1, h2)});
  return ag::concat({ag::add(h1, h2), diff});
}

Var classifier_logits(const Forward& f, Var h1, Var h2) {
  const Model& m = f.model;
  Var x = f.drop(fuse(f, h1, h2), f.classifier_dropout);
  Var hidden = ag::relu(ag::add(ag::matmul(x, f.p(m.mlp_weight)), f.p(m.mlp_bias)));
  hidden = f.drop(hidden, f.classifier_dropout);
  return ag::add(ag::matmul(hidden, f.p(m.out_weight)), f.p(m.out_bias));
}

Var classify(const Forward& f, const SequenceBatch& x1, const SequenceBatch& x2) {
  if (x1.batch != x2.batch) throw ShapeError("classify: batch sizes differ");
  return ag::softmax(classifier_logits(f, encode(f, x1, EncoderRole::kClassifier),
                                       encode(f, x2, EncoderRole::kClassifier)));
}

}  // namespace cslvm
