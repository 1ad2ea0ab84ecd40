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

#include "cslvm/decode.h"

#include <algorithm>
#include <cmath>
#include <istream>
#include <limits>
#include <ostream>
#include <set>
#include <string>

#include "cslvm/error.h"
#include "cslvm/vmf.h"

namespace cslvm {

using ag::Tape;
using ag::Var;

void DecodeConfig::validate() const {
  if (beam < 1) throw ConfigError("beam width must be at least 1");
  if (!(alpha >= 0.0)) throw ConfigError("length penalty alpha must be >= 0");
  if (max_len < 1) throw ConfigError("max decode length must be at least 1");
}

double length_penalty(std::size_t len, double alpha) {
  return std::pow((5.0 + static_cast<double>(len)) / 6.0, alpha);
}

namespace {

void check_inputs(const Model& model, std::size_t label, const Tensor& z) {
  const ModelConfig& c = model.config();
  if (label >= c.num_labels) throw DomainError("label " + std::to_string(label) + " out of range");
  if (z.shape() != Shape{1, c.latent_dim}) throw ShapeError("decode expects z of shape [1, latent_dim]");
}

struct Beam {
  std::vector<std::size_t> tokens;
  double log_prob = 0.0;
};

struct Candidate {
  double log_prob;
  std::size_t beam;
  std::size_t token;
};

// Runs the decoder for up to max_len steps keeping `width` hypotheses.
Hypothesis search(const Model& model, std::size_t label, const Tensor& z, std::size_t width,
                  double alpha, std::size_t max_len) {
  check_inputs(model, label, z);
  Tape t;
  Forward f{model, t};
  Var table = f.p(model.word_embedding);
  std::vector<std::size_t> one = {label};
  Var label_row = label_vectors(f, one);
  Var z_row = t.constant(z);
  LstmState state = zero_state(f, 1);
  std::vector<Beam> alive(1);
  std::vector<Hypothesis> done;
  const std::size_t vocab = model.config().vocab_size;

  for (std::size_t step = 0; step < max_len && !alive.empty(); ++step) {
    const std::size_t n = alive.size();
    std::vector<std::size_t> prev(n), zeros(n, 0);
    for (std::size_t i = 0; i < n; ++i) prev[i] = alive[i].tokens.empty() ? kStartId : alive[i].tokens.back();
    Var logits = decoder_step(f, ag::embedding(table, prev), ag::gather_rows(label_row, zeros),
                              ag::gather_rows(z_row, zeros), state);
    const Tensor lp = ag::log_softmax(logits).value();

    std::vector<Candidate> cands;
    cands.reserve(n * vocab);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t v = 0; v < vocab; ++v) cands.push_back({alive[i].log_prob + lp.at(i, v), i, v});
    }
    const std::size_t k = std::min(width, cands.size());
    std::partial_sort(cands.begin(), cands.begin() + static_cast<std::ptrdiff_t>(k), cands.end(),
                      [](const Candidate& a, const Candidate& b) {
                        if (a.log_prob != b.log_prob) return a.log_prob > b.log_prob;
                        if (a.beam != b.beam) return a.beam < b.beam;
                        return a.token < b.token;
                      });

    std::vector<Beam> next;
    std::vector<std::size_t> keep;
    for (std::size_t c = 0; c < k; ++c) {
      Beam b{alive[cands[c].beam].tokens, cands[c].log_prob};
      b.tokens.push_back(cands[c].token);
      if (cands[c].token == kEndId || step + 1 == max_len) {
        const double score = b.log_prob / length_penalty(b.tokens.size(), alpha);
        done.push_back({std::move(b.tokens), b.log_prob, score});
      } else {
        keep.push_back(cands[c].beam);
        next.push_back(std::move(b));
      }
    }
    if (!keep.empty()) state = {ag::gather_rows(state.h, keep), ag::gather_rows(state.c, keep)};
    alive = std::move(next);
  }

  std::size_t best = 0;
  for (std::size_t i = 1; i < done.size(); ++i) {
    if (done[i].score > done[best].score) best = i;
  }
  return done[best];
}

}  // namespace

Hypothesis greedy_decode(const Model& model, std::size_t label, const Tensor& z, std::size_t max_len) {
  if (max_len < 1) throw ConfigError("max decode length must be at least 1");
  check_inputs(model, label, z);
  Tape t;
  Forward f{model, t};
  Var table = f.p(model.word_embedding);
  std::vector<std::size_t> one = {label};
  Var lab = label_vectors(f, one);
  Var zz = t.constant(z);
  LstmState state = zero_state(f, 1);
  Hypothesis h;
  std::size_t prev = kStartId;
  for (std::size_t step = 0; step < max_len; ++step) {
    std::vector<std::size_t> in = {prev};
    const Tensor lp = ag::log_softmax(decoder_step(f, ag::embedding(table, in), lab, zz, state)).value();
    std::size_t arg = 0;
    double top = h.log_prob + lp[0];
    for (std::size_t v = 1; v < lp.size(); ++v) {
      const double s = h.log_prob + lp[v];
      if (s > top) {
        top = s;
        arg = v;
      }
    }
    h.tokens.push_back(arg);
    h.log_prob = top;
    prev = arg;
    if (arg == kEndId) break;
  }
  h.score = h.log_prob / length_penalty(h.tokens.size(), 0.0);
  return h;
}

Hypothesis beam_search(const Model& model, std::size_t label, const Tensor& z, const DecodeConfig& cfg) {
  cfg.validate();
  return search(model, label, z, cfg.beam, cfg.alpha, cfg.max_len);
}

double distinct_n(std::span<const data::Tokens> sentences, std::size_t n) {
  if (n == 0) throw DomainError("distinct_n needs n >= 1");
  if (sentences.empty()) throw DomainError("distinct_n over an empty sentence list");
  std::set<std::vector<std::string>> unique;
  std::size_t total = 0;
  for (const data::Tokens& s : sentences) {
    for (std::size_t i = 0; i + n <= s.size(); ++i) {
      unique.emplace(s.begin() + static_cast<std::ptrdiff_t>(i), s.begin() + static_cast<std::ptrdiff_t>(i + n));
      ++total;
    }
  }
  if (total == 0) throw DomainError("every sentence is shorter than n = " + std::to_string(n));
  return static_cast<double>(unique.size()) / static_cast<double>(total);
}

std::vector<std::size_t> predict(const Model& model, std::span<const data::PairExample> examples,
                                 std::size_t batch_size) {
  std::vector<std::size_t> out;
  out.reserve(examples.size());
  for (std::size_t begin = 0; begin < examples.size(); begin += batch_size) {
    const std::size_t end = std::min(examples.size(), begin + batch_size);
    std::vector<std::size_t> idx;
    for (std::size_t i = begin; i < end; ++i) idx.push_back(i);
    data::Batch b = data::make_batch(examples, idx);
    Tape t;
    Forward f{model, t};
    const Tensor q = classify(f, b.source, b.target).value();
    for (std::size_t r = 0; r < q.rows(); ++r) {
      std::size_t arg = 0;
      for (std::size_t k = 1; k < q.cols(); ++k) {
        if (q.at(r, k) > q.at(r, arg)) arg = k;
      }
      out.push_back(arg);
    }
  }
  return out;
}

double accuracy(const Model& model, std::span<const data::PairExample> examples) {
  if (examples.empty()) throw DomainError("accuracy over an empty set");
  const std::vector<std::size_t> pred = predict(model, examples);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < examples.size(); ++i) {
    if (!examples[i].label) throw DomainError("accuracy needs labeled examples");
    hits += pred[i] == *examples[i].label;
  }
  return static_cast<double>(hits) / static_cast<double>(examples.size());
}

GeneratedSet build_artificial_dataset(const Model& model, const data::Vocab& vocab,
                                      std::span<const data::Tokens> sources, double kappa,
                                      const DecodeConfig& cfg, Rng& rng) {
  cfg.validate();
  const ModelConfig& mc = model.config();
  GeneratedSet out;
  out.reserve(sources.size() * mc.num_labels);
  for (const data::Tokens& src : sources) {
    std::vector<std::vector<std::size_t>> ids = {vocab.encode(src)};
    Tape t;
    Forward f{model, t};
    Var mu = posterior_mu(f, encode(f, SequenceBatch::from(ids), EncoderRole::kPosterior));
    Tensor z = cfg.mean_direction
                   ? mu.value()
                   : vmf::reparameterize(mu, vmf::draw_noise(1, static_cast<int>(mc.latent_dim), kappa, rng)).value();
    for (std::size_t y = 0; y < mc.num_labels; ++y) {
      Hypothesis h = beam_search(model, y, z, cfg);
      out.push_back({src, y, vocab.decode(h.tokens)});
    }
  }
  return out;
}

namespace {

GeneratedScore diversity(const GeneratedSet& set) {
  if (set.empty()) throw DomainError("empty generated set");
  std::vector<data::Tokens> targets;
  for (const GeneratedTriple& g : set) targets.push_back(g.target);
  std::size_t longest = 0;
  for (const auto& t : targets) longest = std::max(longest, t.size());
  GeneratedScore s;
  constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
  s.distinct1 = longest >= 1 ? distinct_n(targets, 1) : kNaN;
  s.distinct2 = longest >= 2 ? distinct_n(targets, 2) : kNaN;
  return s;
}

}  // namespace

GeneratedScore evaluate_generated(const data::SynthGrammar& g, data::Task task, const GeneratedSet& set) {
  GeneratedScore s = diversity(set);
  std::size_t hits = 0;
  for (const GeneratedTriple& t : set) {
    const auto label = data::rule_oracle_label(g, t.source, t.target, task);
    hits += label && *label == t.label;
  }
  s.consistency = static_cast<double>(hits) / static_cast<double>(set.size());
  return s;
}

GeneratedScore evaluate_generated(const Model& surrogate, const data::Vocab& vocab, const GeneratedSet& set) {
  GeneratedScore s = diversity(set);
  std::vector<data::PairExample> ex;
  for (const GeneratedTriple& t : set) {
    std::vector<std::size_t> target = vocab.encode(t.target);
    if (target.empty()) target.push_back(kUnkId);  // an immediate end token still gets a verdict
    ex.push_back({vocab.encode(t.source), std::move(target), t.label});
  }
  s.consistency = accuracy(surrogate, ex);
  return s;
}

void write_generated(std::ostream& out, const GeneratedSet& set, data::Task task) {
  const auto& names = data::label_names(task);
  for (const GeneratedTriple& t : set) {
    out << data::join_tokens(t.source) << '\t' << names.at(t.label) << '\t' << data::join_tokens(t.target)
        << '\n';
  }
}

GeneratedSet read_generated(std::istream& in, data::Task task) {
  GeneratedSet out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty()) continue;
    const auto a = line.find('\t');
    const auto b = a == std::string::npos ? a : line.find('\t', a + 1);
    if (b == std::string::npos || line.find('\t', b + 1) != std::string::npos) {
      throw FormatError("generated set line " + std::to_string(n) + ": expected 3 tab-separated fields");
    }
    GeneratedTriple t;
    t.source = data::split_tokens(std::string_view(line).substr(0, a));
    t.label = data::parse_label(task, std::string_view(line).substr(a + 1, b - a - 1));
    t.target = data::split_tokens(std::string_view(line).substr(b + 1));
    out.push_back(std::move(t));
  }
  return out;
}

}  // namespace cslvm
