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

// Discrete generation and evaluation metrics.

#ifndef CSLVM_DECODE_H_
#define CSLVM_DECODE_H_

#include <cstddef>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "cslvm/data.h"
#include "cslvm/model.h"

namespace cslvm {

struct DecodeConfig {
  std::size_t beam = 10;
  double alpha = 0.7;
  std::size_t max_len = 20;  // generated tokens, end token included
  bool mean_direction = false;
  void validate() const;
};

// ((5 + len) / 6)^alpha
double length_penalty(std::size_t len, double alpha);

struct Hypothesis {
  std::vector<std::size_t> tokens;  // ends with kEndId unless cut at max_len
  double log_prob = 0.0;
  double score = 0.0;  // log_prob / length_penalty
};

// z is one row [1, m]. Ties go to the lower token id.
Hypothesis greedy_decode(const Model& model, std::size_t label, const Tensor& z, std::size_t max_len);
Hypothesis beam_search(const Model& model, std::size_t label, const Tensor& z, const DecodeConfig& cfg);

// Unique n-grams over total n-gram tokens, pooled across sentences.
double distinct_n(std::span<const data::Tokens> sentences, std::size_t n);

// Argmax of classify in eval mode; ties go to the lowest label.
std::vector<std::size_t> predict(const Model& model, std::span<const data::PairExample> examples,
                                 std::size_t batch_size = 256);
double accuracy(const Model& model, std::span<const data::PairExample> examples);

// ---- artificial datasets ----------------------------------------------------------

struct GeneratedTriple {
  data::Tokens source;
  std::size_t label = 0;
  data::Tokens target;
};
using GeneratedSet = std::vector<GeneratedTriple>;

// One beam-decoded target per (source, label). z is a fresh posterior sample
// per source, shared by its labels, or the mean direction.
GeneratedSet build_artificial_dataset(const Model& model, const data::Vocab& vocab,
                                      std::span<const data::Tokens> sources, double kappa,
                                      const DecodeConfig& cfg, Rng& rng);

// distinct-n is NaN when no target has n tokens.
struct GeneratedScore {
  double consistency = 0.0;
  double distinct1 = 0.0;
  double distinct2 = 0.0;
};

// Consistency under the grammar's rule oracle.
GeneratedScore evaluate_generated(const data::SynthGrammar& g, data::Task task, const GeneratedSet& set);
// Consistency under a surrogate classifier.
GeneratedScore evaluate_generated(const Model& surrogate, const data::Vocab& vocab, const GeneratedSet& set);

// TSV `source<TAB>label<TAB>generated_target`.
void write_generated(std::ostream& out, const GeneratedSet& set, data::Task task);
GeneratedSet read_generated(std::istream& in, data::Task task);

}  // namespace cslvm

#endif  // CSLVM_DECODE_H_
