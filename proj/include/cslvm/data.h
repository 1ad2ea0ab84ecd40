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

// Corpora, vocabulary, batching, and the synthetic relation grammar.

#ifndef CSLVM_DATA_H_
#define CSLVM_DATA_H_

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "cslvm/autograd.h"
#include "cslvm/model.h"

namespace cslvm::data {

using Tokens = std::vector<std::string>;

Tokens split_tokens(std::string_view line);
std::string join_tokens(std::span<const std::string> tokens);

// ---- tasks and labels ---------------------------------------------------------

enum class Task { kNli, kParaphrase };

std::string_view task_name(Task t);
Task parse_task(std::string_view s);
const std::vector<std::string>& label_names(Task t);
// Throws FormatError for a label the task does not define.
std::size_t parse_label(Task t, std::string_view s);

// ---- vocabulary -----------------------------------------------------------------

class Vocab {
 public:
  Vocab();  // specials only

  // Frequency-ranked, ties broken lexicographically, capped at max_size
  // entries including the four specials. Throws DomainError on an empty
  // corpus.
  static Vocab build(std::span<const Tokens> sentences, std::size_t max_size);
  // Rebuilds from a stored token list; the first four must be the specials.
  static Vocab from_tokens(std::vector<std::string> tokens);

  std::size_t size() const { return tokens_.size(); }
  std::size_t id(std::string_view token) const;  // kUnkId when absent
  bool contains(std::string_view token) const;
  const std::string& token(std::size_t id) const;
  const std::vector<std::string>& tokens() const { return tokens_; }

  // Truncates to kMaxSequenceLength.
  std::vector<std::size_t> encode(std::span<const std::string> tokens) const;
  // Stops at the end special; drops start and pad.
  Tokens decode(std::span<const std::size_t> ids) const;

  bool operator==(const Vocab& o) const { return tokens_ == o.tokens_; }

 private:
  void index();
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, std::size_t> ids_;
};

// ---- examples -------------------------------------------------------------------

struct TextPair {
  Tokens source;
  Tokens target;
  std::optional<std::size_t> label;
};

struct PairExample {
  std::vector<std::size_t> source;
  std::vector<std::size_t> target;
  std::optional<std::size_t> label;
};

// Strict TSV: `source<TAB>target<TAB>label` or `source<TAB>target`.
// Errors name the line number. Swap augmentation appends every pair reversed.
std::vector<TextPair> parse_pairs(std::istream& in, bool labeled, bool swap_augment, Task task,
                                  const std::string& source_name = "<stream>");
std::vector<TextPair> load_pairs(const std::string& path, bool labeled, bool swap_augment, Task task);
void write_pairs(std::ostream& out, std::span<const TextPair> pairs, Task task);
void save_pairs(const std::string& path, std::span<const TextPair> pairs, Task task);

std::vector<TextPair> swap_pairs(std::span<const TextPair> pairs);
std::vector<Tokens> sentences_of(std::span<const TextPair> pairs);
std::vector<PairExample> encode_pairs(const Vocab& vocab, std::span<const TextPair> pairs);
std::vector<PairExample> hide_labels(std::span<const PairExample> pairs);

// ---- batching -------------------------------------------------------------------

struct Batch {
  SequenceBatch source;
  SequenceBatch target;
  std::vector<std::size_t> labels;  // empty for unlabeled batches
  std::size_t size() const { return source.batch; }
};

// Labels are kept only when every example carries one.
Batch make_batch(std::span<const PairExample> examples, std::span<const std::size_t> indices);

// One shuffled pass: consecutive slices of batch_size, the last one short.
std::vector<Batch> batches(std::span<const PairExample> examples, std::size_t batch_size, Rng& rng);

// Endless cursor over a pool, reshuffled at each epoch. The order of epoch e
// depends only on (seed, e), so (epoch, cursor) is the complete state.
class BatchStream {
 public:
  BatchStream() = default;
  BatchStream(const std::vector<PairExample>* pool, std::size_t batch_size, std::uint64_t seed);

  bool empty() const { return pool_ == nullptr || pool_->empty(); }
  Batch next();

  std::uint64_t epoch() const { return epoch_; }
  std::size_t cursor() const { return cursor_; }
  void seek(std::uint64_t epoch, std::size_t cursor);

 private:
  void shuffle();

  const std::vector<PairExample>* pool_ = nullptr;
  std::size_t batch_size_ = 1;
  std::uint64_t seed_ = 0;
  std::uint64_t epoch_ = 0;
  std::size_t cursor_ = 0;
  std::vector<std::size_t> order_;
};

// ---- synthetic grammar ----------------------------------------------------------

// Templates are token lists with slots {agent} {action} {object} {place}
// and {mod?}, an optional modifier for the noun slot that follows it.
struct SynthGrammar {
  std::vector<std::string> agents;
  std::vector<std::string> actions;
  std::vector<std::string> objects;
  std::vector<std::string> places;
  std::vector<std::string> modifiers;
  std::vector<std::string> neutral_modifiers;  // inserted for the neutral relation
  std::map<std::string, std::string> hypernym;  // word -> direct hypernym
  std::vector<std::pair<std::string, std::string>> antonyms;
  std::vector<std::pair<std::string, std::string>> synonyms;
  std::vector<Tokens> templates;

  // Acyclic hypernyms, disjoint antonym/synonym pairs, known slots.
  void validate() const;

  std::set<std::string> lexicon() const;
  bool is_noun(const std::string& w) const;
  bool is_modifier(const std::string& w) const;
  // Every ancestor along the hypernym chain.
  std::vector<std::string> hypernyms_of(const std::string& w) const;
  std::optional<std::string> antonym_of(const std::string& w) const;
  std::optional<std::string> synonym_of(const std::string& w) const;
  // Number of distinct source sentences the templates can produce.
  double capacity() const;
};

SynthGrammar default_grammar();
// Header line `CSLVM-GRAMMAR 1`, then `key = value` lines.
SynthGrammar parse_grammar(std::istream& in);
SynthGrammar load_grammar(const std::string& path);
void write_grammar(std::ostream& out, const SynthGrammar& g);

struct SynthSets {
  std::vector<TextPair> labeled;
  std::vector<TextPair> unlabeled;  // generated with labels, stored without
  std::vector<TextPair> heldout;
  std::vector<std::size_t> unlabeled_gold;  // hidden labels, for diagnostics
};

// Sources are distinct across all three sets, and no held-out sentence
// appears anywhere in the training pools. Throws DomainError when the
// grammar cannot produce that many distinct sources.
SynthSets synth_dataset(const SynthGrammar& g, std::size_t n_labeled, std::size_t n_unlabeled,
                        std::size_t n_heldout, Task task, Rng& rng);

// A target for `source` under `label`, or nullopt when no rule applies.
std::optional<Tokens> apply_relation(const SynthGrammar& g, const Tokens& source, std::size_t label,
                                     Task task, Rng& rng);

// Inverts the generation rules; nullopt means undetermined.
std::optional<std::size_t> rule_oracle_label(const SynthGrammar& g, const Tokens& source,
                                             const Tokens& target, Task task);

}  // namespace cslvm::data

#endif  // CSLVM_DATA_H_
