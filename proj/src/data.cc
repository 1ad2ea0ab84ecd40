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

#include "cslvm/data.h"

#include <algorithm>
#include <fstream>
#include <istream>
#include <numeric>
#include <ostream>
#include <sstream>
#include <unordered_set>

#include "cslvm/error.h"

namespace cslvm::data {

Tokens split_tokens(std::string_view line) {
  Tokens out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\r')) ++i;
    std::size_t j = i;
    while (j < line.size() && line[j] != ' ' && line[j] != '\r') ++j;
    if (j > i) out.emplace_back(line.substr(i, j - i));
    i = j;
  }
  return out;
}

std::string join_tokens(std::span<const std::string> tokens) {
  std::string out;
  for (const auto& t : tokens) {
    if (!out.empty()) out += ' ';
    out += t;
  }
  return out;
}

// ---- tasks ------------------------------------------------------------------

std::string_view task_name(Task t) { return t == Task::kNli ? "nli" : "paraphrase"; }

Task parse_task(std::string_view s) {
  if (s == "nli") return Task::kNli;
  if (s == "paraphrase") return Task::kParaphrase;
  throw ConfigError("unknown task '" + std::string(s) + "' (nli|paraphrase)");
}

const std::vector<std::string>& label_names(Task t) {
  static const std::vector<std::string> nli = {"entailment", "neutral", "contradiction"};
  static const std::vector<std::string> para = {"paraphrase", "not_paraphrase"};
  return t == Task::kNli ? nli : para;
}

std::size_t parse_label(Task t, std::string_view s) {
  const auto& names = label_names(t);
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (names[i] == s) return i;
  }
  throw FormatError("unknown label '" + std::string(s) + "' for task " + std::string(task_name(t)));
}

// ---- vocab ------------------------------------------------------------------

namespace {
const std::vector<std::string> kSpecials = {"<pad>", "<unk>", "<s>", "</s>"};
}

Vocab::Vocab() : tokens_(kSpecials) { index(); }

void Vocab::index() {
  ids_.clear();
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    if (!ids_.emplace(tokens_[i], i).second) throw FormatError("duplicate vocabulary entry " + tokens_[i]);
  }
}

Vocab Vocab::build(std::span<const Tokens> sentences, std::size_t max_size) {
  if (max_size < kNumSpecials) throw ConfigError("vocabulary cap below the four specials");
  std::unordered_map<std::string, std::size_t> counts;
  for (const auto& s : sentences) {
    for (const auto& t : s) ++counts[t];
  }
  for (const auto& sp : kSpecials) counts.erase(sp);
  if (counts.empty()) throw DomainError("cannot build a vocabulary from an empty corpus");
  std::vector<std::pair<std::string, std::size_t>> ranked(counts.begin(), counts.end());
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    return a.second != b.second ? a.second > b.second : a.first < b.first;
  });
  Vocab v;
  for (const auto& [tok, n] : ranked) {
    if (v.tokens_.size() >= max_size) break;
    v.tokens_.push_back(tok);
  }
  v.index();
  return v;
}

Vocab Vocab::from_tokens(std::vector<std::string> tokens) {
  if (tokens.size() < kNumSpecials || !std::equal(kSpecials.begin(), kSpecials.end(), tokens.begin())) {
    throw FormatError("stored vocabulary does not start with the special tokens");
  }
  Vocab v;
  v.tokens_ = std::move(tokens);
  v.index();
  return v;
}

std::size_t Vocab::id(std::string_view token) const {
  auto it = ids_.find(std::string(token));
  return it == ids_.end() ? kUnkId : it->second;
}

bool Vocab::contains(std::string_view token) const { return ids_.count(std::string(token)) > 0; }

const std::string& Vocab::token(std::size_t id) const {
  if (id >= tokens_.size()) throw DomainError("token id " + std::to_string(id) + " out of range");
  return tokens_[id];
}

std::vector<std::size_t> Vocab::encode(std::span<const std::string> tokens) const {
  std::vector<std::size_t> out;
  for (const auto& t : tokens) {
    if (out.size() == kMaxSequenceLength) break;
    out.push_back(id(t));
  }
  return out;
}

Tokens Vocab::decode(std::span<const std::size_t> ids) const {
  Tokens out;
  for (std::size_t id : ids) {
    if (id == kEndId) break;
    if (id == kStartId || id == kPadId) continue;
    out.push_back(token(id));
  }
  return out;
}

// ---- TSV --------------------------------------------------------------------

std::vector<TextPair> parse_pairs(std::istream& in, bool labeled, bool swap_augment, Task task,
                                  const std::string& source_name) {
  std::vector<TextPair> out;
  std::string line;
  std::size_t lineno = 0;
  const std::size_t want = labeled ? 3 : 2;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string_view> fields;
    std::string_view rest = line;
    for (;;) {
      const auto tab = rest.find('\t');
      fields.push_back(rest.substr(0, tab));
      if (tab == std::string_view::npos) break;
      rest.remove_prefix(tab + 1);
    }
    const std::string where = source_name + ":" + std::to_string(lineno);
    if (fields.size() != want) {
      throw FormatError(where + ": expected " + std::to_string(want) + " tab-separated fields, got " +
                        std::to_string(fields.size()));
    }
    TextPair p{split_tokens(fields[0]), split_tokens(fields[1]), std::nullopt};
    if (p.source.empty() || p.target.empty()) throw FormatError(where + ": empty sentence");
    if (labeled) {
      try {
        p.label = parse_label(task, fields[2]);
      } catch (const FormatError& e) {
        throw FormatError(where + ": " + e.what());
      }
    }
    out.push_back(std::move(p));
  }
  if (swap_augment) {
    auto swapped = swap_pairs(out);
    out.insert(out.end(), swapped.begin(), swapped.end());
  }
  return out;
}

std::vector<TextPair> load_pairs(const std::string& path, bool labeled, bool swap_augment, Task task) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path);
  return parse_pairs(in, labeled, swap_augment, task, path);
}

void write_pairs(std::ostream& out, std::span<const TextPair> pairs, Task task) {
  for (const auto& p : pairs) {
    out << join_tokens(p.source) << '\t' << join_tokens(p.target);
    if (p.label) out << '\t' << label_names(task).at(*p.label);
    out << '\n';
  }
}

void save_pairs(const std::string& path, std::span<const TextPair> pairs, Task task) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path);
  write_pairs(out, pairs, task);
}

std::vector<TextPair> swap_pairs(std::span<const TextPair> pairs) {
  std::vector<TextPair> out;
  out.reserve(pairs.size());
  for (const auto& p : pairs) out.push_back({p.target, p.source, p.label});
  return out;
}

std::vector<Tokens> sentences_of(std::span<const TextPair> pairs) {
  std::vector<Tokens> out;
  for (const auto& p : pairs) {
    out.push_back(p.source);
    out.push_back(p.target);
  }
  return out;
}

std::vector<PairExample> encode_pairs(const Vocab& vocab, std::span<const TextPair> pairs) {
  std::vector<PairExample> out;
  out.reserve(pairs.size());
  for (const auto& p : pairs) out.push_back({vocab.encode(p.source), vocab.encode(p.target), p.label});
  return out;
}

std::vector<PairExample> hide_labels(std::span<const PairExample> pairs) {
  std::vector<PairExample> out(pairs.begin(), pairs.end());
  for (auto& p : out) p.label.reset();
  return out;
}

// ---- batching ---------------------------------------------------------------

Batch make_batch(std::span<const PairExample> examples, std::span<const std::size_t> indices) {
  std::vector<std::vector<std::size_t>> src, tgt;
  std::vector<std::size_t> labels;
  bool all_labeled = true;
  for (std::size_t i : indices) {
    const PairExample& e = examples[i];
    src.push_back(e.source);
    tgt.push_back(e.target);
    if (e.label) {
      labels.push_back(*e.label);
    } else {
      all_labeled = false;
    }
  }
  if (!all_labeled) labels.clear();
  return {SequenceBatch::from(src), SequenceBatch::from(tgt), std::move(labels)};
}

std::vector<Batch> batches(std::span<const PairExample> examples, std::size_t batch_size, Rng& rng) {
  if (batch_size == 0) throw ConfigError("batch size must be at least 1");
  std::vector<std::size_t> order(examples.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<Batch> out;
  for (std::size_t i = 0; i < order.size(); i += batch_size) {
    const std::size_t n = std::min(batch_size, order.size() - i);
    out.push_back(make_batch(examples, std::span(order).subspan(i, n)));
  }
  return out;
}

BatchStream::BatchStream(const std::vector<PairExample>* pool, std::size_t batch_size,
                         std::uint64_t seed)
    : pool_(pool), batch_size_(batch_size), seed_(seed) {
  if (batch_size == 0) throw ConfigError("batch size must be at least 1");
  shuffle();
}

void BatchStream::shuffle() {
  if (empty()) return;
  order_.resize(pool_->size());
  std::iota(order_.begin(), order_.end(), 0);
  Rng r(seed_ ^ (0x9E3779B97F4A7C15ULL * (epoch_ + 1)));
  std::shuffle(order_.begin(), order_.end(), r);
}

void BatchStream::seek(std::uint64_t epoch, std::size_t cursor) {
  epoch_ = epoch;
  cursor_ = cursor;
  shuffle();
}

Batch BatchStream::next() {
  if (empty()) throw DomainError("batch stream over an empty pool");
  if (cursor_ >= order_.size()) {
    ++epoch_;
    cursor_ = 0;
    shuffle();
  }
  const std::size_t n = std::min(batch_size_, order_.size() - cursor_);
  Batch b = make_batch(*pool_, std::span(order_).subspan(cursor_, n));
  cursor_ += n;
  return b;
}

// ---- grammar ----------------------------------------------------------------

namespace {

bool contains(const std::vector<std::string>& v, const std::string& w) {
  return std::find(v.begin(), v.end(), w) != v.end();
}

const std::vector<std::string>* slot_lexicon(const SynthGrammar& g, const std::string& slot) {
  if (slot == "{agent}") return &g.agents;
  if (slot == "{action}") return &g.actions;
  if (slot == "{object}") return &g.objects;
  if (slot == "{place}") return &g.places;
  if (slot == "{mod?}") return &g.modifiers;
  return nullptr;
}

bool is_slot(const std::string& t) { return t.size() > 2 && t.front() == '{' && t.back() == '}'; }

std::optional<std::string> partner(const std::vector<std::pair<std::string, std::string>>& pairs,
                                   const std::string& w) {
  for (const auto& [a, b] : pairs) {
    if (a == w) return b;
    if (b == w) return a;
  }
  return std::nullopt;
}

// Which base noun category a word belongs to, or nullptr.
const std::vector<std::string>* noun_category(const SynthGrammar& g, const std::string& w) {
  for (const auto* lex : {&g.agents, &g.objects, &g.places}) {
    if (contains(*lex, w)) return lex;
  }
  return nullptr;
}

}  // namespace

void SynthGrammar::validate() const {
  for (const auto* lex : {&agents, &actions, &objects, &modifiers}) {
    if (lex->empty()) throw ConfigError("grammar lexicon is empty");
  }
  if (templates.empty()) throw ConfigError("grammar has no templates");
  for (const auto& entry : hypernym) {
    std::string cur = entry.first;
    for (std::size_t steps = 0; hypernym.count(cur); ++steps) {
      if (steps > hypernym.size()) {
        throw ConfigError("hypernym chain through '" + entry.first + "' is cyclic");
      }
      cur = hypernym.at(cur);
    }
  }
  for (const auto& a : antonyms) {
    for (const auto& s : synonyms) {
      if ((a.first == s.first && a.second == s.second) || (a.first == s.second && a.second == s.first)) {
        throw ConfigError("pair " + a.first + "/" + a.second + " is both antonym and synonym");
      }
    }
  }
  for (const auto& t : templates) {
    if (t.empty()) throw ConfigError("empty template");
    for (const auto& tok : t) {
      if (is_slot(tok)) {
        const auto* lex = slot_lexicon(*this, tok);
        if (!lex) throw ConfigError("unknown template slot " + tok);
        if (lex->empty()) throw ConfigError("template slot " + tok + " has an empty lexicon");
      }
    }
  }
}

std::set<std::string> SynthGrammar::lexicon() const {
  std::set<std::string> out;
  for (const auto* lex : {&agents, &actions, &objects, &places, &modifiers, &neutral_modifiers}) {
    out.insert(lex->begin(), lex->end());
  }
  for (const auto& [a, b] : hypernym) {
    out.insert(a);
    out.insert(b);
  }
  for (const auto* pairs : {&antonyms, &synonyms}) {
    for (const auto& [a, b] : *pairs) {
      out.insert(a);
      out.insert(b);
    }
  }
  for (const auto& t : templates) {
    for (const auto& tok : t) {
      if (!is_slot(tok)) out.insert(tok);
    }
  }
  return out;
}

bool SynthGrammar::is_noun(const std::string& w) const {
  if (noun_category(*this, w)) return true;
  for (const auto& [a, b] : hypernym) {
    if (b == w) return true;
  }
  for (const auto& [a, b] : synonyms) {
    if ((a == w && noun_category(*this, b)) || (b == w && noun_category(*this, a))) return true;
  }
  return false;
}

bool SynthGrammar::is_modifier(const std::string& w) const {
  if (contains(modifiers, w) || contains(neutral_modifiers, w)) return true;
  for (const auto& [a, b] : synonyms) {
    if ((a == w && contains(modifiers, b)) || (b == w && contains(modifiers, a))) return true;
  }
  return false;
}

std::vector<std::string> SynthGrammar::hypernyms_of(const std::string& w) const {
  std::vector<std::string> out;
  for (auto it = hypernym.find(w); it != hypernym.end(); it = hypernym.find(it->second)) {
    out.push_back(it->second);
  }
  return out;
}

std::optional<std::string> SynthGrammar::antonym_of(const std::string& w) const {
  return partner(antonyms, w);
}

std::optional<std::string> SynthGrammar::synonym_of(const std::string& w) const {
  return partner(synonyms, w);
}

double SynthGrammar::capacity() const {
  double total = 0.0;
  for (const auto& t : templates) {
    double n = 1.0;
    for (const auto& tok : t) {
      if (tok == "{mod?}") {
        n *= 1.0 + static_cast<double>(modifiers.size());
      } else if (const auto* lex = slot_lexicon(*this, tok)) {
        n *= static_cast<double>(lex->size());
      }
    }
    total += n;
  }
  return total;
}

SynthGrammar default_grammar() {
  std::istringstream in(R"(CSLVM-GRAMMAR 1
agents = man woman boy girl chef doctor farmer student teacher singer pilot nurse dog cat horse bird
actions = cuts eats holds carries watches paints throws cleans buys sells opens closes pushes pulls finds loses likes hates lifts drops
objects = metal wood apple banana bread cake ball kite box door book letter car bike hat shirt
places = park beach kitchen garden street school river market
modifiers = tall short young old happy sad big small hot cold wet dry clean dirty fast slow heavy light red blue green yellow
neutral_modifiers = tall short young old happy sad big small hot cold wet dry clean dirty fast slow heavy light red blue green yellow
hypernym = man person
hypernym = woman person
hypernym = boy child
hypernym = girl child
hypernym = child person
hypernym = student person
hypernym = singer person
hypernym = chef worker
hypernym = doctor worker
hypernym = farmer worker
hypernym = teacher worker
hypernym = pilot worker
hypernym = nurse worker
hypernym = worker person
hypernym = dog animal
hypernym = cat animal
hypernym = horse animal
hypernym = bird animal
hypernym = apple fruit
hypernym = banana fruit
hypernym = fruit food
hypernym = bread food
hypernym = cake food
hypernym = metal material
hypernym = wood material
hypernym = ball toy
hypernym = kite toy
hypernym = car vehicle
hypernym = bike vehicle
hypernym = hat clothing
hypernym = shirt clothing
antonym = tall short
antonym = young old
antonym = happy sad
antonym = big small
antonym = hot cold
antonym = wet dry
antonym = clean dirty
antonym = fast slow
antonym = heavy light
antonym = buys sells
antonym = opens closes
antonym = pushes pulls
antonym = finds loses
antonym = likes hates
antonym = lifts drops
synonym = big large
synonym = small little
synonym = happy glad
synonym = fast quick
synonym = buys purchases
synonym = holds grips
synonym = watches observes
synonym = lifts raises
synonym = cleans washes
synonym = boy lad
synonym = car automobile
synonym = street road
synonym = shirt top
template = the {mod?} {agent} {action} the {mod?} {object}
template = the {mod?} {agent} {action} a {mod?} {object} in the {place}
template = a {mod?} {agent} {action} the {mod?} {object} near the {place}
template = the {mod?} {agent} in the {mod?} {place} {action} a {object}
template = a {mod?} {agent} {action} the {object} at the {mod?} {place}
template = the {agent} and the {mod?} {agent} {action} a {mod?} {object}
)");
  return parse_grammar(in);
}

SynthGrammar parse_grammar(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || split_tokens(line) != Tokens{"CSLVM-GRAMMAR", "1"}) {
    throw FormatError("grammar file must start with 'CSLVM-GRAMMAR 1'");
  }
  SynthGrammar g;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    if (split_tokens(line).empty()) continue;
    const auto eq = line.find('=');
    const std::string where = "grammar line " + std::to_string(lineno);
    if (eq == std::string::npos) throw FormatError(where + ": expected 'key = value'");
    const Tokens key = split_tokens(std::string_view(line).substr(0, eq));
    Tokens value = split_tokens(std::string_view(line).substr(eq + 1));
    if (key.size() != 1) throw FormatError(where + ": malformed key");
    const std::string& k = key[0];
    auto pair_of = [&]() -> std::pair<std::string, std::string> {
      if (value.size() != 2) throw FormatError(where + ": " + k + " takes two words");
      return {value[0], value[1]};
    };
    if (k == "agents") g.agents = value;
    else if (k == "actions") g.actions = value;
    else if (k == "objects") g.objects = value;
    else if (k == "places") g.places = value;
    else if (k == "modifiers") g.modifiers = value;
    else if (k == "neutral_modifiers") g.neutral_modifiers = value;
    else if (k == "hypernym") g.hypernym.insert(pair_of());
    else if (k == "antonym") g.antonyms.push_back(pair_of());
    else if (k == "synonym") g.synonyms.push_back(pair_of());
    else if (k == "template") g.templates.push_back(value);
    else throw FormatError(where + ": unknown key '" + k + "'");
  }
  if (g.neutral_modifiers.empty()) g.neutral_modifiers = g.modifiers;
  g.validate();
  return g;
}

SynthGrammar load_grammar(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path);
  return parse_grammar(in);
}

void write_grammar(std::ostream& out, const SynthGrammar& g) {
  out << "CSLVM-GRAMMAR 1\n";
  out << "agents = " << join_tokens(g.agents) << '\n';
  out << "actions = " << join_tokens(g.actions) << '\n';
  out << "objects = " << join_tokens(g.objects) << '\n';
  out << "places = " << join_tokens(g.places) << '\n';
  out << "modifiers = " << join_tokens(g.modifiers) << '\n';
  out << "neutral_modifiers = " << join_tokens(g.neutral_modifiers) << '\n';
  for (const auto& [a, b] : g.hypernym) out << "hypernym = " << a << ' ' << b << '\n';
  for (const auto& [a, b] : g.antonyms) out << "antonym = " << a << ' ' << b << '\n';
  for (const auto& [a, b] : g.synonyms) out << "synonym = " << a << ' ' << b << '\n';
  for (const auto& t : g.templates) out << "template = " << join_tokens(t) << '\n';
}

// ---- generation ---------------------------------------------------------------

namespace {

template <typename T>
const T& pick(const std::vector<T>& v, Rng& rng) {
  return v[std::uniform_int_distribution<std::size_t>(0, v.size() - 1)(rng)];
}

Tokens instantiate(const SynthGrammar& g, const Tokens& tmpl, Rng& rng) {
  Tokens out;
  std::bernoulli_distribution coin(0.5);
  for (const auto& tok : tmpl) {
    if (tok == "{mod?}") {
      if (coin(rng)) out.push_back(pick(g.modifiers, rng));
    } else if (const auto* lex = slot_lexicon(g, tok)) {
      out.push_back(pick(*lex, rng));
    } else {
      out.push_back(tok);
    }
  }
  return out;
}

// One candidate edit: replace (or insert before, or delete) position i.
struct Edit {
  enum Kind { kReplace, kInsert, kDelete } kind;
  std::size_t pos;
  std::vector<std::string> choices;
};

Tokens apply_edit(const Tokens& s, const Edit& e, Rng& rng) {
  Tokens t = s;
  switch (e.kind) {
    case Edit::kReplace: t[e.pos] = pick(e.choices, rng); break;
    case Edit::kInsert: t.insert(t.begin() + static_cast<std::ptrdiff_t>(e.pos), pick(e.choices, rng)); break;
    case Edit::kDelete: t.erase(t.begin() + static_cast<std::ptrdiff_t>(e.pos)); break;
  }
  return t;
}

std::vector<Edit> candidate_edits(const SynthGrammar& g, const Tokens& s, std::size_t label, Task task) {
  std::vector<Edit> edits;
  for (std::size_t i = 0; i < s.size(); ++i) {
    const std::string& w = s[i];
    if (task == Task::kNli) {
      if (label == 0) {
        if (g.is_modifier(w)) edits.push_back({Edit::kDelete, i, {}});
        auto hyp = g.hypernyms_of(w);
        if (!hyp.empty()) edits.push_back({Edit::kReplace, i, hyp});
      } else if (label == 1) {
        if (g.is_noun(w) && (i == 0 || !g.is_modifier(s[i - 1]))) {
          edits.push_back({Edit::kInsert, i, g.neutral_modifiers});
        }
      } else if (auto a = g.antonym_of(w)) {
        edits.push_back({Edit::kReplace, i, {*a}});
      }
    } else if (label == 1) {
      if (auto a = g.antonym_of(w)) edits.push_back({Edit::kReplace, i, {*a}});
      if (const auto* cat = noun_category(g, w)) {
        std::vector<std::string> others;
        for (const auto& o : *cat) {
          if (o != w && g.synonym_of(w) != o) others.push_back(o);
        }
        if (!others.empty()) edits.push_back({Edit::kReplace, i, others});
      }
    }
  }
  return edits;
}

}  // namespace

std::optional<Tokens> apply_relation(const SynthGrammar& g, const Tokens& source, std::size_t label,
                                     Task task, Rng& rng) {
  if (label >= label_names(task).size()) throw DomainError("label out of range for task");
  if (task == Task::kParaphrase && label == 0) {
    // Identity or one-or-more synonym substitutions.
    std::vector<std::size_t> swappable;
    for (std::size_t i = 0; i < source.size(); ++i) {
      if (g.synonym_of(source[i])) swappable.push_back(i);
    }
    Tokens t = source;
    if (swappable.empty() || std::bernoulli_distribution(0.25)(rng)) return t;
    std::bernoulli_distribution coin(0.5);
    bool changed = false;
    for (std::size_t i : swappable) {
      if (coin(rng)) {
        t[i] = *g.synonym_of(source[i]);
        changed = true;
      }
    }
    if (!changed) {
      const std::size_t i = pick(swappable, rng);
      t[i] = *g.synonym_of(source[i]);
    }
    return t;
  }
  auto edits = candidate_edits(g, source, label, task);
  if (edits.empty()) return std::nullopt;
  return apply_edit(source, pick(edits, rng), rng);
}

std::optional<std::size_t> rule_oracle_label(const SynthGrammar& g, const Tokens& source,
                                             const Tokens& target, Task task) {
  const auto lex = g.lexicon();
  for (const auto* s : {&source, &target}) {
    if (s->empty()) return std::nullopt;
    for (const auto& w : *s) {
      if (!lex.count(w)) return std::nullopt;
    }
  }
  auto first_mismatch = [](const Tokens& a, const Tokens& b) {
    std::size_t i = 0;
    while (i < a.size() && i < b.size() && a[i] == b[i]) ++i;
    return i;
  };
  auto without = [](Tokens t, std::size_t i) {
    t.erase(t.begin() + static_cast<std::ptrdiff_t>(i));
    return t;
  };
  std::vector<std::size_t> diffs;
  if (source.size() == target.size()) {
    for (std::size_t i = 0; i < source.size(); ++i) {
      if (source[i] != target[i]) diffs.push_back(i);
    }
  }

  if (task == Task::kNli) {
    if (target.size() + 1 == source.size()) {
      const std::size_t i = first_mismatch(source, target);
      if (without(source, i) == target && g.is_modifier(source[i])) return 0;
      return std::nullopt;
    }
    if (source.size() + 1 == target.size()) {
      const std::size_t i = first_mismatch(source, target);
      if (without(target, i) == source && contains(g.neutral_modifiers, target[i]) &&
          i + 1 < target.size() && g.is_noun(target[i + 1])) {
        return 1;
      }
      return std::nullopt;
    }
    if (diffs.size() != 1) return std::nullopt;
    const std::string& a = source[diffs[0]];
    const std::string& b = target[diffs[0]];
    const auto hyp = g.hypernyms_of(a);
    if (contains(hyp, b)) return 0;
    if (g.antonym_of(a) == b) return 2;
    return std::nullopt;
  }

  if (source.size() != target.size()) return std::nullopt;
  if (std::all_of(diffs.begin(), diffs.end(),
                  [&](std::size_t i) { return g.synonym_of(source[i]) == target[i]; })) {
    return 0;
  }
  if (diffs.size() != 1) return std::nullopt;
  const std::string& a = source[diffs[0]];
  const std::string& b = target[diffs[0]];
  if (g.antonym_of(a) == b) return 1;
  const auto* cat = noun_category(g, a);
  if (cat && cat == noun_category(g, b) && g.synonym_of(a) != b) return 1;
  return std::nullopt;
}

SynthSets synth_dataset(const SynthGrammar& g, std::size_t n_labeled, std::size_t n_unlabeled,
                        std::size_t n_heldout, Task task, Rng& rng) {
  g.validate();
  const std::size_t total = n_labeled + n_unlabeled + n_heldout;
  if (total == 0) throw DomainError("synth_dataset: nothing to generate");
  if (static_cast<double>(total) > 0.5 * g.capacity()) {
    throw DomainError("synth_dataset: " + std::to_string(total) +
                      " distinct sources exceed the grammar capacity");
  }
  const std::size_t num_labels = label_names(task).size();
  std::unordered_set<std::string> seen;     // every source so far
  std::unordered_set<std::string> surface;  // training sources and targets
  SynthSets out;
  std::uniform_int_distribution<std::size_t> label_dist(0, num_labels - 1);
  for (std::size_t n = 0; n < total; ++n) {
    const std::size_t y = label_dist(rng);
    std::optional<TextPair> pair;
    for (int attempt = 0; attempt < 100000 && !pair; ++attempt) {
      Tokens s = instantiate(g, pick(g.templates, rng), rng);
      const std::string key = join_tokens(s);
      if (seen.count(key)) continue;
      auto t = apply_relation(g, s, y, task, rng);
      if (!t) continue;
      const bool heldout = n >= n_labeled + n_unlabeled;
      if (heldout && (surface.count(key) || surface.count(join_tokens(*t)))) continue;
      seen.insert(key);
      if (!heldout) {
        surface.insert(key);
        surface.insert(join_tokens(*t));
      }
      pair = TextPair{std::move(s), std::move(*t), y};
    }
    if (!pair) throw DomainError("synth_dataset: grammar capacity exhausted");
    if (n < n_labeled) {
      out.labeled.push_back(std::move(*pair));
    } else if (n < n_labeled + n_unlabeled) {
      out.unlabeled_gold.push_back(y);
      pair->label.reset();
      out.unlabeled.push_back(std::move(*pair));
    } else {
      out.heldout.push_back(std::move(*pair));
    }
  }
  return out;
}

}  // namespace cslvm::data
