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

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include "cslvm/error.h"

namespace cslvm::data {
namespace {

Tokens t(std::string_view s) { return split_tokens(s); }

TEST_CASE("vocab ranks by frequency with lexicographic ties") {
  std::vector<Tokens> corpus = {t("a a b"), t("c b a")};
  Vocab v = Vocab::build(corpus, 10);
  CHECK(v.size() == 7);
  CHECK(v.id("a") == 4);
  CHECK(v.id("b") == 5);
  CHECK(v.id("c") == 6);
  CHECK(v.token(kEndId) == "</s>");

  std::vector<Tokens> ties = {t("z y x")};
  Vocab w = Vocab::build(ties, 10);
  CHECK(w.id("x") < w.id("y"));
  CHECK(w.id("y") < w.id("z"));
}

TEST_CASE("vocab cap, unknown fallback, empty corpus") {
  std::vector<Tokens> corpus = {t("a a b")};
  Vocab v = Vocab::build(corpus, 5);
  CHECK(v.size() == 5);
  CHECK(v.id("b") == kUnkId);
  CHECK(v.id("never") == kUnkId);
  std::vector<Tokens> empty;
  CHECK_THROWS_AS(Vocab::build(empty, 10), DomainError);
  std::vector<Tokens> blank = {Tokens{}};
  CHECK_THROWS_AS(Vocab::build(blank, 10), DomainError);
}

TEST_CASE("vocab encode truncates and decode stops at end") {
  std::vector<Tokens> corpus = {t("a b")};
  Vocab v = Vocab::build(corpus, 10);
  Tokens longer(100, "a");
  CHECK(v.encode(longer).size() == kMaxSequenceLength);
  std::vector<std::size_t> ids = {kStartId, 4, 5, kEndId, 4};
  CHECK(v.decode(ids) == t("a b"));
  CHECK(Vocab::from_tokens(v.tokens()) == v);
  CHECK_THROWS_AS(Vocab::from_tokens({"a", "b", "c", "d"}), FormatError);
}

TEST_CASE("labeled TSV parses with label ids") {
  std::istringstream in("a b\tc d\tentailment\n");
  auto pairs = parse_pairs(in, true, false, Task::kNli);
  REQUIRE(pairs.size() == 1);
  CHECK(pairs[0].source == t("a b"));
  CHECK(pairs[0].target == t("c d"));
  CHECK(pairs[0].label == 0u);
}

TEST_CASE("TSV errors name the line") {
  std::istringstream three("a\tb\n\nc d\te\tneutral\n");
  try {
    parse_pairs(three, false, false, Task::kNli, "u.tsv");
    FAIL("expected a format error");
  } catch (const FormatError& e) {
    CHECK(std::string(e.what()).find("u.tsv:3") != std::string::npos);
  }
  std::istringstream bad_label("a\tb\tmaybe\n");
  CHECK_THROWS_AS(parse_pairs(bad_label, true, false, Task::kNli), FormatError);
  std::istringstream empty_field("\tb\tneutral\n");
  CHECK_THROWS_AS(parse_pairs(empty_field, true, false, Task::kNli), FormatError);
}

TEST_CASE("swap augmentation doubles and is an involution") {
  std::istringstream in("a b\tc d\tparaphrase\n");
  auto pairs = parse_pairs(in, true, true, Task::kParaphrase);
  REQUIRE(pairs.size() == 2);
  CHECK(pairs[1].source == t("c d"));
  CHECK(pairs[1].target == t("a b"));
  CHECK(pairs[1].label == pairs[0].label);
  auto twice = swap_pairs(swap_pairs(pairs));
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    CHECK(twice[i].source == pairs[i].source);
    CHECK(twice[i].target == pairs[i].target);
  }
}

TEST_CASE("TSV round trip") {
  std::vector<TextPair> pairs = {{t("a b"), t("c"), 2}, {t("d"), t("e f"), 0}};
  std::stringstream io;
  write_pairs(io, pairs, Task::kNli);
  auto back = parse_pairs(io, true, false, Task::kNli);
  REQUIRE(back.size() == 2);
  CHECK(back[0].label == 2u);
  CHECK(back[1].target == t("e f"));
}

std::vector<PairExample> numbered(std::size_t n) {
  std::vector<PairExample> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back({{4 + i % 3}, {5, 6}, i % 3});
  return out;
}

TEST_CASE("batches partition a shuffled pass") {
  auto ex = numbered(10);
  Rng rng(3);
  auto bs = batches(ex, 4, rng);
  REQUIRE(bs.size() == 3);
  CHECK(bs[0].size() == 4);
  CHECK(bs[1].size() == 4);
  CHECK(bs[2].size() == 2);
  CHECK(bs[0].labels.size() == 4);
  Rng a(9), b(9);
  auto x = batches(ex, 3, a), y = batches(ex, 3, b);
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(x[i].source.ids == y[i].source.ids);
  CHECK_THROWS_AS(batches(ex, 0, rng), ConfigError);
}

TEST_CASE("unlabeled examples produce label-free batches") {
  auto ex = hide_labels(numbered(4));
  std::vector<std::size_t> idx = {0, 1};
  CHECK(make_batch(ex, idx).labels.empty());
}

TEST_CASE("batch stream covers each epoch and resumes from its cursor") {
  std::vector<PairExample> pool;
  for (std::size_t i = 0; i < 7; ++i) pool.push_back({{4 + i}, {4}, std::nullopt});
  BatchStream s(&pool, 3, 42);
  std::multiset<std::size_t> seen;
  for (int i = 0; i < 3; ++i) {
    Batch b = s.next();
    for (std::size_t r = 0; r < b.size(); ++r) seen.insert(b.source.ids[r]);
  }
  CHECK(seen.size() == 7);
  CHECK(std::set<std::size_t>(seen.begin(), seen.end()).size() == 7);
  s.next();
  BatchStream resumed(&pool, 3, 42);
  resumed.seek(s.epoch(), s.cursor());
  for (int i = 0; i < 5; ++i) CHECK(s.next().source.ids == resumed.next().source.ids);
  CHECK_THROWS_AS(BatchStream().next(), DomainError);
}

TEST_CASE("default grammar is well formed and about 120 tokens") {
  SynthGrammar g = default_grammar();
  CHECK_NOTHROW(g.validate());
  CHECK(g.templates.size() == 6);
  CHECK(g.lexicon().size() >= 100);
  CHECK(g.lexicon().size() <= 140);
  for (const auto& [a, b] : g.antonyms) CHECK(g.synonym_of(a) != b);
  CHECK(g.hypernyms_of("boy") == std::vector<std::string>{"child", "person"});
}

TEST_CASE("grammar text round trip and errors") {
  SynthGrammar g = default_grammar();
  std::stringstream io;
  write_grammar(io, g);
  SynthGrammar back = parse_grammar(io);
  CHECK(back.agents == g.agents);
  CHECK(back.hypernym == g.hypernym);
  CHECK(back.templates == g.templates);

  std::istringstream no_header("agents = a\n");
  CHECK_THROWS_AS(parse_grammar(no_header), FormatError);
  std::istringstream cyclic(
      "CSLVM-GRAMMAR 1\nagents = a\nactions = v\nobjects = o\nmodifiers = m\n"
      "hypernym = a b\nhypernym = b a\ntemplate = {agent} {action} {object}\n");
  CHECK_THROWS_AS(parse_grammar(cyclic), ConfigError);
  std::istringstream clash(
      "CSLVM-GRAMMAR 1\nagents = a\nactions = v\nobjects = o\nmodifiers = m n\n"
      "antonym = m n\nsynonym = n m\ntemplate = {agent} {action} {object}\n");
  CHECK_THROWS_AS(parse_grammar(clash), ConfigError);
  std::istringstream slot(
      "CSLVM-GRAMMAR 1\nagents = a\nactions = v\nobjects = o\nmodifiers = m\ntemplate = {colour}\n");
  CHECK_THROWS_AS(parse_grammar(slot), ConfigError);
}

TEST_CASE("entailment rule drops a modifier or generalises a noun") {
  SynthGrammar g = default_grammar();
  Rng rng(1);
  const Tokens src = t("the tall man cuts the metal");
  std::set<std::string> outs;
  for (int i = 0; i < 200; ++i) outs.insert(join_tokens(*apply_relation(g, src, 0, Task::kNli, rng)));
  CHECK(outs.count("the man cuts the metal"));
  CHECK(outs.count("the tall person cuts the metal"));
  CHECK(outs.count("the tall man cuts the material"));
  for (const auto& o : outs) CHECK(rule_oracle_label(g, src, t(o), Task::kNli) == 0u);
}

TEST_CASE("relations without an applicable rule return nothing") {
  SynthGrammar g = default_grammar();
  Rng rng(2);
  // no antonym-bearing word
  CHECK_FALSE(apply_relation(g, t("the man cuts the metal"), 2, Task::kNli, rng).has_value());
}

TEST_CASE("rule oracle edge cases") {
  SynthGrammar g = default_grammar();
  const Tokens s = t("the tall man cuts the metal");
  CHECK(rule_oracle_label(g, s, s, Task::kParaphrase) == 0u);
  CHECK(rule_oracle_label(g, s, t("the short man cuts the metal"), Task::kNli) == 2u);
  CHECK(rule_oracle_label(g, s, t("the tall man cuts the red metal"), Task::kNli) == 1u);
  CHECK(rule_oracle_label(g, s, t("the tall man cuts the zeppelin"), Task::kNli) == std::nullopt);
  CHECK(rule_oracle_label(g, s, t("the tall man cuts the wood"), Task::kNli) == std::nullopt);
  CHECK(rule_oracle_label(g, s, t("the tall man cuts the wood"), Task::kParaphrase) == 1u);
  CHECK(rule_oracle_label(g, t("the big boy cuts the metal"), t("the large lad cuts the metal"),
                          Task::kParaphrase) == 0u);
}

TEST_CASE("synthetic sets: oracle agrees, labels uniform, held-out disjoint") {
  SynthGrammar g = default_grammar();
  for (Task task : {Task::kNli, Task::kParaphrase}) {
    Rng rng(7);
    SynthSets sets = synth_dataset(g, 3000, 500, 300, task, rng);
    CHECK(sets.labeled.size() == 3000);
    CHECK(sets.unlabeled.size() == 500);
    CHECK(sets.unlabeled_gold.size() == 500);
    CHECK(sets.heldout.size() == 300);

    const std::size_t k = label_names(task).size();
    std::vector<double> counts(k, 0.0);
    std::size_t agree = 0;
    for (const auto& p : sets.labeled) {
      counts[*p.label] += 1.0;
      agree += rule_oracle_label(g, p.source, p.target, task) == p.label;
    }
    CHECK(agree == sets.labeled.size());
    for (std::size_t i = 0; i < sets.unlabeled.size(); ++i) {
      CHECK_FALSE(sets.unlabeled[i].label.has_value());
      CHECK(rule_oracle_label(g, sets.unlabeled[i].source, sets.unlabeled[i].target, task) ==
            sets.unlabeled_gold[i]);
    }
    const double p = 1.0 / static_cast<double>(k);
    const double se = std::sqrt(p * (1 - p) / 3000.0);
    for (double c : counts) CHECK(std::abs(c / 3000.0 - p) < 3 * se);

    std::set<std::string> train;
    for (const auto* set : {&sets.labeled, &sets.unlabeled}) {
      for (const auto& q : *set) {
        train.insert(join_tokens(q.source));
        train.insert(join_tokens(q.target));
      }
    }
    for (const auto& q : sets.heldout) {
      CHECK_FALSE(train.count(join_tokens(q.source)));
      CHECK_FALSE(train.count(join_tokens(q.target)));
    }
  }
}

TEST_CASE("synthetic generation is seed-deterministic and capacity-bounded") {
  SynthGrammar g = default_grammar();
  Rng a(5), b(5);
  auto x = synth_dataset(g, 20, 5, 5, Task::kNli, a);
  auto y = synth_dataset(g, 20, 5, 5, Task::kNli, b);
  for (std::size_t i = 0; i < 20; ++i) CHECK(x.labeled[i].target == y.labeled[i].target);

  std::istringstream small(
      "CSLVM-GRAMMAR 1\nagents = a\nactions = v\nobjects = o\nmodifiers = m\n"
      "template = {agent} {action} {object}\n");
  SynthGrammar tiny = parse_grammar(small);
  Rng rng(1);
  CHECK_THROWS_AS(synth_dataset(tiny, 5, 0, 0, Task::kNli, rng), DomainError);
}

}  // namespace
}  // namespace cslvm::data
