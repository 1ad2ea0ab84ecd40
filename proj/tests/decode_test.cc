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

#include <doctest.h>

#include <cmath>
#include <sstream>

#include "cslvm/error.h"
#include "cslvm/vmf.h"
#include "test_util.h"

namespace cslvm {
namespace {

using testing::random_tensor;

ModelConfig tiny() {
  ModelConfig c;
  c.vocab_size = 12;
  c.embed_dim = c.hidden_dim = 8;
  c.label_dim = 3;
  c.latent_dim = 6;
  c.classifier_hidden = 10;
  return c;
}

Model random_model(std::uint64_t seed, double range = 1.0) {
  Rng rng(seed);
  Model m(tiny(), rng);
  for (ag::Parameter* p : m.parameters()) p->value = random_tensor(p->value.shape(), rng, -range, range);
  return m;
}

Tensor unit_row(Rng& rng, std::size_t m) {
  Tensor z({1, m});
  double n = 0.0;
  std::normal_distribution<double> g;
  for (double& v : z.values()) {
    v = g(rng);
    n += v * v;
  }
  for (double& v : z.values()) v /= std::sqrt(n);
  return z;
}

TEST_CASE("length penalty") {
  CHECK(length_penalty(1, 0.7) == 1.0);
  CHECK(std::abs(length_penalty(7, 0.7) - std::pow(2.0, 0.7)) < 1e-12);
  CHECK(std::abs(length_penalty(7, 0.7) - 1.62450) < 1e-5);
  CHECK(length_penalty(30, 0.0) == 1.0);
}

TEST_CASE("decode config validation") {
  DecodeConfig c;
  c.beam = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c.beam = 2;
  c.alpha = -0.1;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  Model m = random_model(1);
  CHECK_THROWS_AS(beam_search(m, 0, Tensor({1, 6}), DecodeConfig{0}), ConfigError);
  CHECK_THROWS_AS(beam_search(m, 3, Tensor({1, 6}), DecodeConfig{}), DomainError);
  CHECK_THROWS_AS(beam_search(m, 0, Tensor({1, 5}), DecodeConfig{}), ShapeError);
}

TEST_CASE("beam width one equals greedy decoding") {
  Rng rng(2);
  for (int i = 0; i < 100; ++i) {
    Model m = random_model(100 + static_cast<std::uint64_t>(i), 1.5);
    const std::size_t y = static_cast<std::size_t>(i % 3);
    Tensor z = unit_row(rng, 6);
    DecodeConfig c;
    c.beam = 1;
    Hypothesis b = beam_search(m, y, z, c);
    Hypothesis g = greedy_decode(m, y, z, c.max_len);
    CHECK(b.tokens == g.tokens);
    CHECK(b.log_prob == g.log_prob);
  }
}

TEST_CASE("beam hypotheses end with the end token or hit the length cap") {
  Rng rng(3);
  for (int i = 0; i < 20; ++i) {
    Model m = random_model(200 + static_cast<std::uint64_t>(i));
    DecodeConfig c;
    c.beam = 4;
    c.max_len = 6;
    Hypothesis h = beam_search(m, 1, unit_row(rng, 6), c);
    REQUIRE_FALSE(h.tokens.empty());
    CHECK((h.tokens.back() == kEndId || h.tokens.size() == c.max_len));
    CHECK(h.tokens.size() <= c.max_len);
    CHECK(std::isfinite(h.log_prob));
    CHECK(h.log_prob <= 0.0);
    CHECK(h.score == doctest::Approx(h.log_prob / length_penalty(h.tokens.size(), c.alpha)));
    CHECK(beam_search(m, 1, unit_row(rng, 6), c).tokens.size() >= 1);
  }
}

TEST_CASE("beam search is deterministic") {
  Model m = random_model(4);
  Rng rng(4);
  Tensor z = unit_row(rng, 6);
  Hypothesis a = beam_search(m, 2, z, DecodeConfig{});
  Hypothesis b = beam_search(m, 2, z, DecodeConfig{});
  CHECK(a.tokens == b.tokens);
  CHECK(a.score == b.score);
}

// Decoder wired so that <s> -> 4 -> </s> is nearly certain.
Model chain_model() {
  Rng rng(5);
  Model m(tiny(), rng);
  for (ag::Parameter* p : m.parameters()) p->value.fill(0.0);
  const std::size_t h = 8;
  Tensor& e = m.word_embedding->value;
  e.at(kStartId, 0) = 20.0;
  e.at(4, 1) = 20.0;
  e.at(kEndId, 2) = 20.0;
  Tensor& w = m.decoder.weight->value;
  w.at(0, 2 * h + 1) = 1.0;  // <s> feeds cell unit 1, read out as token 4
  w.at(1, 2 * h + 2) = 1.0;  // 4 feeds cell unit 2, read out as </s>
  Tensor& b = m.decoder.bias->value;
  for (std::size_t j = 0; j < h; ++j) {
    b[j] = 10.0;           // input gate open
    b[h + j] = -10.0;      // forget gate closed
    b[3 * h + j] = 10.0;   // output gate open
  }
  return m;
}

TEST_CASE("a deterministic decoder path wins for every beam width") {
  Model m = chain_model();
  Rng rng(6);
  const std::vector<std::size_t> expect = {4, kEndId};
  for (std::size_t beam = 1; beam <= 12; ++beam) {
    DecodeConfig c;
    c.beam = beam;
    Hypothesis hyp = beam_search(m, beam % 3, unit_row(rng, 6), c);
    CHECK(hyp.tokens == expect);
    CHECK(hyp.log_prob > -1e-4);
  }
  CHECK(greedy_decode(m, 0, unit_row(rng, 6), 20).tokens == expect);
}

TEST_CASE("distinct-n hand examples") {
  std::vector<data::Tokens> a = {{"a", "a"}, {"a", "b"}};
  CHECK(distinct_n(a, 1) == 0.5);
  std::vector<data::Tokens> b = {{"a", "b", "c"}};
  CHECK(distinct_n(b, 2) == 1.0);
  std::vector<data::Tokens> rep(5, data::Tokens{"x", "y", "x", "z"});
  CHECK(distinct_n(rep, 1) == 3.0 / 20.0);
  std::vector<data::Tokens> shortish = {{"a"}, {"b"}};
  CHECK_THROWS_AS(distinct_n(shortish, 2), DomainError);
  CHECK_THROWS_AS(distinct_n(std::span<const data::Tokens>{}, 1), DomainError);
}

TEST_CASE("distinct-n stays in (0, 1] and duplicates never raise it") {
  Rng rng(7);
  std::uniform_int_distribution<int> len(1, 6), tok(0, 5);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<data::Tokens> s(static_cast<std::size_t>(len(rng)));
    for (auto& sent : s) {
      sent.resize(static_cast<std::size_t>(len(rng)));
      for (auto& w : sent) w = std::string(1, static_cast<char>('a' + tok(rng)));
    }
    for (std::size_t n = 1; n <= 2; ++n) {
      double d;
      try {
        d = distinct_n(s, n);
      } catch (const DomainError&) {
        continue;
      }
      CHECK(d > 0.0);
      CHECK(d <= 1.0);
      auto dup = s;
      dup.push_back(s[static_cast<std::size_t>(trial) % s.size()]);
      CHECK(distinct_n(dup, n) <= d);
    }
  }
}

std::vector<data::PairExample> random_pairs(std::size_t n, Rng& rng, bool random_labels) {
  std::uniform_int_distribution<std::size_t> len(1, 6), tok(4, 11), lab(0, 2);
  std::vector<data::PairExample> out(n);
  for (auto& e : out) {
    e.source.resize(len(rng));
    e.target.resize(len(rng));
    for (auto& t : e.source) t = tok(rng);
    for (auto& t : e.target) t = tok(rng);
    e.label = random_labels ? lab(rng) : 1;
  }
  return out;
}

TEST_CASE("accuracy") {
  Rng rng(8);
  Model m = random_model(9);
  m.out_weight->value.fill(0.0);
  m.out_bias->value = Tensor::matrix(1, 3, {0.0, 50.0, 0.0});
  auto gold = random_pairs(300, rng, false);
  CHECK(accuracy(m, gold) == 1.0);

  m.out_bias->value.fill(0.0);
  for (std::size_t p : predict(m, gold)) CHECK(p == 0);  // all tied

  Model r = random_model(10, 0.5);
  auto mixed = random_pairs(3000, rng, true);
  const double acc = accuracy(r, mixed);
  const double se = std::sqrt((1.0 / 3.0) * (2.0 / 3.0) / 3000.0);
  CHECK(std::abs(acc - 1.0 / 3.0) < 3.0 * se);

  CHECK_THROWS_AS(accuracy(m, std::span<const data::PairExample>{}), DomainError);
}

TEST_CASE("artificial dataset cardinality and determinism") {
  Model m = random_model(11);
  std::vector<std::string> words = {"a", "b", "c", "d", "e", "f", "g", "h"};
  data::Vocab vocab = data::Vocab::from_tokens({"<pad>", "<unk>", "<s>", "</s>", "a", "b", "c", "d", "e", "f", "g", "h"});
  Rng pick(12);
  std::vector<data::Tokens> sources(100);
  for (auto& s : sources) {
    s.resize(1 + pick() % 5);
    for (auto& w : s) w = words[pick() % words.size()];
  }
  DecodeConfig c;
  c.beam = 3;
  c.max_len = 8;
  Rng r1(13), r2(13);
  GeneratedSet a = build_artificial_dataset(m, vocab, sources, 50.0, c, r1);
  GeneratedSet b = build_artificial_dataset(m, vocab, sources, 50.0, c, r2);
  REQUIRE(a.size() == 300);
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].target == b[i].target);
    CHECK(a[i].label == i % 3);
    CHECK(a[i].source == sources[i / 3]);
    CHECK(a[i].target.size() <= c.max_len);
  }
}

TEST_CASE("rule-generated targets are fully consistent") {
  data::SynthGrammar g = data::default_grammar();
  for (data::Task task : {data::Task::kNli, data::Task::kParaphrase}) {
    Rng rng(14);
    data::SynthSets sets = data::synth_dataset(g, 150, 0, 0, task, rng);
    GeneratedSet gen;
    for (const auto& p : sets.labeled) gen.push_back({p.source, *p.label, p.target});
    GeneratedScore s = evaluate_generated(g, task, gen);
    CHECK(s.consistency == 1.0);
    CHECK(s.distinct1 > 0.0);
    CHECK(s.distinct2 <= 1.0);

    std::stringstream io;
    write_generated(io, gen, task);
    GeneratedSet back = read_generated(io, task);
    REQUIRE(back.size() == gen.size());
    for (std::size_t i = 0; i < gen.size(); ++i) {
      CHECK(back[i].source == gen[i].source);
      CHECK(back[i].label == gen[i].label);
      CHECK(back[i].target == gen[i].target);
    }
  }
  std::stringstream bad("a b\tentailment\n");
  CHECK_THROWS_AS(read_generated(bad, data::Task::kNli), FormatError);
}

TEST_CASE("surrogate consistency is the surrogate's accuracy on generated triples") {
  Model m = random_model(15);
  m.out_weight->value.fill(0.0);
  m.out_bias->value = Tensor::matrix(1, 3, {0.0, 0.0, 40.0});
  data::Vocab vocab = data::Vocab::from_tokens({"<pad>", "<unk>", "<s>", "</s>", "a", "b", "c", "d", "e", "f", "g", "h"});
  GeneratedSet set = {{{"a", "b"}, 2, {"c"}}, {{"a"}, 0, {"d", "e"}}, {{"b"}, 2, {}}, {{"h"}, 1, {"a", "a"}}};
  GeneratedScore s = evaluate_generated(m, vocab, set);
  CHECK(s.consistency == 0.5);
}

}  // namespace
}  // namespace cslvm
