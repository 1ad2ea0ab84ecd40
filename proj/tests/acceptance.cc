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

// Acceptance run: one PASS/FAIL line per criterion, exit 1 if any fails.
//
//   acceptance <cslvm-binary> [criterion numbers...]

#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "cslvm/data.h"
#include "cslvm/decode.h"
#include "cslvm/train.h"
#include "cslvm/verify.h"
#include "cslvm/vmf.h"

namespace fs = std::filesystem;
using namespace cslvm;

namespace {

// ---- pinned tolerances ----------------------------------------------------------

constexpr double kGradTol = 1e-4;
constexpr double kGradSeconds = 120.0;
constexpr std::size_t kSamplerDraws = 20000;
constexpr double kSamplerSeconds = 60.0;
constexpr std::size_t kKlTrials = 100;
constexpr double kTripletTol = 0.01;
constexpr std::size_t kEstimatorInstances = 20;
constexpr std::size_t kEstimatorDraws = 10000;
constexpr double kGainPoints = 0.05;
constexpr double kRunSeconds = 600.0;
constexpr std::size_t kDecodeInstances = 100;

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(const char* f, ...) __attribute__((format(printf, 1, 2)));
std::string fmt(const char* f, ...) {
  char buf[512];
  va_list ap;
  va_start(ap, f);
  std::vsnprintf(buf, sizeof buf, f, ap);
  va_end(ap);
  return buf;
}

double median3(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  return v[v.size() / 2];
}

// ---- 1-4: numerical checks --------------------------------------------------------

Outcome gradient_checks() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto entries = verify::gradcheck_suite(verify::gradcheck_dims("tiny"), 1);
  const double secs = seconds_since(t0);
  double worst = 0.0;
  std::string where;
  bool finite = true;
  for (const auto& e : entries) {
    finite = finite && std::isfinite(e.max_rel_error);
    if (e.max_rel_error > worst) {
      worst = e.max_rel_error;
      where = e.name;
    }
  }
  return {finite && worst < kGradTol && secs < kGradSeconds,
          fmt("%zu checks, max rel error %.2e (%s), %.1f s", entries.size(), worst, where.c_str(), secs)};
}

Outcome sampler_statistics() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto rows = verify::sampler_suite(kSamplerDraws, 2);
  const double secs = seconds_since(t0);
  std::size_t ok = 0;
  double worst_z = 0.0;
  for (const auto& r : rows) {
    ok += r.pass;
    worst_z = std::max(worst_z, std::abs(r.mean - r.target) / r.se);
  }
  return {ok == rows.size() && rows.size() == 9 && secs < kSamplerSeconds,
          fmt("%zu/%zu cells within 3 SE (worst %.2f SE), %.1f s", ok, rows.size(), worst_z, secs)};
}

Outcome kl_and_triplet() {
  const auto kc = verify::kl_constancy(50, 100.0, kKlTrials, 3);
  const std::vector<double> kappas = {100.0, 120.0, 150.0};
  const std::vector<double> targets = {23.57, 27.09, 31.60};
  const auto fit = vmf::infer_latent_dim(kappas, targets);
  bool each = fit.kl.size() == 3;
  for (std::size_t i = 0; each && i < 3; ++i) each = std::abs(fit.kl[i] - targets[i]) / targets[i] < kTripletTol;
  return {kc.identical && kc.trials == kKlTrials && each,
          fmt("KL %s over %zu posteriors; m* = %d, KL %.2f/%.2f/%.2f (max rel error %.1e)",
              kc.identical ? "bit-identical" : "NOT identical", kc.trials, fit.m, fit.kl.at(0), fit.kl.at(1),
              fit.kl.at(2), fit.max_rel_error)};
}

Outcome estimator_unbiasedness() {
  const auto rows = verify::estimator_suite(kEstimatorInstances, kEstimatorDraws, 4);
  std::size_t ok = 0;
  double worst = 0.0;
  for (const auto& r : rows) {
    ok += r.pass;
    worst = std::max(worst, std::abs(r.mean - r.enumerated) / r.se);
  }
  return {ok == kEstimatorInstances, fmt("%zu/%zu instances within 3 SE (worst %.2f SE), %zu draws each", ok,
                                         rows.size(), worst, kEstimatorDraws)};
}

// ---- 5-7: experiments on the synthetic task -----------------------------------------

struct Corpus {
  data::Vocab vocab;
  data::SynthSets sets;
  std::vector<data::PairExample> labeled, unlabeled, dev, none;
};

std::unique_ptr<Corpus> make_corpus(std::uint64_t seed) {
  auto c = std::make_unique<Corpus>();
  Rng rng(seed);
  c->sets = data::synth_dataset(data::default_grammar(), 200, 5000, 1000, data::Task::kNli, rng);
  std::vector<data::Tokens> sents = data::sentences_of(c->sets.labeled);
  for (auto& s : data::sentences_of(c->sets.unlabeled)) sents.push_back(std::move(s));
  c->vocab = data::Vocab::build(sents, 20000);
  c->labeled = data::encode_pairs(c->vocab, c->sets.labeled);
  c->unlabeled = data::hide_labels(data::encode_pairs(c->vocab, c->sets.unlabeled));
  c->dev = data::encode_pairs(c->vocab, c->sets.heldout);
  return c;
}

// Desk-scale dimensions; every other setting is the library default.
TrainConfig desk_config(std::uint64_t seed) {
  TrainConfig c;
  c.model.embed_dim = c.model.hidden_dim = 32;
  c.model.label_dim = 8;
  c.model.latent_dim = 16;
  c.model.classifier_hidden = 64;
  c.max_steps = 8000;  // keeps each run under the 10 minute budget on one core
  c.seed = seed;
  return c;
}

enum class Variant { kCslvm, kBaseline, kNoCrossSentence };

const char* variant_name(Variant v) {
  switch (v) {
    case Variant::kCslvm: return "cs-lvm";
    case Variant::kBaseline: return "baseline";
    case Variant::kNoCrossSentence: return "no-cross-sentence";
  }
  return "?";
}

struct RunResult {
  double accuracy = 0.0;
  double seconds = 0.0;
  std::uint64_t steps = 0;
  std::optional<Model> best;
};

class Experiments {
 public:
  const Corpus& corpus(std::uint64_t seed) {
    auto& c = corpora_[seed];
    if (!c) c = make_corpus(seed);
    return *c;
  }

  const RunResult& run(Variant v, std::uint64_t seed) {
    auto key = std::make_pair(static_cast<int>(v), seed);
    auto it = runs_.find(key);
    if (it != runs_.end()) return it->second;
    const Corpus& c = corpus(seed);
    TrainConfig cfg = desk_config(seed);
    if (v == Variant::kBaseline) cfg.objective.generative = false;
    if (v == Variant::kNoCrossSentence) cfg.objective.cross_sentence = false;
    const auto* pool = v == Variant::kBaseline ? &c.none : &c.unlabeled;
    const auto t0 = std::chrono::steady_clock::now();
    Trainer tr(cfg, c.vocab, {&c.labeled, pool, &c.dev});
    tr.run();
    RunResult r;
    r.seconds = seconds_since(t0);
    r.accuracy = tr.best_dev_accuracy();
    r.steps = tr.steps();
    r.best = tr.best_model();
    std::printf("  %-18s seed %llu: dev accuracy %.4f after %llu steps, %.0f s\n", variant_name(v),
                static_cast<unsigned long long>(seed), r.accuracy, static_cast<unsigned long long>(r.steps),
                r.seconds);
    std::fflush(stdout);
    return runs_.emplace(key, std::move(r)).first->second;
  }

 private:
  std::map<std::uint64_t, std::unique_ptr<Corpus>> corpora_;
  std::map<std::pair<int, std::uint64_t>, RunResult> runs_;
};

constexpr std::uint64_t kSeeds[] = {1, 2, 3};

struct Medians {
  double value = 0.0;
  double slowest = 0.0;
};

Medians median_over_seeds(Experiments& ex, Variant v) {
  std::vector<double> acc;
  double slowest = 0.0;
  for (std::uint64_t s : kSeeds) {
    const RunResult& r = ex.run(v, s);
    acc.push_back(r.accuracy);
    slowest = std::max(slowest, r.seconds);
  }
  return {median3(acc), slowest};
}

Outcome semi_supervised_gain(Experiments& ex) {
  const Medians cs = median_over_seeds(ex, Variant::kCslvm);
  const Medians base = median_over_seeds(ex, Variant::kBaseline);
  const double gain = cs.value - base.value;
  const double slowest = std::max(cs.slowest, base.slowest);
  return {gain >= kGainPoints && slowest < kRunSeconds,
          fmt("median dev accuracy cs-lvm %.4f vs baseline %.4f, gain %+.2f points (need >= %.0f); slowest run "
              "%.0f s",
              cs.value, base.value, 100.0 * gain, 100.0 * kGainPoints, slowest)};
}

Outcome cross_sentence_ablation(Experiments& ex) {
  const Medians cs = median_over_seeds(ex, Variant::kCslvm);
  const Medians off = median_over_seeds(ex, Variant::kNoCrossSentence);
  return {off.value < cs.value,
          fmt("median dev accuracy without cross-sentence %.4f vs with %.4f", off.value, cs.value)};
}

constexpr std::size_t kFinetuneSources = 100;
constexpr std::uint64_t kFinetuneSteps = 300;

GeneratedScore score_generation(const Model& m, const Corpus& c) {
  std::vector<data::Tokens> src;
  for (std::size_t i = 0; i < kFinetuneSources; ++i) src.push_back(c.sets.heldout[i].source);
  DecodeConfig dc;
  Rng rng(17);
  const GeneratedSet set = build_artificial_dataset(m, c.vocab, src, desk_config(1).objective.kappa, dc, rng);
  return evaluate_generated(data::default_grammar(), data::Task::kNli, set);
}

Model finetune(const Model& start, const Corpus& c, bool y, bool z, bool mu) {
  TrainConfig cfg = desk_config(1);
  cfg.constraints.use_y = y;
  cfg.constraints.use_z = z;
  cfg.constraints.use_mu = mu;
  cfg.max_steps = kFinetuneSteps;
  Trainer tr(cfg, c.vocab, start, {&c.labeled, &c.unlabeled, &c.dev});
  tr.begin_finetune();
  tr.run();
  return tr.model();
}

Outcome finetune_directions(Experiments& ex) {
  const Corpus& c = ex.corpus(1);
  const Model& trained = *ex.run(Variant::kCslvm, 1).best;
  const GeneratedScore before = score_generation(trained, c);
  const GeneratedScore ry = score_generation(finetune(trained, c, true, false, false), c);
  const GeneratedScore rmu = score_generation(finetune(trained, c, false, false, true), c);
  const GeneratedScore rz = score_generation(finetune(trained, c, false, true, false), c);
  auto not_lower = [](double after, double pre) { return !std::isnan(after) && !std::isnan(pre) && after >= pre; };
  const bool y_ok = ry.consistency > before.consistency;
  const bool mu_ok = not_lower(rmu.distinct1, before.distinct1) && not_lower(rmu.distinct2, before.distinct2);
  const bool z_ok = not_lower(rz.distinct1, before.distinct1) && not_lower(rz.distinct2, before.distinct2);
  return {y_ok && mu_ok && z_ok,
          fmt("consistency %.3f -> %.3f with R^y%s; distinct-1/2 %.3f/%.3f -> %.3f/%.3f with R^mu%s, -> "
              "%.3f/%.3f with R^z%s",
              before.consistency, ry.consistency, y_ok ? "" : " (FAIL)", before.distinct1, before.distinct2,
              rmu.distinct1, rmu.distinct2, mu_ok ? "" : " (FAIL)", rz.distinct1, rz.distinct2,
              z_ok ? "" : " (FAIL)")};
}

// ---- 8: decoding --------------------------------------------------------------------

Outcome decoding() {
  Rng rng(8);
  ModelConfig dims = verify::gradcheck_dims("tiny");
  std::size_t same = 0;
  for (std::size_t i = 0; i < kDecodeInstances; ++i) {
    Model m(dims, rng);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (ag::Parameter* p : m.parameters()) {
      for (double& v : p->value.values()) v = u(rng);
    }
    Tensor z({1, dims.latent_dim});
    double norm = 0.0;
    std::normal_distribution<double> g;
    for (double& v : z.values()) {
      v = g(rng);
      norm += v * v;
    }
    for (double& v : z.values()) v /= std::sqrt(norm);
    const std::size_t label = i % dims.num_labels;
    DecodeConfig dc;
    dc.beam = 1;
    same += beam_search(m, label, z, dc).tokens == greedy_decode(m, label, z, dc.max_len).tokens;
  }
  const double lp1 = length_penalty(1, 0.7);
  const double lp7 = length_penalty(7, 0.7);
  const bool lp_ok = std::abs(lp1 - 1.0) <= 1e-12 && std::abs(lp7 - std::pow(2.0, 0.7)) <= 1e-12;

  const std::vector<data::Tokens> a = {{"a", "b", "a", "b"}};
  const std::vector<data::Tokens> b = {{"the", "cat", "sat"}, {"the", "dog", "ran"}};
  const bool dn_ok = distinct_n(a, 1) == 0.5 && distinct_n(a, 2) == 2.0 / 3.0 && distinct_n(b, 1) == 5.0 / 6.0 &&
                     distinct_n(b, 2) == 1.0;
  return {same == kDecodeInstances && lp_ok && dn_ok,
          fmt("beam-1 = greedy on %zu/%zu; lp(1) = %.15g, lp(7) - 2^0.7 = %.1e; distinct-n examples %s", same,
              kDecodeInstances, lp1, lp7 - std::pow(2.0, 0.7), dn_ok ? "exact" : "WRONG")};
}

// ---- 9: reproducibility through the command line -------------------------------------

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

bool params_bit_equal(const std::map<std::string, Tensor>& a, const std::map<std::string, Tensor>& b) {
  if (a.size() != b.size()) return false;
  for (const auto& [name, t] : a) {
    auto it = b.find(name);
    if (it == b.end() || it->second.shape() != t.shape()) return false;
    if (std::memcmp(t.data(), it->second.data(), t.size() * sizeof(double)) != 0) return false;
  }
  return true;
}

Outcome reproducibility(const std::string& cli) {
  const fs::path dir = fs::temp_directory_path() / ("cslvm_acceptance_" + std::to_string(::getpid()));
  fs::remove_all(dir);
  fs::create_directories(dir);
  auto sh = [&](const std::string& args) {
    const std::string cmd = "CSLVM_LOG=quiet '" + cli + "' " + args;
    return std::system(cmd.c_str());
  };
  const std::string d = (dir / "data").string();
  const std::string common = " --labeled " + d + "/labeled.tsv --unlabeled " + d + "/unlabeled.tsv --dev " + d +
                             "/dev.tsv --embed-dim 16 --hidden-dim 16 --latent-dim 8 --label-dim 4"
                             " --classifier-hidden 16 --batch-size 16 --eval-interval 20 --seed 7";
  int rc = sh("synth-data --seed 7 --n-labeled 60 --n-unlabeled 200 --n-dev 60 --out " + d);
  rc |= sh("train" + common + " --max-steps 80 --out " + (dir / "a").string());
  rc |= sh("train" + common + " --max-steps 80 --out " + (dir / "b").string());
  rc |= sh("train" + common + " --max-steps 40 --out " + (dir / "c").string());
  rc |= sh("train" + common + " --max-steps 80 --checkpoint " + (dir / "c" / "checkpoint.bin").string() +
           " --out " + (dir / "c").string());
  if (rc != 0) return {false, "command line run failed"};

  const std::string csv_a = slurp(dir / "a" / "metrics.csv");
  const bool csv_same = !csv_a.empty() && csv_a == slurp(dir / "b" / "metrics.csv");
  const Checkpoint full = load_checkpoint((dir / "a" / "checkpoint.bin").string());
  const Checkpoint resumed = load_checkpoint((dir / "c" / "checkpoint.bin").string());
  const bool params_same = full.step == 80 && resumed.step == 80 && params_bit_equal(full.params, resumed.params);
  const bool resumed_csv = csv_a == slurp(dir / "c" / "metrics.csv");
  fs::remove_all(dir);
  return {csv_same && params_same && resumed_csv,
          fmt("metrics CSVs %s; resumed parameters %s; resumed metrics %s", csv_same ? "byte-identical" : "DIFFER",
              params_same ? "bit-identical" : "DIFFER", resumed_csv ? "identical" : "DIFFER")};
}

}  // namespace

int main(int argc, char** argv) {
  if (argc < 2) {
    std::fprintf(stderr, "usage: acceptance <cslvm-binary> [criterion numbers...]\n");
    return 2;
  }
  const std::string cli = argv[1];
  std::set<int> only;
  for (int i = 2; i < argc; ++i) only.insert(std::atoi(argv[i]));
  auto wanted = [&](int n) { return only.empty() || only.contains(n); };

  Experiments ex;
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria = {
      {"gradient checks", gradient_checks},
      {"vMF sampler statistics", sampler_statistics},
      {"KL constancy and latent dimension", kl_and_triplet},
      {"sampled L_u unbiased", estimator_unbiasedness},
      {"semi-supervised gain", [&] { return semi_supervised_gain(ex); }},
      {"cross-sentence ablation", [&] { return cross_sentence_ablation(ex); }},
      {"fine-tuning directions", [&] { return finetune_directions(ex); }},
      {"decoding", decoding},
      {"reproducibility", [&] { return reproducibility(cli); }},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int n = static_cast<int>(i) + 1;
    if (!wanted(n)) continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    failed += !o.pass;
    std::printf("[%s] %d. %s: %s\n", o.pass ? "PASS" : "FAIL", n, criteria[i].first, o.detail.c_str());
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
