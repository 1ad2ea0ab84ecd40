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

// cslvm: synthetic data, training, fine-tuning, generation, evaluation and
// the numerical verification suites.
//
// Exit codes: 0 success, 1 failed run or verification, 2 usage error.

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "cslvm/data.h"
#include "cslvm/decode.h"
#include "cslvm/error.h"
#include "cslvm/train.h"
#include "cslvm/verify.h"
#include "cslvm/vmf.h"

namespace fs = std::filesystem;
using namespace cslvm;

namespace {

constexpr int kExitFail = 1;
constexpr int kExitUsage = 2;

// ---- logging ------------------------------------------------------------------------

enum class Level { kQuiet, kInfo, kDebug };
Level g_level = Level::kInfo;

Level parse_level(const char* s) {
  if (s == nullptr || *s == '\0') return Level::kInfo;
  const std::string v(s);
  if (v == "quiet") return Level::kQuiet;
  if (v == "info") return Level::kInfo;
  if (v == "debug") return Level::kDebug;
  throw ConfigError("CSLVM_LOG must be quiet, info or debug, got '" + v + "'");
}

template <typename... A>
void log_at(Level l, const char* fmt, A... args) {
  if (g_level < l) return;
  std::fprintf(stderr, "[cslvm] ");
  if constexpr (sizeof...(A) == 0) {
    std::fputs(fmt, stderr);
  } else {
    std::fprintf(stderr, fmt, args...);
  }
  std::fputc('\n', stderr);
}
#define LOG_INFO(...) log_at(Level::kInfo, __VA_ARGS__)
#define LOG_DEBUG(...) log_at(Level::kDebug, __VA_ARGS__)

void log_config(const std::string& text) {
  std::istringstream in(text);
  for (std::string line; std::getline(in, line);) LOG_INFO("config %s", line.c_str());
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open '" + path + "'");
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::ofstream open_out(const fs::path& p) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw FormatError("cannot write '" + p.string() + "'");
  return out;
}

// ---- config flags -------------------------------------------------------------------

// Command-line mirrors of the config keys; given flags win over --config.
struct Overrides {
  std::string config_path;
  std::map<std::string, std::string> values;  // key -> raw value
  bool no_cross_sentence = false;
  bool untie_encoders = false;
  bool no_generative = false;
  bool z_mean_direction = false;
};

void add_config_flags(CLI::App* app, Overrides& ov) {
  app->add_option("--config", ov.config_path, "Flat `key = value` config file");
  static const std::pair<const char*, const char*> kValued[] = {
      {"--seed", "seed"},
      {"--kappa", "kappa"},
      {"--lambda", "lambda"},
      {"--latent-dim", "latent_dim"},
      {"--batch-size", "batch_size"},
      {"--lr", "lr"},
      {"--finetune-lr", "finetune_lr"},
      {"--dropout-word", "dropout_word"},
      {"--dropout-cls", "dropout_cls"},
      {"--constraints", "constraints"},
      {"--mode", "mode"},
      {"--embed-dim", "embed_dim"},
      {"--hidden-dim", "hidden_dim"},
      {"--label-dim", "label_dim"},
      {"--classifier-hidden", "classifier_hidden"},
      {"--fusion", "fusion"},
      {"--optimizer", "optimizer"},
      {"--max-steps", "max_steps"},
      {"--eval-interval", "eval_interval"},
      {"--patience", "patience"},
      {"--clip-norm", "clip_norm"},
      {"--constraint-max-len", "constraint_max_len"},
      {"--gumbel-rate", "gumbel_rate"},
      {"--gumbel-floor", "gumbel_floor"},
  };
  for (const auto& [flag, key] : kValued) {
    app->add_option(flag, ov.values[key], std::string("Config key ") + key);
  }
  app->add_flag("--no-cross-sentence", ov.no_cross_sentence, "Decoder reconstructs the source (ablation)");
  app->add_flag("--untie-encoders", ov.untie_encoders, "Separate classifier and posterior encoders");
  app->add_flag("--no-generative", ov.no_generative, "Classifier-only baseline");
  app->add_flag("--z-mean-direction", ov.z_mean_direction, "R^z at the posterior mean direction");
}

void apply_overrides(const Overrides& ov, CLI::App* app, TrainConfig& cfg) {
  if (!ov.config_path.empty()) cfg.apply_text(read_file(ov.config_path));
  for (const auto& [key, value] : ov.values) {
    std::string flag = "--" + key;
    for (char& c : flag) c = c == '_' ? '-' : c;
    if (app->count(flag) > 0) cfg.set(key, value);
  }
  if (ov.no_cross_sentence) cfg.objective.cross_sentence = false;
  if (ov.untie_encoders) cfg.model.tie_encoders = false;
  if (ov.no_generative) cfg.objective.generative = false;
  if (ov.z_mean_direction) cfg.constraints.z_mean_direction = true;
}

void set_task_defaults(data::Task task, TrainConfig& cfg) {
  cfg.model.num_labels = data::label_names(task).size();
  cfg.model.fusion = task == data::Task::kNli ? Fusion::kNli : Fusion::kSymmetric;
}

// ---- shared helpers -----------------------------------------------------------------

struct Corpus {
  std::vector<data::TextPair> labeled, unlabeled, dev;
  std::vector<data::PairExample> lab, unl, dv;
};

void encode_corpus(const data::Vocab& vocab, Corpus& c) {
  c.lab = data::encode_pairs(vocab, c.labeled);
  c.unl = data::hide_labels(data::encode_pairs(vocab, c.unlabeled));
  c.dv = data::encode_pairs(vocab, c.dev);
}

Corpus load_corpus(const std::string& labeled, const std::string& unlabeled, const std::string& dev,
                   data::Task task, bool swap) {
  Corpus c;
  c.labeled = data::load_pairs(labeled, true, swap, task);
  if (!unlabeled.empty()) c.unlabeled = data::load_pairs(unlabeled, false, swap, task);
  if (dev.empty()) throw ConfigError("--dev is required");
  c.dev = data::load_pairs(dev, true, false, task);
  return c;
}

void save_run(const fs::path& out, const Trainer& tr) {
  save_checkpoint((out / "checkpoint.bin").string(), tr.checkpoint());
  std::ofstream m = open_out(out / "metrics.csv");
  write_metrics(m, tr.metrics());
}

// Steps to completion, saving at every evaluation so that a diverged run
// keeps its last good checkpoint.
int drive(Trainer& tr, const fs::path& out) {
  const std::uint64_t every = tr.config().eval_interval;
  std::size_t logged = tr.metrics().size();
  try {
    while (!tr.done()) {
      tr.step();
      if (tr.steps() % every == 0) {
        save_run(out, tr);
        const auto& rows = tr.metrics();
        for (; logged < rows.size(); ++logged) {
          const MetricsRow& r = rows[logged];
          if (r.dev_accuracy) {
            LOG_INFO("step %llu dev_accuracy %.4f", static_cast<unsigned long long>(r.step), *r.dev_accuracy);
          } else {
            LOG_DEBUG("step %llu %s loss %.6g gen %.6g disc %.6g unsup %.6g kl %.6g entropy %.6g",
                      static_cast<unsigned long long>(r.step), r.split.c_str(), r.loss_total, r.loss_gen,
                      r.loss_disc, r.loss_unsup, r.kl, r.entropy);
          }
        }
      }
    }
  } catch (const NumericError& e) {
    std::fprintf(stderr, "cslvm: diverged at step %llu: %s; last checkpoint kept in %s\n",
                 static_cast<unsigned long long>(tr.steps() + 1), e.what(), out.string().c_str());
    return kExitFail;
  }
  save_run(out, tr);
  LOG_INFO("finished at step %llu, best dev_accuracy %.4f", static_cast<unsigned long long>(tr.steps()),
           tr.best_dev_accuracy());
  return 0;
}

void prepare_out(const std::string& out) {
  if (out.empty()) throw ConfigError("--out is required");
  fs::create_directories(out);
}

data::SynthGrammar grammar_or_default(const std::string& path) {
  return path.empty() ? data::default_grammar() : data::load_grammar(path);
}

std::string fmt_or_empty(std::optional<double> v) {
  if (!v || std::isnan(*v)) return "";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.10g", *v);
  return buf;
}

// ---- subcommands --------------------------------------------------------------------

struct SynthArgs {
  std::string grammar, out, task = "nli";
  std::uint64_t seed = 1;
  std::size_t n_labeled = 200, n_unlabeled = 5000, n_dev = 1000;
};

int run_synth(const SynthArgs& a) {
  prepare_out(a.out);
  const data::Task task = data::parse_task(a.task);
  const data::SynthGrammar g = grammar_or_default(a.grammar);
  LOG_INFO("config task = %s", a.task.c_str());
  LOG_INFO("config seed = %llu", static_cast<unsigned long long>(a.seed));
  LOG_INFO("config counts = %zu labeled, %zu unlabeled, %zu dev", a.n_labeled, a.n_unlabeled, a.n_dev);
  Rng rng(a.seed);
  const data::SynthSets s = data::synth_dataset(g, a.n_labeled, a.n_unlabeled, a.n_dev, task, rng);
  const fs::path out(a.out);
  data::save_pairs((out / "labeled.tsv").string(), s.labeled, task);
  data::save_pairs((out / "unlabeled.tsv").string(), s.unlabeled, task);
  data::save_pairs((out / "dev.tsv").string(), s.heldout, task);
  std::ofstream gout = open_out(out / "grammar.txt");
  data::write_grammar(gout, g);
  LOG_INFO("wrote %s/{labeled,unlabeled,dev}.tsv and grammar.txt", a.out.c_str());
  return 0;
}

struct TrainArgs {
  Overrides ov;
  std::string labeled, unlabeled, dev, out, checkpoint, task = "nli";
  std::size_t max_vocab = 20000;
  bool swap = false;
};

int run_train(const TrainArgs& a, CLI::App* app) {
  prepare_out(a.out);
  const data::Task task = data::parse_task(a.task);
  std::optional<Checkpoint> ck;
  TrainConfig cfg;
  if (!a.checkpoint.empty()) {
    ck = load_checkpoint(a.checkpoint);
    if (ck->phase != "train") throw ConfigError("checkpoint is a fine-tuning run; use finetune");
    apply_overrides(a.ov, app, ck->config);
    ck->config.validate();
  } else {
    set_task_defaults(task, cfg);
    apply_overrides(a.ov, app, cfg);
    cfg.model.vocab_size = kNumSpecials + 1;  // placeholder until the vocabulary is built
    cfg.validate();
  }
  Corpus c = load_corpus(a.labeled, a.unlabeled, a.dev, task, a.swap);

  std::optional<Trainer> tr;
  if (ck) {
    encode_corpus(ck->vocab, c);
    log_config(ck->config.to_text());
    LOG_INFO("resuming %s at step %llu", a.checkpoint.c_str(), static_cast<unsigned long long>(ck->step));
    tr.emplace(Trainer::resume(std::move(*ck), {&c.lab, &c.unl, &c.dv}));
  } else {
    std::vector<data::Tokens> sents = data::sentences_of(c.labeled);
    for (auto& s : data::sentences_of(c.unlabeled)) sents.push_back(std::move(s));
    data::Vocab vocab = data::Vocab::build(sents, a.max_vocab);
    encode_corpus(vocab, c);
    cfg.model.vocab_size = vocab.size();
    cfg.validate();
    log_config(cfg.to_text());
    tr.emplace(cfg, std::move(vocab), TrainData{&c.lab, &c.unl, &c.dv});
  }
  LOG_INFO("data %zu labeled, %zu unlabeled, %zu dev", c.lab.size(), c.unl.size(), c.dv.size());
  {
    std::ofstream cf = open_out(fs::path(a.out) / "config.txt");
    cf << tr->config().to_text();
  }
  return drive(*tr, a.out);
}

int run_finetune(const TrainArgs& a, CLI::App* app) {
  prepare_out(a.out);
  if (a.checkpoint.empty()) throw ConfigError("--checkpoint is required");
  const data::Task task = data::parse_task(a.task);
  Checkpoint ck = load_checkpoint(a.checkpoint);
  apply_overrides(a.ov, app, ck.config);
  ck.config.validate();
  Corpus c = load_corpus(a.labeled, a.unlabeled, a.dev, task, a.swap);
  encode_corpus(ck.vocab, c);
  log_config(ck.config.to_text());

  std::optional<Trainer> tr;
  if (ck.phase == "finetune") {
    LOG_INFO("resuming fine-tuning at step %llu", static_cast<unsigned long long>(ck.step));
    tr.emplace(Trainer::resume(std::move(ck), {&c.lab, &c.unl, &c.dv}));
  } else {
    Model m = ck.to_model(true);
    tr.emplace(ck.config, ck.vocab, std::move(m), TrainData{&c.lab, &c.unl, &c.dv});
    tr->begin_finetune();
  }
  {
    std::ofstream cf = open_out(fs::path(a.out) / "config.txt");
    cf << tr->config().to_text();
  }
  return drive(*tr, a.out);
}

struct GenerateArgs {
  std::string checkpoint, sources, dev, out, task = "nli", kappa;
  std::uint64_t seed = 1;
  std::size_t beam = 10, max_len = 20, limit = 0;
  double alpha = 0.7;
  bool mean_direction = false, current = false;
};

std::vector<data::Tokens> load_sources(const GenerateArgs& a, data::Task task) {
  std::vector<data::Tokens> src;
  if (!a.sources.empty()) {
    std::istringstream in(read_file(a.sources));
    for (std::string line; std::getline(in, line);) {
      data::Tokens t = data::split_tokens(line);
      if (!t.empty()) src.push_back(std::move(t));
    }
  } else if (!a.dev.empty()) {
    for (auto& p : data::load_pairs(a.dev, true, false, task)) src.push_back(std::move(p.source));
  } else {
    throw ConfigError("generate needs --sources or --dev");
  }
  if (a.limit > 0 && src.size() > a.limit) src.resize(a.limit);
  if (src.empty()) throw DomainError("no source sentences");
  return src;
}

int run_generate(const GenerateArgs& a) {
  if (a.checkpoint.empty()) throw ConfigError("--checkpoint is required");
  if (a.out.empty()) throw ConfigError("--out is required");
  const data::Task task = data::parse_task(a.task);
  const Checkpoint ck = load_checkpoint(a.checkpoint);
  const Model model = ck.to_model(!a.current);
  double kappa = ck.config.objective.kappa;
  if (!a.kappa.empty()) kappa = std::stod(a.kappa);
  DecodeConfig dc;
  dc.beam = a.beam;
  dc.alpha = a.alpha;
  dc.max_len = a.max_len;
  dc.mean_direction = a.mean_direction;
  dc.validate();
  LOG_INFO("config beam = %zu", dc.beam);
  LOG_INFO("config alpha = %.17g", dc.alpha);
  LOG_INFO("config max_len = %zu", dc.max_len);
  LOG_INFO("config mean_direction = %s", dc.mean_direction ? "true" : "false");
  LOG_INFO("config kappa = %.17g", kappa);
  LOG_INFO("config seed = %llu", static_cast<unsigned long long>(a.seed));

  const std::vector<data::Tokens> src = load_sources(a, task);
  Rng rng(a.seed);
  const GeneratedSet set = build_artificial_dataset(model, ck.vocab, src, kappa, dc, rng);
  std::ofstream out = open_out(a.out);
  write_generated(out, set, task);
  LOG_INFO("wrote %zu generated pairs to %s", set.size(), a.out.c_str());
  return 0;
}

struct EvalArgs {
  std::string checkpoint, dev, generated, grammar, surrogate, task = "nli";
  std::uint64_t seed = 1;
  bool current = false;
};

int run_eval(const EvalArgs& a) {
  const data::Task task = data::parse_task(a.task);
  std::optional<double> acc, cons, d1, d2;
  if (!a.checkpoint.empty()) {
    if (a.dev.empty()) throw ConfigError("--checkpoint needs --dev");
    const Checkpoint ck = load_checkpoint(a.checkpoint);
    const auto dev = data::encode_pairs(ck.vocab, data::load_pairs(a.dev, true, false, task));
    acc = accuracy(ck.to_model(!a.current), dev);
  }
  if (!a.generated.empty()) {
    std::ifstream in(a.generated);
    if (!in) throw FormatError("cannot open '" + a.generated + "'");
    const GeneratedSet set = read_generated(in, task);
    GeneratedScore s;
    if (!a.surrogate.empty()) {
      const Checkpoint sk = load_checkpoint(a.surrogate);
      s = evaluate_generated(sk.to_model(true), sk.vocab, set);
    } else {
      s = evaluate_generated(grammar_or_default(a.grammar), task, set);
    }
    cons = s.consistency;
    d1 = s.distinct1;
    d2 = s.distinct2;
  }
  if (!acc && !cons) throw ConfigError("eval needs --checkpoint with --dev, or --generated");
  std::printf("accuracy,consistency,distinct1,distinct2\n%s,%s,%s,%s\n", fmt_or_empty(acc).c_str(),
              fmt_or_empty(cons).c_str(), fmt_or_empty(d1).c_str(), fmt_or_empty(d2).c_str());
  return 0;
}

int run_gradcheck(const std::string& dims, std::uint64_t seed) {
  LOG_INFO("config dims = %s", dims.c_str());
  LOG_INFO("config seed = %llu", static_cast<unsigned long long>(seed));
  const auto entries = verify::gradcheck_suite(verify::gradcheck_dims(dims), seed);
  bool ok = true;
  for (const auto& e : entries) {
    const bool pass = std::isfinite(e.max_rel_error) && e.max_rel_error < 1e-4;
    ok = ok && pass;
    std::printf("%-36s %.3e  %s%s\n", e.name.c_str(), e.max_rel_error, pass ? "ok" : "FAIL",
                pass ? "" : ("  at " + e.worst).c_str());
  }
  std::printf("gradcheck %s (%zu checks, tolerance 1e-4)\n", ok ? "passed" : "FAILED", entries.size());
  return ok ? 0 : kExitFail;
}

struct VmfArgs {
  std::uint64_t seed = 1;
  std::size_t samples = 20000, trials = 100;
  int latent_dim = 50;
  double kappa = 100.0;
};

int run_vmf_verify(const VmfArgs& a) {
  LOG_INFO("config seed = %llu", static_cast<unsigned long long>(a.seed));
  LOG_INFO("config samples = %zu", a.samples);
  bool ok = true;
  std::printf("sampler: mean of mu'z against the expected resultant length\n");
  for (const auto& r : verify::sampler_suite(a.samples, a.seed)) {
    ok = ok && r.pass;
    std::printf("  m=%-3d kappa=%-5g mean=%.6f target=%.6f se=%.2e  %s\n", r.m, r.kappa, r.mean, r.target,
                r.se, r.pass ? "ok" : "FAIL");
  }
  const auto kc = verify::kl_constancy(a.latent_dim, a.kappa, a.trials, a.seed);
  ok = ok && kc.identical;
  std::printf("kl constancy: m=%d kappa=%g kl=%.17g over %zu posteriors  %s\n", a.latent_dim, a.kappa, kc.kl,
              kc.trials, kc.identical ? "identical" : "FAIL");

  const std::vector<double> kappas = {100.0, 120.0, 150.0};
  const std::vector<double> targets = {23.57, 27.09, 31.60};
  const auto fit = vmf::infer_latent_dim(kappas, targets);
  const bool fit_ok = fit.max_rel_error < 0.01;
  ok = ok && fit_ok;
  std::printf("latent dimension m* = %d (max relative error %.3e)  %s\n", fit.m, fit.max_rel_error,
              fit_ok ? "ok" : "FAIL");
  for (std::size_t i = 0; i < kappas.size(); ++i) {
    std::printf("  kappa=%g kl=%.4f target=%.2f\n", kappas[i], fit.kl[i], targets[i]);
  }
  return ok ? 0 : kExitFail;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    g_level = parse_level(std::getenv("CSLVM_LOG"));
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "cslvm: %s\n", e.what());
    return kExitUsage;
  }

  CLI::App app{"Cross-sentence latent variable model for sequence-pair classification", "cslvm"};
  app.require_subcommand(1, 1);

  SynthArgs synth;
  auto* s = app.add_subcommand("synth-data", "Write labeled, unlabeled and dev TSV corpora from a grammar");
  s->add_option("--grammar", synth.grammar, "Grammar file (default: built-in)");
  s->add_option("--out", synth.out, "Output directory")->required();
  s->add_option("--seed", synth.seed);
  s->add_option("--task", synth.task, "nli | paraphrase");
  s->add_option("--n-labeled", synth.n_labeled);
  s->add_option("--n-unlabeled", synth.n_unlabeled);
  s->add_option("--n-dev", synth.n_dev);

  TrainArgs train;
  auto* t = app.add_subcommand("train", "Train; writes checkpoint.bin, metrics.csv and config.txt to --out");
  add_config_flags(t, train.ov);
  t->add_option("--labeled", train.labeled)->required();
  t->add_option("--unlabeled", train.unlabeled, "Unlabeled pairs (omit for supervised-only)");
  t->add_option("--dev", train.dev)->required();
  t->add_option("--out", train.out)->required();
  t->add_option("--checkpoint", train.checkpoint, "Resume from this checkpoint");
  t->add_option("--task", train.task, "nli | paraphrase");
  t->add_option("--max-vocab", train.max_vocab, "Vocabulary cap including specials");
  t->add_flag("--swap-augment", train.swap, "Add every pair reversed (symmetric tasks)");

  TrainArgs fine;
  auto* f = app.add_subcommand("finetune", "Fine-tune a trained checkpoint with generation constraints");
  add_config_flags(f, fine.ov);
  f->add_option("--checkpoint", fine.checkpoint, "Trained (or fine-tuning) checkpoint")->required();
  f->add_option("--labeled", fine.labeled)->required();
  f->add_option("--unlabeled", fine.unlabeled);
  f->add_option("--dev", fine.dev)->required();
  f->add_option("--out", fine.out)->required();
  f->add_option("--task", fine.task, "nli | paraphrase");
  f->add_flag("--swap-augment", fine.swap);

  GenerateArgs gen;
  auto* g = app.add_subcommand("generate", "Beam-decode one target per (source, label)");
  g->add_option("--checkpoint", gen.checkpoint)->required();
  g->add_option("--sources", gen.sources, "One source sentence per line");
  g->add_option("--dev", gen.dev, "Take sources from a labeled TSV file");
  g->add_option("--out", gen.out, "Output TSV")->required();
  g->add_option("--task", gen.task);
  g->add_option("--seed", gen.seed);
  g->add_option("--kappa", gen.kappa, "Posterior concentration (default: from the checkpoint)");
  g->add_option("--beam", gen.beam);
  g->add_option("--alpha", gen.alpha);
  g->add_option("--max-len", gen.max_len);
  g->add_option("--limit", gen.limit, "Use at most this many sources");
  g->add_flag("--mean-direction", gen.mean_direction, "Decode at the posterior mean direction");
  g->add_flag("--current", gen.current, "Use the latest parameters instead of the best");

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "Print accuracy, label consistency and distinct-n as a CSV row");
  e->add_option("--checkpoint", ev.checkpoint);
  e->add_option("--dev", ev.dev);
  e->add_option("--generated", ev.generated, "Output of generate");
  e->add_option("--grammar", ev.grammar, "Rule oracle grammar (default: built-in)");
  e->add_option("--surrogate", ev.surrogate, "Score consistency with this classifier instead");
  e->add_option("--task", ev.task);
  e->add_option("--seed", ev.seed);
  e->add_flag("--current", ev.current);

  std::string dims = "tiny";
  std::uint64_t gc_seed = 1;
  auto* gc = app.add_subcommand("gradcheck", "Finite-difference checks of every op and objective");
  gc->add_option("--dims", dims, "tiny | small");
  gc->add_option("--seed", gc_seed);

  VmfArgs va;
  auto* v = app.add_subcommand("vmf-verify", "Sampler statistics, KL constancy and latent dimension fit");
  v->add_option("--seed", va.seed);
  v->add_option("--samples", va.samples);
  v->add_option("--trials", va.trials);
  v->add_option("--latent-dim", va.latent_dim);
  v->add_option("--kappa", va.kappa);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    if (code == 0) return 0;
    std::cerr << app.help();
    return kExitUsage;
  }

  try {
    if (s->parsed()) return run_synth(synth);
    if (t->parsed()) return run_train(train, t);
    if (f->parsed()) return run_finetune(fine, f);
    if (g->parsed()) return run_generate(gen);
    if (e->parsed()) return run_eval(ev);
    if (gc->parsed()) return run_gradcheck(dims, gc_seed);
    if (v->parsed()) return run_vmf_verify(va);
  } catch (const ConfigError& err) {
    std::fprintf(stderr, "cslvm: %s\n", err.what());
    return kExitUsage;
  } catch (const std::exception& err) {
    std::fprintf(stderr, "cslvm: %s\n", err.what());
    return kExitFail;
  }
  return kExitUsage;
}
