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

#include "cslvm/train.h"

#include <bit>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <istream>
#include <iterator>
#include <limits>
#include <ostream>
#include <sstream>

#include "cslvm/decode.h"
#include "cslvm/error.h"

namespace cslvm {

using ag::Parameter;
using ag::Tape;
using ag::Var;

std::string_view optimizer_name(OptimizerKind k) { return k == OptimizerKind::kAdam ? "adam" : "sgd"; }

OptimizerKind parse_optimizer(std::string_view s) {
  if (s == "adam") return OptimizerKind::kAdam;
  if (s == "sgd") return OptimizerKind::kSgd;
  throw ConfigError("unknown optimizer '" + std::string(s) + "' (adam|sgd)");
}

// ---- config ---------------------------------------------------------------------

namespace {

std::string fmt_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string fmt_short(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

double to_double(std::string_view key, std::string_view v) {
  double out = 0.0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) {
    throw ConfigError(std::string(key) + ": expected a number, got '" + std::string(v) + "'");
  }
  return out;
}

std::uint64_t to_uint(std::string_view key, std::string_view v) {
  std::uint64_t out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) {
    throw ConfigError(std::string(key) + ": expected a non-negative integer, got '" + std::string(v) + "'");
  }
  return out;
}

bool to_bool(std::string_view key, std::string_view v) {
  if (v == "true" || v == "1" || v == "on") return true;
  if (v == "false" || v == "0" || v == "off") return false;
  throw ConfigError(std::string(key) + ": expected true|false, got '" + std::string(v) + "'");
}

const char* bool_str(bool b) { return b ? "true" : "false"; }

std::string constraint_list(const ConstraintConfig& c) {
  std::string s;
  auto add = [&](bool on, const char* name) {
    if (!on) return;
    if (!s.empty()) s += ',';
    s += name;
  };
  add(c.use_y, "y");
  add(c.use_z, "z");
  add(c.use_mu, "mu");
  return s.empty() ? "none" : s;
}

void parse_constraint_list(std::string_view v, ConstraintConfig& c) {
  c.use_y = c.use_z = c.use_mu = false;
  if (v == "none" || v.empty()) return;
  while (!v.empty()) {
    const auto comma = v.find(',');
    std::string_view item = trim(v.substr(0, comma));
    if (item == "y") c.use_y = true;
    else if (item == "z") c.use_z = true;
    else if (item == "mu") c.use_mu = true;
    else throw ConfigError("unknown constraint '" + std::string(item) + "' (y,z,mu)");
    if (comma == std::string_view::npos) break;
    v.remove_prefix(comma + 1);
  }
}

}  // namespace

void TrainConfig::validate() const {
  const ObjectiveConfig& o = objective;
  if (!(o.lambda >= 0.0)) throw ConfigError("lambda must be >= 0");
  if (!(o.kappa >= 0.0)) throw ConfigError("kappa must be >= 0");
  auto prob = [](double p, const char* name) {
    if (!(p >= 0.0 && p < 1.0)) throw ConfigError(std::string(name) + " must be in [0, 1)");
  };
  prob(word_dropout, "word dropout");
  prob(classifier_dropout, "classifier dropout");
  if (!(lr > 0.0) || !(finetune_lr > 0.0)) throw ConfigError("learning rates must be > 0");
  if (batch_size < 1) throw ConfigError("batch size must be at least 1");
  if (eval_interval < 1) throw ConfigError("eval interval must be at least 1");
  if (patience < 1) throw ConfigError("patience must be at least 1");
  if (constraints.max_len < 1) throw ConfigError("constraint max length must be at least 1");
  if (!(gumbel.floor > 0.0) || gumbel.rate < 0.0) throw ConfigError("bad Gumbel schedule");
  if (model.vocab_size != 0) model.validate();
}

std::string TrainConfig::to_text() const {
  std::ostringstream s;
  s << "vocab_size = " << model.vocab_size << '\n'
    << "embed_dim = " << model.embed_dim << '\n'
    << "hidden_dim = " << model.hidden_dim << '\n'
    << "label_dim = " << model.label_dim << '\n'
    << "latent_dim = " << model.latent_dim << '\n'
    << "classifier_hidden = " << model.classifier_hidden << '\n'
    << "num_labels = " << model.num_labels << '\n'
    << "fusion = " << fusion_name(model.fusion) << '\n'
    << "tie_encoders = " << bool_str(model.tie_encoders) << '\n'
    << "lambda = " << fmt_double(objective.lambda) << '\n'
    << "kappa = " << fmt_double(objective.kappa) << '\n'
    << "mode = " << unsup_mode_name(objective.mode) << '\n'
    << "cross_sentence = " << bool_str(objective.cross_sentence) << '\n'
    << "generative = " << bool_str(objective.generative) << '\n'
    << "optimizer = " << optimizer_name(optimizer) << '\n'
    << "lr = " << fmt_double(lr) << '\n'
    << "finetune_lr = " << fmt_double(finetune_lr) << '\n'
    << "dropout_word = " << fmt_double(word_dropout) << '\n'
    << "dropout_cls = " << fmt_double(classifier_dropout) << '\n'
    << "batch_size = " << batch_size << '\n'
    << "max_steps = " << max_steps << '\n'
    << "eval_interval = " << eval_interval << '\n'
    << "patience = " << patience << '\n'
    << "clip_norm = " << fmt_double(clip_norm) << '\n'
    << "constraints = " << constraint_list(constraints) << '\n'
    << "constraint_max_len = " << constraints.max_len << '\n'
    << "z_mean_direction = " << bool_str(constraints.z_mean_direction) << '\n'
    << "gumbel_rate = " << fmt_double(gumbel.rate) << '\n'
    << "gumbel_floor = " << fmt_double(gumbel.floor) << '\n'
    << "seed = " << seed << '\n';
  return s.str();
}

void TrainConfig::set(std::string_view key, std::string_view v) {
  v = trim(v);
  if (key == "vocab_size") model.vocab_size = to_uint(key, v);
  else if (key == "embed_dim") model.embed_dim = to_uint(key, v);
  else if (key == "hidden_dim") model.hidden_dim = to_uint(key, v);
  else if (key == "label_dim") model.label_dim = to_uint(key, v);
  else if (key == "latent_dim") model.latent_dim = to_uint(key, v);
  else if (key == "classifier_hidden") model.classifier_hidden = to_uint(key, v);
  else if (key == "num_labels") model.num_labels = to_uint(key, v);
  else if (key == "fusion") model.fusion = parse_fusion(v);
  else if (key == "tie_encoders") model.tie_encoders = to_bool(key, v);
  else if (key == "lambda") objective.lambda = to_double(key, v);
  else if (key == "kappa") objective.kappa = to_double(key, v);
  else if (key == "mode") objective.mode = parse_unsup_mode(v);
  else if (key == "cross_sentence") objective.cross_sentence = to_bool(key, v);
  else if (key == "generative") objective.generative = to_bool(key, v);
  else if (key == "optimizer") optimizer = parse_optimizer(v);
  else if (key == "lr") lr = to_double(key, v);
  else if (key == "finetune_lr") finetune_lr = to_double(key, v);
  else if (key == "dropout_word") word_dropout = to_double(key, v);
  else if (key == "dropout_cls") classifier_dropout = to_double(key, v);
  else if (key == "batch_size") batch_size = to_uint(key, v);
  else if (key == "max_steps") max_steps = to_uint(key, v);
  else if (key == "eval_interval") eval_interval = to_uint(key, v);
  else if (key == "patience") patience = to_uint(key, v);
  else if (key == "clip_norm") clip_norm = to_double(key, v);
  else if (key == "constraints") parse_constraint_list(v, constraints);
  else if (key == "constraint_max_len") constraints.max_len = to_uint(key, v);
  else if (key == "z_mean_direction") constraints.z_mean_direction = to_bool(key, v);
  else if (key == "gumbel_rate") gumbel.rate = to_double(key, v);
  else if (key == "gumbel_floor") gumbel.floor = to_double(key, v);
  else if (key == "seed") seed = to_uint(key, v);
  else throw ConfigError("unknown config key '" + std::string(key) + "'");
}

void TrainConfig::apply_text(std::string_view text) {
  std::size_t line_no = 0;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text.remove_prefix(nl == std::string_view::npos ? text.size() : nl + 1);
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError("config line " + std::to_string(line_no) + ": expected key = value");
    }
    set(trim(line.substr(0, eq)), line.substr(eq + 1));
  }
}

// ---- optimizer ------------------------------------------------------------------

double clip_gradients(ag::GradientMap& grads, std::span<Parameter* const> params, double max_norm) {
  double sq = 0.0;
  for (Parameter* p : params) {
    auto it = grads.find(p);
    if (it == grads.end()) continue;
    for (double g : it->second.values()) sq += g * g;
  }
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double s = max_norm / norm;
    for (Parameter* p : params) {
      auto it = grads.find(p);
      if (it == grads.end()) continue;
      for (double& g : it->second.values()) g *= s;
    }
  }
  return norm;
}

void check_finite(const ag::GradientMap& grads, std::span<Parameter* const> params) {
  for (Parameter* p : params) {
    auto it = grads.find(p);
    if (it != grads.end() && !it->second.all_finite()) {
      throw NumericError("non-finite gradient for parameter '" + p->name + "'");
    }
  }
}

void adam_step(std::span<Parameter* const> params, const ag::GradientMap& grads, OptimizerState& st,
               double lr) {
  constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  ++st.t;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(st.t));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(st.t));
  for (Parameter* p : params) {
    auto it = grads.find(p);
    if (it == grads.end()) continue;
    const Tensor& g = it->second;
    if (g.size() != p->value.size()) throw ShapeError("gradient size mismatch for '" + p->name + "'");
    Tensor& m = st.m.try_emplace(p->name, p->value.shape()).first->second;
    Tensor& v = st.v.try_emplace(p->name, p->value.shape()).first->second;
    for (std::size_t i = 0; i < g.size(); ++i) {
      m[i] = b1 * m[i] + (1.0 - b1) * g[i];
      v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
      p->value[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps);
    }
  }
}

void sgd_step(std::span<Parameter* const> params, const ag::GradientMap& grads, double lr) {
  for (Parameter* p : params) {
    auto it = grads.find(p);
    if (it == grads.end()) continue;
    for (std::size_t i = 0; i < p->value.size(); ++i) p->value[i] -= lr * it->second[i];
  }
}

// ---- metrics --------------------------------------------------------------------

std::string format_metrics_row(const MetricsRow& r) {
  auto num = [](double v) { return std::isnan(v) ? std::string() : fmt_short(v); };
  std::string s = std::to_string(r.step) + ',' + r.split;
  for (double v : {r.loss_total, r.loss_gen, r.loss_disc, r.loss_unsup, r.kl, r.entropy}) s += ',' + num(v);
  s += ',';
  if (r.dev_accuracy) s += fmt_short(*r.dev_accuracy);
  return s;
}

void write_metrics(std::ostream& out, std::span<const MetricsRow> rows) {
  out << kMetricsHeader << '\n';
  for (const MetricsRow& r : rows) out << format_metrics_row(r) << '\n';
}

std::vector<MetricsRow> parse_metrics(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != kMetricsHeader) throw FormatError("metrics: bad header");
  std::vector<MetricsRow> rows;
  std::size_t n = 1;
  while (std::getline(in, line)) {
    ++n;
    std::vector<std::string_view> f;
    std::string_view rest = line;
    while (true) {
      const auto c = rest.find(',');
      f.push_back(rest.substr(0, c));
      if (c == std::string_view::npos) break;
      rest.remove_prefix(c + 1);
    }
    if (f.size() != 9) throw FormatError("metrics line " + std::to_string(n) + ": expected 9 fields");
    auto num = [&](std::string_view v) {
      return v.empty() ? std::numeric_limits<double>::quiet_NaN() : to_double("metrics", v);
    };
    MetricsRow r;
    r.step = to_uint("metrics", f[0]);
    r.split = std::string(f[1]);
    r.loss_total = num(f[2]);
    r.loss_gen = num(f[3]);
    r.loss_disc = num(f[4]);
    r.loss_unsup = num(f[5]);
    r.kl = num(f[6]);
    r.entropy = num(f[7]);
    if (!f[8].empty()) r.dev_accuracy = num(f[8]);
    rows.push_back(std::move(r));
  }
  return rows;
}

// ---- trainer --------------------------------------------------------------------

namespace {

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

TrainConfig with_vocab(TrainConfig cfg, const data::Vocab& vocab) {
  cfg.model.vocab_size = vocab.size();
  cfg.validate();
  return cfg;
}

Model fresh_model(const TrainConfig& cfg, Rng& rng) { return Model(cfg.model, rng); }

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

}  // namespace

Trainer::Trainer(const TrainConfig& cfg, data::Vocab vocab, TrainData data)
    : cfg_(with_vocab(cfg, vocab)),
      vocab_(std::move(vocab)),
      model_([&] {
        Rng init(derive_seed(cfg.seed, 0));
        return fresh_model(cfg_, init);
      }()),
      data_(data),
      rng_(derive_seed(cfg.seed, 1)) {
  init_streams();
}

Trainer::Trainer(const TrainConfig& cfg, data::Vocab vocab, Model model, TrainData data)
    : cfg_(with_vocab(cfg, vocab)), vocab_(std::move(vocab)), model_(std::move(model)), data_(data),
      rng_(derive_seed(cfg.seed, 1)) {
  const ModelConfig& a = model_.config();
  const ModelConfig& b = cfg_.model;
  if (a.vocab_size != b.vocab_size || a.embed_dim != b.embed_dim || a.hidden_dim != b.hidden_dim ||
      a.label_dim != b.label_dim || a.latent_dim != b.latent_dim ||
      a.classifier_hidden != b.classifier_hidden || a.num_labels != b.num_labels ||
      a.fusion != b.fusion || a.tie_encoders != b.tie_encoders) {
    throw ConfigError("model does not match the training configuration");
  }
  init_streams();
}

void Trainer::init_streams() {
  if (data_.labeled == nullptr || data_.labeled->empty()) throw DomainError("training needs labeled pairs");
  for (const auto& e : *data_.labeled) {
    if (!e.label) throw DomainError("labeled pool contains an unlabeled pair");
  }
  labeled_stream_ = data::BatchStream(data_.labeled, cfg_.batch_size, derive_seed(cfg_.seed, 2));
  if (data_.unlabeled != nullptr && !data_.unlabeled->empty()) {
    unlabeled_stream_ = data::BatchStream(data_.unlabeled, cfg_.batch_size, derive_seed(cfg_.seed, 3));
  }
  all_.clear();
  generator_.clear();
  for (Parameter* p : model_.parameters()) {
    if (model_.in_group(p, ParamGroup::kConstraint)) {
      generator_.push_back(p);
    } else {
      all_.push_back(p);
      if (model_.in_group(p, ParamGroup::kGenerator)) generator_.push_back(p);
    }
  }
}

void Trainer::begin_finetune() {
  if (!cfg_.constraints.any()) throw ConfigError("fine-tuning needs at least one constraint");
  if (!cfg_.objective.generative) throw ConfigError("fine-tuning needs the generative path");
  phase_ = Phase::kFinetune;
  step_ = 0;
  best_.reset();
  best_acc_ = -1.0;
  stale_evals_ = 0;
  stopped_ = false;
  accum_ = {};
  opt_ = {};
  constraint_opt_ = {};
}

bool Trainer::done() const { return stopped_ || step_ >= cfg_.max_steps; }

void Trainer::apply(const ag::GradientMap& g, std::span<Parameter* const> params, OptimizerState& st,
                    double lr) {
  ag::GradientMap grads = g;
  check_finite(grads, params);
  clip_gradients(grads, params, cfg_.clip_norm);
  if (cfg_.optimizer == OptimizerKind::kAdam) {
    adam_step(params, grads, st, lr);
  } else {
    sgd_step(params, grads, lr);
  }
}

void Trainer::step() {
  if (done()) return;
  const double lr = phase_ == Phase::kTrain ? cfg_.lr : cfg_.finetune_lr;
  data::Batch lab = base_update(lr);
  if (phase_ == Phase::kFinetune) constraint_update(lab, lr);
  ++step_;
  if (step_ % cfg_.eval_interval == 0) evaluate();
}

void Trainer::run() {
  while (!done()) step();
}

data::Batch Trainer::base_update(double lr) {
  data::Batch lab = labeled_stream_.next();
  std::optional<data::Batch> unl;
  if (!unlabeled_stream_.empty() && cfg_.objective.generative) unl = unlabeled_stream_.next();
  Tape t;
  Forward f{model_, t, true, cfg_.word_dropout, cfg_.classifier_dropout, &rng_};
  StepLoss s = training_step_loss(f, lab, unl ? &*unl : nullptr, cfg_.objective, {rng_}, true);
  ag::GradientMap grads = t.backward(s.total);
  apply(grads, all_, opt_, lr);

  accum_.n += 1;
  accum_.total += s.total.value().item();
  accum_.gen += s.labeled.gen_mean;
  accum_.disc += s.labeled.disc;
  accum_.kl += s.labeled.kl;
  if (s.unlabeled) {
    accum_.unsup += s.unlabeled->value;
    accum_.entropy += s.unlabeled->entropy_mean;
  }
  return lab;
}

void Trainer::constraint_update(const data::Batch& lab, double lr) {
  Tape t;
  Forward f{model_, t, true, cfg_.word_dropout, cfg_.classifier_dropout, &rng_};
  RelaxedContext c{cfg_.objective.kappa, cfg_.gumbel.tau(step_), cfg_.constraints.max_len};
  std::array<std::optional<Var>, 3> terms;
  if (cfg_.constraints.use_y) terms[0] = constraint_y(f, lab.source, c, rng_);
  if (cfg_.constraints.use_z) terms[1] = constraint_z(f, lab, c, cfg_.constraints.z_mean_direction, rng_);
  if (cfg_.constraints.use_mu && lab.size() >= 2) terms[2] = constraint_mu(f, lab.source, c, rng_);
  if (!terms[0] && !terms[1] && !terms[2]) return;  // only R^mu on a one-row batch
  Var r = combine_constraints(f, terms);
  ag::GradientMap grads = t.backward(r);
  apply(grads, generator_, constraint_opt_, lr);
  accum_.total += r.value().item();
}

void Trainer::evaluate() {
  const double n = static_cast<double>(std::max<std::size_t>(accum_.n, 1));
  const bool has_unl = !unlabeled_stream_.empty() && cfg_.objective.generative;
  MetricsRow tr;
  tr.step = step_;
  tr.split = phase_ == Phase::kTrain ? "train" : "finetune";
  tr.loss_total = accum_.total / n;
  tr.loss_gen = cfg_.objective.generative ? accum_.gen / n : kNaN;
  tr.loss_disc = accum_.disc / n;
  tr.loss_unsup = has_unl ? accum_.unsup / n : kNaN;
  tr.kl = cfg_.objective.generative ? accum_.kl / n : kNaN;
  tr.entropy = has_unl ? accum_.entropy / n : kNaN;
  metrics_.push_back(tr);
  accum_ = {};

  if (data_.dev == nullptr || data_.dev->empty()) return;
  const double acc = accuracy(model_, *data_.dev);
  MetricsRow dev{step_, "dev", kNaN, kNaN, kNaN, kNaN, kNaN, kNaN, acc};
  metrics_.push_back(dev);
  if (phase_ == Phase::kFinetune) return;
  if (acc > best_acc_) {
    best_acc_ = acc;
    best_ = model_;
    stale_evals_ = 0;
  } else if (++stale_evals_ >= cfg_.patience) {
    stopped_ = true;
  }
}

// ---- checkpoint plumbing --------------------------------------------------------

namespace {

std::map<std::string, Tensor> param_map(const Model& m) {
  std::map<std::string, Tensor> out;
  for (const Parameter* p : m.parameters()) out.emplace(p->name, p->value);
  return out;
}

void load_params(Model& m, const std::map<std::string, Tensor>& values) {
  if (values.size() != m.parameters().size()) throw FormatError("checkpoint parameter count mismatch");
  for (Parameter* p : m.parameters()) {
    auto it = values.find(p->name);
    if (it == values.end()) throw FormatError("checkpoint lacks parameter '" + p->name + "'");
    if (it->second.shape() != p->value.shape()) throw FormatError("checkpoint shape mismatch for '" + p->name + "'");
    p->value = it->second;
  }
}

}  // namespace

Model Checkpoint::to_model(bool best) const {
  Rng unused(0);
  Model m(config.model, unused);
  load_params(m, best && best_params ? *best_params : params);
  return m;
}

Checkpoint Trainer::checkpoint() const {
  Checkpoint ck;
  ck.config = cfg_;
  ck.vocab = vocab_;
  ck.params = param_map(model_);
  if (best_) ck.best_params = param_map(*best_);
  ck.optimizer = opt_;
  ck.constraint_optimizer = constraint_opt_;
  ck.phase = phase_ == Phase::kTrain ? "train" : "finetune";
  ck.step = step_;
  std::ostringstream r;
  r << rng_;
  ck.rng_state = r.str();
  ck.labeled_epoch = labeled_stream_.epoch();
  ck.labeled_cursor = labeled_stream_.cursor();
  ck.unlabeled_epoch = unlabeled_stream_.epoch();
  ck.unlabeled_cursor = unlabeled_stream_.cursor();
  ck.best_acc = best_acc_;
  ck.stale_evals = stale_evals_;
  ck.stopped = stopped_;
  const double acc[7] = {static_cast<double>(accum_.n), accum_.total, accum_.gen, accum_.disc,
                         accum_.unsup, accum_.kl, accum_.entropy};
  std::copy(std::begin(acc), std::end(acc), ck.accum);
  ck.metrics = metrics_;
  return ck;
}

Trainer Trainer::resume(Checkpoint ck, TrainData data) {
  Trainer tr(ck.config, ck.vocab, ck.to_model(), data);
  if (ck.best_params) tr.best_ = ck.to_model(true);
  tr.opt_ = std::move(ck.optimizer);
  tr.constraint_opt_ = std::move(ck.constraint_optimizer);
  if (ck.phase == "finetune") tr.phase_ = Phase::kFinetune;
  else if (ck.phase != "train") throw FormatError("checkpoint has unknown phase '" + ck.phase + "'");
  tr.step_ = ck.step;
  std::istringstream r(ck.rng_state);
  r >> tr.rng_;
  if (!r) throw FormatError("checkpoint rng state is malformed");
  tr.labeled_stream_.seek(ck.labeled_epoch, ck.labeled_cursor);
  if (!tr.unlabeled_stream_.empty()) tr.unlabeled_stream_.seek(ck.unlabeled_epoch, ck.unlabeled_cursor);
  tr.best_acc_ = ck.best_acc;
  tr.stale_evals_ = ck.stale_evals;
  tr.stopped_ = ck.stopped;
  tr.accum_ = {static_cast<std::size_t>(ck.accum[0]), ck.accum[1], ck.accum[2], ck.accum[3],
               ck.accum[4], ck.accum[5], ck.accum[6]};
  tr.metrics_ = std::move(ck.metrics);
  return tr;
}

// ---- binary container -----------------------------------------------------------

namespace {

constexpr char kMagic[6] = {'C', 'S', 'L', 'V', 'M', '1'};

class Writer {
 public:
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void bytes(std::string_view s) { buf_.append(s); }
  void str(std::string_view s) {
    u64(s.size());
    bytes(s);
  }
  std::string& buf() { return buf_; }

 private:
  std::string buf_;
};

class Reader {
 public:
  explicit Reader(std::string_view s) : s_(s) {}
  std::uint64_t uint(int n) {
    need(static_cast<std::size_t>(n));
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(s_[pos_ + i])) << (8 * i);
    pos_ += static_cast<std::size_t>(n);
    return v;
  }
  std::uint32_t u32() { return static_cast<std::uint32_t>(uint(4)); }
  std::uint64_t u64() { return uint(8); }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string_view bytes(std::size_t n) {
    need(n);
    std::string_view out = s_.substr(pos_, n);
    pos_ += n;
    return out;
  }
  std::string_view str() { return bytes(u64()); }
  bool at_end() const { return pos_ == s_.size(); }

 private:
  void need(std::size_t n) const {
    if (n > s_.size() - pos_) throw FormatError("checkpoint integrity error: truncated section");
  }
  std::string_view s_;
  std::size_t pos_ = 0;
};

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001B3ULL;
  }
  return h;
}

std::string encode_arrays(const std::map<std::string, Tensor>& arrays) {
  Writer w;
  w.u32(static_cast<std::uint32_t>(arrays.size()));
  for (const auto& [name, t] : arrays) {
    w.str(name);
    w.u32(static_cast<std::uint32_t>(t.shape().size()));
    for (std::size_t d : t.shape()) w.u64(d);
    for (double v : t.values()) w.f64(v);
  }
  return std::move(w.buf());
}

std::map<std::string, Tensor> decode_arrays(std::string_view payload) {
  Reader r(payload);
  std::map<std::string, Tensor> out;
  const std::uint32_t n = r.u32();
  for (std::uint32_t i = 0; i < n; ++i) {
    std::string name(r.str());
    const std::uint32_t rank = r.u32();
    if (rank > 4) throw FormatError("checkpoint array '" + name + "' has rank " + std::to_string(rank));
    Shape shape;
    std::size_t size = 1;
    for (std::uint32_t d = 0; d < rank; ++d) {
      shape.push_back(r.u64());
      size *= shape.back();
    }
    if (size > payload.size() / 8) throw FormatError("checkpoint integrity error: array '" + name + "' too large");
    Tensor t(shape);
    for (double& v : t.values()) v = r.f64();
    out.emplace(std::move(name), std::move(t));
  }
  if (!r.at_end()) throw FormatError("checkpoint integrity error: trailing bytes in array section");
  return out;
}

std::string encode_optimizer(const OptimizerState& st) {
  Writer w;
  w.u64(st.t);
  std::map<std::string, Tensor> all;
  for (const auto& [k, v] : st.m) all.emplace("m:" + k, v);
  for (const auto& [k, v] : st.v) all.emplace("v:" + k, v);
  w.bytes(encode_arrays(all));
  return std::move(w.buf());
}

OptimizerState decode_optimizer(std::string_view payload) {
  Reader r(payload);
  OptimizerState st;
  st.t = r.u64();
  for (auto& [k, v] : decode_arrays(payload.substr(8))) {
    if (k.starts_with("m:")) st.m.emplace(k.substr(2), std::move(v));
    else if (k.starts_with("v:")) st.v.emplace(k.substr(2), std::move(v));
    else throw FormatError("checkpoint optimizer entry '" + k + "'");
  }
  return st;
}

std::string encode_state(const Checkpoint& ck) {
  std::ostringstream s;
  s << "phase = " << ck.phase << '\n'
    << "step = " << ck.step << '\n'
    << "labeled_epoch = " << ck.labeled_epoch << '\n'
    << "labeled_cursor = " << ck.labeled_cursor << '\n'
    << "unlabeled_epoch = " << ck.unlabeled_epoch << '\n'
    << "unlabeled_cursor = " << ck.unlabeled_cursor << '\n'
    << "best_acc = " << fmt_double(ck.best_acc) << '\n'
    << "stale_evals = " << ck.stale_evals << '\n'
    << "stopped = " << bool_str(ck.stopped) << '\n';
  for (int i = 0; i < 7; ++i) s << "accum" << i << " = " << fmt_double(ck.accum[i]) << '\n';
  s << "rng = " << ck.rng_state << '\n';
  return s.str();
}

void decode_state(std::string_view text, Checkpoint& ck) {
  std::map<std::string, std::string, std::less<>> kv;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text.remove_prefix(nl == std::string_view::npos ? text.size() : nl + 1);
    const auto eq = line.find(" = ");
    if (eq == std::string_view::npos) throw FormatError("checkpoint state line without '='");
    kv.emplace(std::string(line.substr(0, eq)), std::string(line.substr(eq + 3)));
  }
  auto get = [&](const char* k) -> const std::string& {
    auto it = kv.find(k);
    if (it == kv.end()) throw FormatError(std::string("checkpoint state lacks '") + k + "'");
    return it->second;
  };
  ck.phase = get("phase");
  ck.step = to_uint("step", get("step"));
  ck.labeled_epoch = to_uint("labeled_epoch", get("labeled_epoch"));
  ck.labeled_cursor = to_uint("labeled_cursor", get("labeled_cursor"));
  ck.unlabeled_epoch = to_uint("unlabeled_epoch", get("unlabeled_epoch"));
  ck.unlabeled_cursor = to_uint("unlabeled_cursor", get("unlabeled_cursor"));
  ck.best_acc = to_double("best_acc", get("best_acc"));
  ck.stale_evals = to_uint("stale_evals", get("stale_evals"));
  ck.stopped = to_bool("stopped", get("stopped"));
  for (int i = 0; i < 7; ++i) {
    const std::string k = "accum" + std::to_string(i);
    ck.accum[i] = to_double(k, get(k.c_str()));
  }
  ck.rng_state = get("rng");
}

}  // namespace

void write_checkpoint(std::ostream& out, const Checkpoint& ck) {
  std::vector<std::pair<std::string, std::string>> sections;
  sections.emplace_back("config", ck.config.to_text());
  std::string vocab;
  for (const std::string& t : ck.vocab.tokens()) vocab += t + '\n';
  sections.emplace_back("vocab", vocab);
  sections.emplace_back("state", encode_state(ck));
  sections.emplace_back("params", encode_arrays(ck.params));
  if (ck.best_params) sections.emplace_back("best_params", encode_arrays(*ck.best_params));
  sections.emplace_back("optimizer", encode_optimizer(ck.optimizer));
  sections.emplace_back("constraint_optimizer", encode_optimizer(ck.constraint_optimizer));
  std::ostringstream m;
  write_metrics(m, ck.metrics);
  sections.emplace_back("metrics", m.str());

  Writer w;
  w.bytes(std::string_view(kMagic, sizeof kMagic));
  w.u32(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(sections.size()));
  for (const auto& [name, payload] : sections) {
    w.str(name);
    w.str(payload);
  }
  w.u64(fnv1a(w.buf()));
  out.write(w.buf().data(), static_cast<std::streamsize>(w.buf().size()));
  if (!out) throw Error("checkpoint write failed");
}

Checkpoint read_checkpoint(std::istream& in) {
  const std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  std::string_view all(buf);
  if (all.size() < sizeof kMagic || all.substr(0, sizeof kMagic) != std::string_view(kMagic, sizeof kMagic)) {
    throw FormatError("not a checkpoint (bad magic)");
  }
  if (all.size() < sizeof kMagic + 16) throw FormatError("checkpoint integrity error: truncated file");
  std::string_view body = all.substr(0, all.size() - 8);
  if (Reader(all.substr(all.size() - 8)).u64() != fnv1a(body)) {
    throw FormatError("checkpoint integrity error: checksum mismatch (corrupted or truncated)");
  }
  Reader r(body.substr(sizeof kMagic));
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw FormatError("checkpoint version " + std::to_string(version) + " is not supported (expected " +
                      std::to_string(kCheckpointVersion) + ")");
  }
  const std::uint32_t n = r.u32();
  std::map<std::string, std::string_view, std::less<>> sections;
  for (std::uint32_t i = 0; i < n; ++i) {
    std::string name(r.str());
    sections[name] = r.str();
  }
  if (!r.at_end()) throw FormatError("checkpoint integrity error: trailing bytes");
  auto section = [&](const char* name) {
    auto it = sections.find(name);
    if (it == sections.end()) throw FormatError(std::string("checkpoint lacks section '") + name + "'");
    return it->second;
  };

  Checkpoint ck;
  ck.config.apply_text(section("config"));
  std::vector<std::string> tokens;
  std::string_view v = section("vocab");
  while (!v.empty()) {
    const auto nl = v.find('\n');
    tokens.emplace_back(v.substr(0, nl));
    v.remove_prefix(nl == std::string_view::npos ? v.size() : nl + 1);
  }
  ck.vocab = data::Vocab::from_tokens(std::move(tokens));
  decode_state(section("state"), ck);
  ck.params = decode_arrays(section("params"));
  if (sections.contains("best_params")) ck.best_params = decode_arrays(section("best_params"));
  ck.optimizer = decode_optimizer(section("optimizer"));
  ck.constraint_optimizer = decode_optimizer(section("constraint_optimizer"));
  std::istringstream m{std::string(section("metrics"))};
  ck.metrics = parse_metrics(m);
  ck.config.validate();
  return ck;
}

void save_checkpoint(const std::string& path, const Checkpoint& ck) {
  // Write to a sibling file first so a crash never leaves a torn checkpoint.
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot open '" + tmp + "' for writing");
    write_checkpoint(out, ck);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) throw Error("cannot move checkpoint into '" + path + "'");
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open checkpoint '" + path + "'");
  return read_checkpoint(in);
}

}  // namespace cslvm
