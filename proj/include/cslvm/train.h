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

// Optimizers, the training and fine-tuning loops, metrics and checkpoints.

#ifndef CSLVM_TRAIN_H_
#define CSLVM_TRAIN_H_

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cslvm/autograd.h"
#include "cslvm/data.h"
#include "cslvm/model.h"
#include "cslvm/objectives.h"

namespace cslvm {

enum class OptimizerKind { kAdam, kSgd };

std::string_view optimizer_name(OptimizerKind k);
OptimizerKind parse_optimizer(std::string_view s);

struct TrainConfig {
  ModelConfig model;  // vocab_size is filled from the vocabulary
  ObjectiveConfig objective;
  OptimizerKind optimizer = OptimizerKind::kAdam;
  double lr = 1e-3;
  double finetune_lr = 1e-4;
  double word_dropout = 0.5;
  double classifier_dropout = 0.1;
  std::size_t batch_size = 32;
  std::uint64_t max_steps = 20000;
  std::uint64_t eval_interval = 200;
  std::size_t patience = 10;
  double clip_norm = 5.0;  // <= 0 disables clipping
  ConstraintConfig constraints;
  GumbelSchedule gumbel;
  std::uint64_t seed = 1;

  void validate() const;
  // Canonical `key = value` lines, one per field, fixed order.
  std::string to_text() const;
  // Applies `key = value` lines over the current values; unknown keys throw.
  void apply_text(std::string_view text);
  void set(std::string_view key, std::string_view value);
};

// ---- optimizer ------------------------------------------------------------------

struct OptimizerState {
  std::uint64_t t = 0;
  std::map<std::string, Tensor> m;  // by parameter name
  std::map<std::string, Tensor> v;
};

// Rescales every gradient by min(1, max_norm / ||g||) over the listed
// parameters. Returns the norm before clipping.
double clip_gradients(ag::GradientMap& grads, std::span<ag::Parameter* const> params, double max_norm);

// Throws NumericError naming the first parameter with a non-finite gradient.
void check_finite(const ag::GradientMap& grads, std::span<ag::Parameter* const> params);

// Bias-corrected Adam, beta1 0.9, beta2 0.999, eps 1e-8. Parameters absent
// from `grads` are left alone and their moments untouched.
void adam_step(std::span<ag::Parameter* const> params, const ag::GradientMap& grads, OptimizerState& state,
               double lr);
void sgd_step(std::span<ag::Parameter* const> params, const ag::GradientMap& grads, double lr);

// ---- metrics --------------------------------------------------------------------

struct MetricsRow {
  std::uint64_t step = 0;
  std::string split;  // train | dev | finetune
  double loss_total = 0.0;
  double loss_gen = 0.0;
  double loss_disc = 0.0;
  double loss_unsup = 0.0;
  double kl = 0.0;
  double entropy = 0.0;
  std::optional<double> dev_accuracy;
};

inline constexpr const char* kMetricsHeader =
    "step,split,loss_total,loss_gen,loss_disc,loss_unsup,kl,entropy,dev_accuracy";

std::string format_metrics_row(const MetricsRow& r);
void write_metrics(std::ostream& out, std::span<const MetricsRow> rows);
std::vector<MetricsRow> parse_metrics(std::istream& in);

// ---- trainer --------------------------------------------------------------------

struct TrainData {
  const std::vector<data::PairExample>* labeled = nullptr;
  const std::vector<data::PairExample>* unlabeled = nullptr;  // may be null or empty
  const std::vector<data::PairExample>* dev = nullptr;
};

struct Checkpoint;

class Trainer {
 public:
  enum class Phase { kTrain, kFinetune };

  // Fresh run: parameters drawn from the config seed.
  Trainer(const TrainConfig& cfg, data::Vocab vocab, TrainData data);
  // Continues from a trained model (fine-tuning) or a saved run.
  Trainer(const TrainConfig& cfg, data::Vocab vocab, Model model, TrainData data);
  static Trainer resume(Checkpoint ck, TrainData data);

  // Switches to fine-tuning: resets the step count, the early-stopping
  // record and the optimizer state; requires at least one constraint.
  void begin_finetune();

  // One update (train) or one base plus one constraint update (finetune);
  // evaluates on dev when the step count reaches an eval boundary.
  void step();
  // Steps until max_steps or early stopping.
  void run();
  bool done() const;

  Phase phase() const { return phase_; }
  std::uint64_t steps() const { return step_; }
  const TrainConfig& config() const { return cfg_; }
  const data::Vocab& vocab() const { return vocab_; }
  const Model& model() const { return model_; }
  Model& model() { return model_; }
  // Parameters at the best dev evaluation so far; the current model before
  // the first evaluation.
  const Model& best_model() const { return best_ ? *best_ : model_; }
  double best_dev_accuracy() const { return best_acc_; }
  const std::vector<MetricsRow>& metrics() const { return metrics_; }

  Checkpoint checkpoint() const;

  // The constraint half of a fine-tuning step: combine_constraints on
  // `batch`, applied to the generator and the log sigma^2 weights only.
  void constraint_update(const data::Batch& batch, double lr);

 private:
  struct Accum {
    std::size_t n = 0;
    double total = 0, gen = 0, disc = 0, unsup = 0, kl = 0, entropy = 0;
  };

  void init_streams();
  data::Batch base_update(double lr);
  void evaluate();
  void apply(const ag::GradientMap& grads, std::span<ag::Parameter* const> params, OptimizerState& st,
             double lr);

  TrainConfig cfg_;
  data::Vocab vocab_;
  Model model_;
  TrainData data_;
  Phase phase_ = Phase::kTrain;
  Rng rng_;
  data::BatchStream labeled_stream_;
  data::BatchStream unlabeled_stream_;
  OptimizerState opt_;
  OptimizerState constraint_opt_;
  std::uint64_t step_ = 0;
  std::optional<Model> best_;
  double best_acc_ = -1.0;
  std::size_t stale_evals_ = 0;
  bool stopped_ = false;
  Accum accum_;
  std::vector<MetricsRow> metrics_;
  std::vector<ag::Parameter*> all_;
  std::vector<ag::Parameter*> generator_;  // constraint update targets
};

// ---- checkpoints ----------------------------------------------------------------

struct Checkpoint {
  TrainConfig config;
  data::Vocab vocab;
  std::map<std::string, Tensor> params;
  std::optional<std::map<std::string, Tensor>> best_params;
  OptimizerState optimizer;
  OptimizerState constraint_optimizer;
  std::string phase = "train";
  std::uint64_t step = 0;
  std::string rng_state;
  std::uint64_t labeled_epoch = 0, labeled_cursor = 0;
  std::uint64_t unlabeled_epoch = 0, unlabeled_cursor = 0;
  double best_acc = -1.0;
  std::uint64_t stale_evals = 0;
  bool stopped = false;
  double accum[7] = {0, 0, 0, 0, 0, 0, 0};  // n, total, gen, disc, unsup, kl, entropy
  std::vector<MetricsRow> metrics;

  // A model holding `params` (or `best_params` when asked and present).
  Model to_model(bool best = false) const;
};

// Binary container: magic, u32 version, length-prefixed named sections,
// FNV-1a checksum over everything before it. Doubles are little-endian.
inline constexpr std::uint32_t kCheckpointVersion = 1;

void write_checkpoint(std::ostream& out, const Checkpoint& ck);
Checkpoint read_checkpoint(std::istream& in);
void save_checkpoint(const std::string& path, const Checkpoint& ck);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace cslvm

#endif  // CSLVM_TRAIN_H_
