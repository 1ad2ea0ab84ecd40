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

// Training objectives.
//
// Labeled pairs:
//   L_gen  = -log p(x_t | y, z_s) + KL(vMF(mu_s, kappa) || U)     z_s ~ q(z | x_s)
//   L_disc = -log q(y | x_s, x_t)
//   L_l    = L_gen + lambda L_disc
// Unlabeled pairs:
//   L_u    = -H(q(y | x_s, x_t)) + E_q[L_gen(y)]
// Fine-tuning constraints on generated targets x~_t:
//   R^y  = -log q(y~ | x_s, x~_t)
//   R^z  = -log vMF(z~_t; mu(x_t), kappa),      z~_t ~ q(z | x~_t)
//   R^mu = -mean_i (1 - <mu~_i, mean_j mu~_j>)
//   R    = sum_i exp(-s_i) R_i + 1/2 sum_i s_i,  s_i = log sigma_i^2
//
// log p(y) is uniform and dropped. Every function averages over the batch
// and also exposes per-row values.

#ifndef CSLVM_OBJECTIVES_H_
#define CSLVM_OBJECTIVES_H_

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "cslvm/autograd.h"
#include "cslvm/data.h"
#include "cslvm/model.h"
#include "cslvm/vmf.h"

namespace cslvm {

enum class UnsupMode { kEnumerate, kSample };

std::string_view unsup_mode_name(UnsupMode m);
UnsupMode parse_unsup_mode(std::string_view s);

struct ObjectiveConfig {
  double lambda = 1.0;
  double kappa = 100.0;
  UnsupMode mode = UnsupMode::kEnumerate;
  bool cross_sentence = true;  // off: the decoder reconstructs x_s instead of x_t
  bool generative = true;      // off: classifier-only baseline, loss = L_disc
};

struct LossBreakdown {
  ag::Var total;     // scalar
  ag::Var per_row;   // [B, 1]
  ag::Var q;         // [B, K] classifier probabilities
  ag::Var gen;       // [B, 1] L_gen; unlabeled: [B, K], one column per label
  ag::Var entropy;   // [B, 1], unlabeled only
  double reconstruction = 0.0;  // mean -log p(x | y, z)
  double kl = 0.0;
  double disc = 0.0;
  double entropy_mean = 0.0;
  double gen_mean = 0.0;  // mean L_gen, or mean E_q[L_gen]
  double value = 0.0;     // total as a number
};

// Randomness for one loss evaluation. When `noise` is set it replaces the
// vMF draw; its rows must match the batch.
struct Sampling {
  Rng& rng;
  const vmf::VmfNoise* noise = nullptr;
};

LossBreakdown supervised_loss(const Forward& f, const data::Batch& batch,
                              const ObjectiveConfig& cfg, Sampling s);
LossBreakdown unsupervised_loss(const Forward& f, const data::Batch& batch,
                                const ObjectiveConfig& cfg, Sampling s);

struct StepLoss {
  ag::Var total;
  LossBreakdown labeled;
  std::optional<LossBreakdown> unlabeled;
};

// L_l + L_u. A null unlabeled batch is rejected unless the configuration is
// the classifier-only baseline; pure supervised training passes
// allow_supervised_only.
StepLoss training_step_loss(const Forward& f, const data::Batch& labeled,
                            const data::Batch* unlabeled, const ObjectiveConfig& cfg, Sampling s,
                            bool allow_supervised_only = false);

// ---- relaxed decoding -----------------------------------------------------------

struct GumbelSchedule {
  double rate = 1e-4;
  double floor = 0.1;
  double tau(std::uint64_t step) const;
};

// softmax((logits + g) / tau), g standard Gumbel per entry.
ag::Var gumbel_softmax(ag::Var logits, double tau, Rng& rng);

struct SoftSequence {
  std::vector<ag::Var> probs;       // per step, [B, V]
  std::vector<ag::Var> embeddings;  // per step, probs x word embedding
  std::vector<std::size_t> lengths;  // steps before the end token, at least 1
};

// Stops a row when the end token is the argmax of its relaxed vector; the
// end step itself is not part of the sequence.
SoftSequence gumbel_soft_decode(const Forward& f, ag::Var label, ag::Var z, double tau,
                                std::size_t max_len, Rng& rng);

// ---- semantic constraints -------------------------------------------------------

struct ConstraintConfig {
  bool use_y = true;
  bool use_z = true;
  bool use_mu = true;
  std::size_t max_len = 20;
  bool z_mean_direction = false;  // R^z at the mean direction instead of a sample
  bool any() const { return use_y || use_z || use_mu; }
};

struct RelaxedContext {
  double kappa = 100.0;
  double tau = 1.0;
  std::size_t max_len = 20;
};

// R^y with y~ drawn uniformly.
ag::Var constraint_y(const Forward& f, const SequenceBatch& x_s, const RelaxedContext& c, Rng& rng);
// R^y for given y~; per-row values in `rows` when non-null.
ag::Var constraint_y(const Forward& f, const SequenceBatch& x_s,
                     std::span<const std::size_t> labels, const RelaxedContext& c, Rng& rng,
                     ag::Var* rows = nullptr);
// R^z; x~_t is decoded under the gold labels.
ag::Var constraint_z(const Forward& f, const data::Batch& batch, const RelaxedContext& c,
                     bool mean_direction, Rng& rng);
// R^mu over the batch; needs at least two rows.
ag::Var constraint_mu(const Forward& f, const SequenceBatch& x_s, const RelaxedContext& c, Rng& rng);

// Closed forms shared with the constraints above.
ag::Var dispersion_penalty(ag::Var directions);                           // R^mu
ag::Var latent_consistency(ag::Var z_tilde, ag::Var mu_t, double kappa);  // R^z rows

// Terms left empty are excluded together with their sigma.
ag::Var combine_constraints(const Forward& f, const std::array<std::optional<ag::Var>, 3>& terms);

}  // namespace cslvm

#endif  // CSLVM_OBJECTIVES_H_
