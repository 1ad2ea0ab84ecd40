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

#include "cslvm/objectives.h"

#include <algorithm>
#include <cmath>
#include <limits>

#include "cslvm/error.h"

namespace cslvm {

using ag::Var;

std::string_view unsup_mode_name(UnsupMode m) {
  return m == UnsupMode::kEnumerate ? "enumerate" : "sample";
}

UnsupMode parse_unsup_mode(std::string_view s) {
  if (s == "enumerate") return UnsupMode::kEnumerate;
  if (s == "sample") return UnsupMode::kSample;
  throw ConfigError("unknown mode '" + std::string(s) + "' (enumerate|sample)");
}

namespace {

// sum_k a[b,k] * [k == labels[b]], [B, 1].
Var pick(Var a, std::span<const std::size_t> labels) {
  const std::size_t rows = a.rows(), k = a.cols();
  Tensor onehot({rows, k}, 0.0);
  for (std::size_t b = 0; b < rows; ++b) {
    if (labels[b] >= k) throw DomainError("label id " + std::to_string(labels[b]) + " out of range");
    onehot[b * k + labels[b]] = 1.0;
  }
  return ag::sum_rows(ag::mul(a, a.tape()->constant(std::move(onehot))));
}

Var filled(ag::Tape& t, std::size_t rows, double v) { return t.constant(Tensor({rows, 1}, v)); }

double mean_of(Var v) {
  double s = 0.0;
  for (double x : v.value().values()) s += x;
  return s / static_cast<double>(v.value().size());
}

Var sample_latent(Var mu, double kappa, Rng& rng, const vmf::VmfNoise* noise) {
  if (noise) {
    if (noise->base.rows() != mu.rows() || noise->base.cols() != mu.cols()) {
      throw ShapeError("frozen vMF noise " + shape_str(noise->base.shape()) + " vs mean " +
                       shape_str(mu.shape()));
    }
    return vmf::reparameterize(mu, *noise);
  }
  return vmf::reparameterize(
      mu, vmf::draw_noise(mu.rows(), static_cast<int>(mu.cols()), kappa, rng));
}

struct Encodings {
  Var m_s;  // posterior encoder over x_s
  Var h1;   // classifier encoder over x_s
  Var h2;   // classifier encoder over x_t
};

Encodings encode_pair(const Forward& f, const data::Batch& batch, bool need_posterior) {
  Encodings e;
  if (need_posterior) e.m_s = encode(f, batch.source, EncoderRole::kPosterior);
  e.h1 = need_posterior && f.model.config().tie_encoders
             ? e.m_s
             : encode(f, batch.source, EncoderRole::kClassifier);
  e.h2 = encode(f, batch.target, EncoderRole::kClassifier);
  return e;
}

// Each row of `seqs` repeated k times, copy j occupying rows [j B, (j+1) B).
SequenceBatch tile(const SequenceBatch& seqs, std::size_t k) {
  SequenceBatch out;
  out.batch = seqs.batch * k;
  out.max_len = seqs.max_len;
  out.ids.resize(out.max_len * out.batch);
  for (std::size_t t = 0; t < seqs.max_len; ++t) {
    for (std::size_t j = 0; j < k; ++j) {
      std::copy_n(seqs.ids.begin() + static_cast<std::ptrdiff_t>(t * seqs.batch), seqs.batch,
                  out.ids.begin() + static_cast<std::ptrdiff_t>(t * out.batch + j * seqs.batch));
    }
  }
  for (std::size_t j = 0; j < k; ++j) {
    out.lengths.insert(out.lengths.end(), seqs.lengths.begin(), seqs.lengths.end());
  }
  return out;
}

}  // namespace

LossBreakdown supervised_loss(const Forward& f, const data::Batch& batch,
                              const ObjectiveConfig& cfg, Sampling s) {
  const std::size_t rows = batch.size();
  if (batch.labels.size() != rows) throw DomainError("supervised loss needs a label for every row");
  if (cfg.lambda < 0.0) throw ConfigError("lambda must be non-negative");
  ag::Tape& tape = f.tape;
  LossBreakdown out;

  Encodings e = encode_pair(f, batch, cfg.generative);
  Var logq = ag::log_softmax(classifier_logits(f, e.h1, e.h2));
  out.q = ag::exp(logq);
  Var disc = ag::scale(pick(logq, batch.labels), -1.0);
  out.disc = mean_of(disc);

  if (!cfg.generative) {
    out.per_row = disc;
  } else {
    const int m = static_cast<int>(f.model.config().latent_dim);
    Var z = sample_latent(posterior_mu(f, e.m_s), cfg.kappa, s.rng, s.noise);
    const SequenceBatch& x = cfg.cross_sentence ? batch.target : batch.source;
    Var ll = decoder_log_likelihood(f, x, label_vectors(f, batch.labels), z);
    out.kl = vmf::kl_to_uniform(m, cfg.kappa);
    out.gen = ag::add(ag::scale(ll, -1.0), filled(tape, rows, out.kl));
    out.reconstruction = -mean_of(ll);
    out.gen_mean = mean_of(out.gen);
    out.per_row = ag::add(out.gen, ag::scale(disc, cfg.lambda));
  }
  out.total = ag::mean(out.per_row);
  out.value = out.total.value().item();
  return out;
}

LossBreakdown unsupervised_loss(const Forward& f, const data::Batch& batch,
                                const ObjectiveConfig& cfg, Sampling s) {
  if (!cfg.generative) throw ConfigError("the classifier-only baseline has no unlabeled loss");
  const std::size_t rows = batch.size();
  const std::size_t k = f.model.config().num_labels;
  const int m = static_cast<int>(f.model.config().latent_dim);
  ag::Tape& tape = f.tape;
  LossBreakdown out;

  Encodings e = encode_pair(f, batch, true);
  Var logq = ag::log_softmax(classifier_logits(f, e.h1, e.h2));
  out.q = ag::exp(logq);
  out.entropy = ag::scale(ag::sum_rows(ag::mul(out.q, logq)), -1.0);
  out.entropy_mean = mean_of(out.entropy);

  Var z = sample_latent(posterior_mu(f, e.m_s), cfg.kappa, s.rng, s.noise);
  const SequenceBatch& x = cfg.cross_sentence ? batch.target : batch.source;
  out.kl = vmf::kl_to_uniform(m, cfg.kappa);

  Var expected;
  if (cfg.mode == UnsupMode::kEnumerate) {
    // All labels in one decoder pass over k stacked copies of the batch,
    // sharing the single z draw.
    std::vector<std::size_t> rep, labels;
    for (std::size_t j = 0; j < k; ++j) {
      for (std::size_t b = 0; b < rows; ++b) {
        rep.push_back(b);
        labels.push_back(j);
      }
    }
    Var ll = decoder_log_likelihood(f, tile(x, k), label_vectors(f, labels), ag::gather_rows(z, rep));
    Var gen_all = ag::add(ag::scale(ll, -1.0), filled(tape, rows * k, out.kl));
    std::vector<Var> cols;
    for (std::size_t j = 0; j < k; ++j) {
      std::vector<std::size_t> idx(rows);
      for (std::size_t b = 0; b < rows; ++b) idx[b] = j * rows + b;
      cols.push_back(ag::gather_rows(gen_all, idx));
    }
    out.gen = ag::concat(cols);
    expected = ag::sum_rows(ag::mul(out.q, out.gen));
  } else {
    std::vector<std::size_t> drawn(rows);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (std::size_t b = 0; b < rows; ++b) {
      const double r = u(s.rng);
      double acc = 0.0;
      drawn[b] = k - 1;
      for (std::size_t j = 0; j < k; ++j) {
        acc += out.q.value().at(b, j);
        if (r < acc) {
          drawn[b] = j;
          break;
        }
      }
    }
    Var ll = decoder_log_likelihood(f, x, label_vectors(f, drawn), z);
    out.gen = ag::add(ag::scale(ll, -1.0), filled(tape, rows, out.kl));
    expected = out.gen;
  }
  out.gen_mean = mean_of(expected);
  out.reconstruction = out.gen_mean - out.kl;
  out.per_row = ag::sub(expected, out.entropy);
  out.total = ag::mean(out.per_row);
  out.value = out.total.value().item();
  return out;
}

StepLoss training_step_loss(const Forward& f, const data::Batch& labeled,
                            const data::Batch* unlabeled, const ObjectiveConfig& cfg, Sampling s,
                            bool allow_supervised_only) {
  StepLoss out{Var(), supervised_loss(f, labeled, cfg, s), std::nullopt};
  out.total = out.labeled.total;
  if (!cfg.generative) return out;
  if (!unlabeled) {
    if (!allow_supervised_only) {
      throw DomainError("unlabeled pool is empty; run in supervised-only mode instead");
    }
    return out;
  }
  out.unlabeled = unsupervised_loss(f, *unlabeled, cfg, s);
  out.total = ag::add(out.total, out.unlabeled->total);
  return out;
}

// ---- relaxed decoding -------------------------------------------------------

double GumbelSchedule::tau(std::uint64_t step) const {
  return std::max(floor, 1.0 - rate * static_cast<double>(step));
}

Var gumbel_softmax(Var logits, double tau, Rng& rng) {
  if (!(tau > 0.0)) throw DomainError("Gumbel-Softmax temperature must be positive");
  Tensor g(logits.shape());
  std::uniform_real_distribution<double> u(std::numeric_limits<double>::min(), 1.0);
  for (double& v : g.values()) v = -std::log(-std::log(u(rng)));
  return ag::softmax(ag::scale(ag::add(logits, logits.tape()->constant(std::move(g))), 1.0 / tau));
}

SoftSequence gumbel_soft_decode(const Forward& f, Var label, Var z, double tau,
                                std::size_t max_len, Rng& rng) {
  if (max_len == 0) throw DomainError("relaxed decoding needs max_len >= 1");
  const std::size_t rows = z.rows();
  Var table = f.p(f.model.word_embedding);
  LstmState state = zero_state(f, rows);
  Var prev = ag::embedding(table, std::vector<std::size_t>(rows, kStartId));
  SoftSequence out;
  out.lengths.assign(rows, max_len);
  std::vector<bool> done(rows, false);
  std::size_t open = rows;
  for (std::size_t t = 0; t < max_len && open > 0; ++t) {
    Var y = gumbel_softmax(decoder_step(f, prev, label, z, state), tau, rng);
    Var emb = ag::matmul(y, table);
    out.probs.push_back(y);
    out.embeddings.push_back(emb);
    const Tensor& yv = y.value();
    for (std::size_t b = 0; b < rows; ++b) {
      if (done[b]) continue;
      const double* r = yv.data() + b * yv.cols();
      if (std::max_element(r, r + yv.cols()) - r == static_cast<std::ptrdiff_t>(kEndId)) {
        done[b] = true;
        out.lengths[b] = std::max<std::size_t>(t, 1);
        --open;
      }
    }
    prev = emb;
  }
  return out;
}

// ---- constraints --------------------------------------------------------------

namespace {

std::vector<std::size_t> uniform_labels(std::size_t rows, std::size_t k, Rng& rng) {
  std::uniform_int_distribution<std::size_t> d(0, k - 1);
  std::vector<std::size_t> out(rows);
  for (auto& y : out) y = d(rng);
  return out;
}

struct Generated {
  Var m_s;
  SoftSequence soft;
};

Generated generate_relaxed(const Forward& f, const SequenceBatch& x_s,
                           std::span<const std::size_t> labels, const RelaxedContext& c, Rng& rng) {
  Generated g;
  g.m_s = encode(f, x_s, EncoderRole::kPosterior);
  Var z = sample_latent(posterior_mu(f, g.m_s), c.kappa, rng, nullptr);
  g.soft = gumbel_soft_decode(f, label_vectors(f, labels), z, c.tau, c.max_len, rng);
  return g;
}

}  // namespace

Var constraint_y(const Forward& f, const SequenceBatch& x_s, std::span<const std::size_t> labels,
                 const RelaxedContext& c, Rng& rng, Var* rows) {
  if (labels.size() != x_s.batch) throw ShapeError("constraint_y: one label per source");
  Generated g = generate_relaxed(f, x_s, labels, c, rng);
  Var h1 = f.model.config().tie_encoders ? g.m_s : encode(f, x_s, EncoderRole::kClassifier);
  Var h2 = encode_embedded(f, g.soft.embeddings, g.soft.lengths, EncoderRole::kClassifier);
  Var r = ag::scale(pick(ag::log_softmax(classifier_logits(f, h1, h2)), labels), -1.0);
  if (rows) *rows = r;
  return ag::mean(r);
}

Var constraint_y(const Forward& f, const SequenceBatch& x_s, const RelaxedContext& c, Rng& rng) {
  const auto labels = uniform_labels(x_s.batch, f.model.config().num_labels, rng);
  return constraint_y(f, x_s, labels, c, rng);
}

Var latent_consistency(Var z_tilde, Var mu_t, double kappa) {
  return ag::scale(vmf::log_pdf(z_tilde, mu_t, kappa), -1.0);
}

Var constraint_z(const Forward& f, const data::Batch& batch, const RelaxedContext& c,
                 bool mean_direction, Rng& rng) {
  if (batch.labels.size() != batch.size()) throw DomainError("constraint_z needs gold labels");
  Generated g = generate_relaxed(f, batch.source, batch.labels, c, rng);
  Var mu_tilde = posterior_mu(
      f, encode_embedded(f, g.soft.embeddings, g.soft.lengths, EncoderRole::kPosterior));
  Var z_tilde = mean_direction ? mu_tilde : sample_latent(mu_tilde, c.kappa, rng, nullptr);
  Var mu_t = posterior_mu(f, encode(f, batch.target, EncoderRole::kPosterior));
  return ag::mean(latent_consistency(z_tilde, mu_t, c.kappa));
}

Var dispersion_penalty(Var directions) {
  const std::size_t rows = directions.rows();
  if (rows < 2) throw DomainError("the dispersion constraint needs a batch of at least two");
  ag::Tape& t = *directions.tape();
  Var mean_dir = ag::matmul(t.constant(Tensor({1, rows}, 1.0 / static_cast<double>(rows))), directions);
  Var sims = ag::matmul_nt(directions, mean_dir);
  return ag::scale(ag::mean(ag::sub(filled(t, rows, 1.0), sims)), -1.0);
}

Var constraint_mu(const Forward& f, const SequenceBatch& x_s, const RelaxedContext& c, Rng& rng) {
  if (x_s.batch < 2) throw DomainError("the dispersion constraint needs a batch of at least two");
  const auto labels = uniform_labels(x_s.batch, f.model.config().num_labels, rng);
  Generated g = generate_relaxed(f, x_s, labels, c, rng);
  Var mu_tilde = posterior_mu(
      f, encode_embedded(f, g.soft.embeddings, g.soft.lengths, EncoderRole::kPosterior));
  return dispersion_penalty(mu_tilde);
}

Var combine_constraints(const Forward& f, const std::array<std::optional<Var>, 3>& terms) {
  Var total;
  for (std::size_t i = 0; i < terms.size(); ++i) {
    if (!terms[i]) continue;
    Var s = f.p(f.model.log_sigma2[i]);
    Var term = ag::add(ag::mul(ag::exp(ag::scale(s, -1.0)), *terms[i]), ag::scale(s, 0.5));
    total = total.valid() ? ag::add(total, term) : term;
  }
  if (!total.valid()) throw ConfigError("no semantic constraint enabled");
  return total;
}

}  // namespace cslvm
