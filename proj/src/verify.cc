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

#include "cslvm/verify.h"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <functional>
#include <random>

#include "cslvm/data.h"
#include "cslvm/error.h"
#include "cslvm/objectives.h"
#include "cslvm/vmf.h"

namespace cslvm::verify {

using ag::Parameter;
using ag::Tape;
using ag::Var;

namespace {

Tensor uniform(Shape shape, Rng& rng, double lo, double hi) {
  Tensor t(std::move(shape));
  std::uniform_real_distribution<double> u(lo, hi);
  for (double& v : t.values()) v = u(rng);
  return t;
}

GradcheckEntry entry(const std::string& name, const ag::GradCheckResult& r) {
  return {name, r.max_rel_error, r.worst_param + "[" + std::to_string(r.worst_index) + "]"};
}

void primitive_checks(std::vector<GradcheckEntry>& out, Rng& rng) {
  using Op = std::function<Var(Var, Var)>;
  const std::vector<std::size_t> ids = {2, 0, 2, 1};
  const std::vector<std::size_t> row0 = {0}, row1 = {1};
  struct Case {
    const char* name;
    Op op;
    bool positive = false;
  };
  const std::vector<Case> cases = {
      {"matmul", [](Var a, Var b) { return ag::matmul(a, ag::transpose(b)); }},
      {"matmul_nt", [](Var a, Var b) { return ag::matmul_nt(a, b); }},
      {"add", [&](Var a, Var b) { return ag::add(a, ag::gather_rows(b, row0)); }},
      {"sub", [](Var a, Var b) { return ag::sub(a, b); }},
      {"mul", [&](Var a, Var b) { return ag::mul(a, ag::gather_rows(b, row1)); }},
      {"scale", [](Var a, Var) { return ag::scale(a, -1.7); }},
      {"concat", [](Var a, Var b) { return ag::concat({a, b, a}); }},
      {"slice", [](Var a, Var) { return ag::slice(a, 1, 3); }},
      {"gather_rows", [&](Var a, Var) { return ag::gather_rows(a, ids); }},
      {"embedding", [&](Var a, Var) { return ag::embedding(a, ids); }},
      {"transpose", [](Var a, Var) { return ag::transpose(a); }},
      {"expand_cols", [](Var a, Var) { return ag::expand_cols(ag::slice(a, 0, 1), 4); }},
      {"sum", [](Var a, Var) { return ag::sum(ag::mul(a, a)); }},
      {"sum_rows", [](Var a, Var) { return ag::sum_rows(a); }},
      {"mean", [](Var a, Var) { return ag::mean(ag::mul(a, a)); }},
      {"tanh", [](Var a, Var) { return ag::tanh(a); }},
      {"sigmoid", [](Var a, Var) { return ag::sigmoid(a); }},
      {"exp", [](Var a, Var) { return ag::exp(a); }},
      {"log", [](Var a, Var) { return ag::log(a); }, true},
      {"softmax", [](Var a, Var) { return ag::softmax(a); }},
      {"log_softmax", [](Var a, Var) { return ag::log_softmax(a); }},
      {"abs", [](Var a, Var) { return ag::abs(a); }},
      {"maximum", [](Var a, Var b) { return ag::maximum(a, b); }},
      {"relu", [](Var a, Var) { return ag::relu(a); }},
      {"dropout", [](Var a, Var) { Rng r(77); return ag::dropout(a, 0.3, r); }},
      {"l2_normalize", [](Var a, Var) { return ag::l2_normalize(a); }},
      {"dot", [](Var a, Var b) { return ag::dot(a, b); }},
  };
  for (const Case& c : cases) {
    double worst = 0.0;
    std::string where;
    for (int trial = 0; trial < 3; ++trial) {
      const double lo = c.positive ? 0.5 : -2.0;
      Parameter a{"a", uniform({4, 5}, rng, lo, 2.0)};
      Parameter b{"b", uniform({4, 5}, rng, lo, 2.0)};
      Parameter* ps[] = {&a, &b};
      Tensor w;
      auto build = [&](Tape& t) {
        Var out = c.op(t.param(a), t.param(b));
        if (w.shape() != out.shape()) {
          Rng wr(static_cast<std::uint64_t>(trial) + 1000);
          w = uniform(out.shape(), wr, -1.0, 1.0);
        }
        return ag::sum(ag::mul(out, t.constant(w)));
      };
      auto r = ag::finite_diff_check(build, ps, 1e-6);
      if (r.max_rel_error >= worst) {
        worst = r.max_rel_error;
        where = entry(c.name, r).worst;
      }
    }
    out.push_back({std::string("op/") + c.name, worst, where});
  }

  // vMF pieces: reparameterised sample and log-density under frozen noise.
  Parameter mu{"mu", uniform({3, 6}, rng, -1.0, 1.0)};
  Parameter x{"x", uniform({3, 6}, rng, -1.0, 1.0)};
  Parameter* ps[] = {&mu, &x};
  const vmf::VmfNoise noise = vmf::draw_noise(3, 6, 20.0, rng);
  const Tensor w = uniform({3, 6}, rng, -1.0, 1.0);
  out.push_back(entry("vmf/reparameterize", ag::finite_diff_check(
                                                [&](Tape& t) {
                                                  Var z = vmf::reparameterize(ag::l2_normalize(t.param(mu)), noise);
                                                  return ag::sum(ag::mul(z, t.constant(w)));
                                                },
                                                ps)));
  out.push_back(entry("vmf/log_pdf", ag::finite_diff_check(
                                         [&](Tape& t) {
                                           return ag::sum(vmf::log_pdf(ag::l2_normalize(t.param(x)),
                                                                       ag::l2_normalize(t.param(mu)), 20.0));
                                         },
                                         ps)));
}

data::Batch fixed_batch(std::size_t vocab, bool labeled, std::size_t labels) {
  // Token ids cycle through the non-special range.
  auto tok = [&](std::size_t i) { return kNumSpecials + i % (vocab - kNumSpecials); };
  std::vector<data::PairExample> ex = {
      {{tok(0), tok(1), tok(2)}, {tok(0), tok(2)}, 0},
      {{tok(3), tok(4)}, {tok(3), tok(4), tok(5)}, 2 % labels},
      {{tok(6), tok(7), tok(0), tok(1)}, {tok(6), tok(7), tok(0), tok(1), tok(2)}, 1},
  };
  if (!labeled) ex = data::hide_labels(ex);
  std::vector<std::size_t> idx = {0, 1, 2};
  return data::make_batch(ex, idx);
}

}  // namespace

ModelConfig gradcheck_dims(const std::string& preset) {
  ModelConfig c;
  if (preset == "tiny") {
    c.vocab_size = 12;
    c.embed_dim = c.hidden_dim = 8;
    c.label_dim = 3;
    c.latent_dim = 6;
    c.classifier_hidden = 10;
  } else if (preset == "small") {
    c.vocab_size = 30;
    c.embed_dim = c.hidden_dim = 16;
    c.label_dim = 4;
    c.latent_dim = 10;
    c.classifier_hidden = 20;
  } else {
    throw ConfigError("unknown gradcheck preset '" + preset + "' (tiny|small)");
  }
  return c;
}

std::vector<GradcheckEntry> gradcheck_suite(const ModelConfig& dims, std::uint64_t seed) {
  std::vector<GradcheckEntry> out;
  Rng rng(seed);
  primitive_checks(out, rng);

  Model model(dims, rng);
  std::vector<Parameter*> params;
  for (Parameter* p : model.parameters()) {
    const bool sigma = model.in_group(p, ParamGroup::kConstraint);
    p->value = uniform(p->value.shape(), rng, sigma ? -0.3 : -0.5, sigma ? 0.3 : 0.5);
    params.push_back(p);
  }
  const data::Batch lab = fixed_batch(dims.vocab_size, true, dims.num_labels);
  const data::Batch unl = fixed_batch(dims.vocab_size, false, dims.num_labels);
  ObjectiveConfig obj;
  obj.kappa = 10.0;
  obj.lambda = 0.7;
  const int m = static_cast<int>(dims.latent_dim);
  const vmf::VmfNoise noise = vmf::draw_noise(lab.size(), m, obj.kappa, rng);
  const std::uint64_t frozen = rng();

  // Each builder re-seeds its generator, so every evaluation sees the same
  // dropout masks, label draws and Gumbel noise.
  auto check = [&](const std::string& name, std::function<Var(const Forward&, Rng&)> loss, bool train) {
    auto r = ag::finite_diff_check(
        [&](Tape& t) {
          Rng local(frozen);
          Forward f{model, t, train, train ? 0.3 : 0.0, train ? 0.2 : 0.0, &local};
          return loss(f, local);
        },
        params);
    out.push_back(entry(name, r));
  };

  check("model/encode", [&](const Forward& f, Rng&) {
    return ag::sum(ag::mul(encode(f, lab.source, EncoderRole::kPosterior), encode(f, lab.target, EncoderRole::kClassifier)));
  }, true);
  check("model/decoder_log_likelihood", [&](const Forward& f, Rng&) {
    Var z = vmf::reparameterize(posterior_mu(f, encode(f, lab.source, EncoderRole::kPosterior)), noise);
    return ag::sum(decoder_log_likelihood(f, lab.target, label_vectors(f, lab.labels), z));
  }, true);
  check("model/classify", [&](const Forward& f, Rng&) {
    return ag::sum(ag::log(classify(f, lab.source, lab.target)));
  }, true);
  check("objective/supervised", [&](const Forward& f, Rng& r) {
    return supervised_loss(f, lab, obj, {r, &noise}).total;
  }, true);
  check("objective/unsupervised_enumerate", [&](const Forward& f, Rng& r) {
    return unsupervised_loss(f, unl, obj, {r, &noise}).total;
  }, true);
  ObjectiveConfig sampled = obj;
  sampled.mode = UnsupMode::kSample;
  check("objective/unsupervised_sample", [&](const Forward& f, Rng& r) {
    return unsupervised_loss(f, unl, sampled, {r, &noise}).total;
  }, true);
  check("objective/step_total", [&](const Forward& f, Rng& r) {
    return training_step_loss(f, lab, &unl, obj, {r, &noise}).total;
  }, true);
  const RelaxedContext relaxed{obj.kappa, 0.8, 5};
  check("constraint/R_y", [&](const Forward& f, Rng& r) { return constraint_y(f, lab.source, relaxed, r); }, false);
  check("constraint/R_z", [&](const Forward& f, Rng& r) { return constraint_z(f, lab, relaxed, false, r); }, false);
  check("constraint/R_mu", [&](const Forward& f, Rng& r) { return constraint_mu(f, lab.source, relaxed, r); }, false);
  check("constraint/combined", [&](const Forward& f, Rng& r) {
    Var ry = constraint_y(f, lab.source, relaxed, r);
    Var rz = constraint_z(f, lab, relaxed, false, r);
    Var rmu = constraint_mu(f, lab.source, relaxed, r);
    return combine_constraints(f, {ry, rz, rmu});
  }, false);
  return out;
}

std::vector<ResultantCheck> sampler_suite(std::size_t samples, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<ResultantCheck> out;
  for (int m : {3, 10, 64}) {
    for (double kappa : {0.0, 1.0, 100.0}) {
      std::vector<double> mu(static_cast<std::size_t>(m));
      std::normal_distribution<double> g;
      double n2 = 0.0;
      for (double& v : mu) {
        v = g(rng);
        n2 += v * v;
      }
      for (double& v : mu) v /= std::sqrt(n2);
      Tensor rows({samples, static_cast<std::size_t>(m)});
      for (std::size_t r = 0; r < samples; ++r) std::memcpy(rows.data() + r * m, mu.data(), m * sizeof(double));
      Tape t;
      const Tensor z = vmf::reparameterize(t.constant(rows), vmf::draw_noise(samples, m, kappa, rng)).value();
      double s = 0.0, s2 = 0.0;
      for (std::size_t r = 0; r < samples; ++r) {
        double d = 0.0;
        for (int j = 0; j < m; ++j) d += z[r * m + j] * mu[static_cast<std::size_t>(j)];
        s += d;
        s2 += d * d;
      }
      ResultantCheck c;
      c.m = m;
      c.kappa = kappa;
      const double n = static_cast<double>(samples);
      c.mean = s / n;
      c.se = std::sqrt(std::max(0.0, s2 / n - c.mean * c.mean) / n);
      if (kappa == 0.0) {
        c.target = 0.0;
      } else if (m == 3) {
        c.target = 1.0 / std::tanh(kappa) - 1.0 / kappa;
      } else {
        c.target = vmf::bessel_ratio(m / 2.0, kappa);
      }
      c.pass = std::abs(c.mean - c.target) < 3.0 * c.se;
      out.push_back(c);
    }
  }
  return out;
}

KlConstancy kl_constancy(int m, double kappa, std::size_t trials, std::uint64_t seed) {
  Rng rng(seed);
  ModelConfig dims = gradcheck_dims("tiny");
  dims.latent_dim = static_cast<std::size_t>(m);
  const data::Batch lab = fixed_batch(dims.vocab_size, true, dims.num_labels);
  ObjectiveConfig obj;
  obj.kappa = kappa;
  KlConstancy out;
  out.identical = true;
  for (std::size_t i = 0; i < trials; ++i) {
    Model model(dims, rng);
    for (Parameter* p : model.parameters()) p->value = uniform(p->value.shape(), rng, -1.0, 1.0);
    Tape t;
    Forward f{model, t};
    const double kl = supervised_loss(f, lab, obj, {rng}).kl;
    if (i == 0) {
      out.kl = kl;
    } else if (std::memcmp(&kl, &out.kl, sizeof kl) != 0) {
      out.identical = false;
    }
    ++out.trials;
  }
  return out;
}

std::vector<EstimatorCheck> estimator_suite(std::size_t instances, std::size_t draws, std::uint64_t seed) {
  if (draws < 2) throw ConfigError("estimator_suite needs at least 2 draws");
  Rng rng(seed);
  const ModelConfig dims = gradcheck_dims("tiny");
  const int m = static_cast<int>(dims.latent_dim);
  ObjectiveConfig obj;
  obj.kappa = 10.0;
  std::uniform_int_distribution<std::size_t> len(2, 6);
  std::uniform_int_distribution<std::size_t> tok(kNumSpecials, dims.vocab_size - 1);
  std::vector<EstimatorCheck> out;
  for (std::size_t i = 0; i < instances; ++i) {
    Model model(dims, rng);
    for (Parameter* p : model.parameters()) {
      if (!model.in_group(p, ParamGroup::kConstraint)) p->value = uniform(p->value.shape(), rng, -0.5, 0.5);
    }
    data::PairExample pair;
    for (std::size_t k = len(rng); k > 0; --k) pair.source.push_back(tok(rng));
    for (std::size_t k = len(rng); k > 0; --k) pair.target.push_back(tok(rng));

    const vmf::VmfNoise one = vmf::draw_noise(1, m, obj.kappa, rng);
    vmf::VmfNoise many{Tensor({draws, dims.latent_dim})};
    for (std::size_t r = 0; r < draws; ++r) {
      std::copy_n(one.base.data(), dims.latent_dim, many.base.data() + r * dims.latent_dim);
    }
    const std::vector<data::PairExample> single = {pair};
    const std::vector<std::size_t> zero = {0};
    const std::vector<data::PairExample> rep(draws, pair);
    std::vector<std::size_t> idx(draws);
    for (std::size_t r = 0; r < draws; ++r) idx[r] = r;

    EstimatorCheck c;
    {
      ObjectiveConfig e = obj;
      e.mode = UnsupMode::kEnumerate;
      Tape t;
      Forward f{model, t};
      c.enumerated = unsupervised_loss(f, data::make_batch(single, zero), e, {rng, &one}).value;
    }
    ObjectiveConfig smp = obj;
    smp.mode = UnsupMode::kSample;
    Tape t;
    Forward f{model, t};
    const LossBreakdown l = unsupervised_loss(f, data::make_batch(rep, idx), smp, {rng, &many});
    double sum = 0.0, sq = 0.0;
    for (double v : l.per_row.value().values()) {
      sum += v;
      sq += v * v;
    }
    const double n = static_cast<double>(draws);
    c.mean = sum / n;
    c.se = std::sqrt(std::max(0.0, sq / n - c.mean * c.mean) / (n - 1.0));
    c.pass = std::abs(c.mean - c.enumerated) <= 3.0 * c.se;
    out.push_back(c);
  }
  return out;
}

}  // namespace cslvm::verify
