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

#include "cslvm/vmf.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>

#include "cslvm/error.h"

namespace cslvm::vmf {

namespace {

constexpr double kPi = std::numbers::pi;

void check_nonneg(const char* fn, double nu, double x) {
  if (!(nu >= 0.0) || !(x >= 0.0) || !std::isfinite(nu) || !std::isfinite(x)) {
    throw DomainError(std::string(fn) + ": arguments must be finite and >= 0 (nu=" +
                      std::to_string(nu) + ", x=" + std::to_string(x) + ")");
  }
}

void check_dim(const char* fn, int m) {
  if (m < 2) throw DomainError(std::string(fn) + ": dimension must be >= 2, got " + std::to_string(m));
}

double log_add_exp(double a, double b) {
  if (a < b) std::swap(a, b);
  if (b == -std::numeric_limits<double>::infinity()) return a;
  return a + std::log1p(std::exp(b - a));
}

// log of sum_k (x^2/4)^k Gamma(nu+1) / (k! Gamma(nu+k+1)), so that
// I_nu(x) = (x/2)^nu / Gamma(nu+1) * exp(tail). All terms are positive; the
// sum is accumulated in log space and stops once past the peak term and
// 40 nats below the running total.
double log_series_tail(double nu, double x) {
  if (x == 0.0) return 0.0;
  const double q = 0.25 * x * x;
  const double log_q = std::log(q);
  double log_term = 0.0;
  double log_sum = 0.0;
  for (long k = 0; k < 10'000'000; ++k) {
    const double kk = static_cast<double>(k);
    const double log_ratio = log_q - std::log(kk + 1.0) - std::log(nu + kk + 1.0);
    log_term += log_ratio;
    log_sum = log_add_exp(log_sum, log_term);
    if (log_ratio < 0.0 && log_term < log_sum - 40.0) return log_sum;
  }
  throw NumericError("log_bessel_i: series did not converge (nu=" + std::to_string(nu) +
                     ", x=" + std::to_string(x) + ")");
}

}  // namespace

void VmfDistribution::validate() const {
  check_dim("VmfDistribution", dim());
  if (!(kappa >= 0.0) || !std::isfinite(kappa)) {
    throw DomainError("VmfDistribution: kappa must be finite and >= 0");
  }
  double n2 = 0.0;
  for (double v : mu) n2 += v * v;
  if (std::fabs(std::sqrt(n2) - 1.0) > 1e-9) {
    throw DomainError("VmfDistribution: mean direction is not a unit vector (norm " +
                      std::to_string(std::sqrt(n2)) + ")");
  }
}

double log_bessel_i(double nu, double x) {
  check_nonneg("log_bessel_i", nu, x);
  if (x == 0.0) return nu == 0.0 ? 0.0 : -std::numeric_limits<double>::infinity();
  return nu * std::log(0.5 * x) - std::lgamma(nu + 1.0) + log_series_tail(nu, x);
}

double bessel_ratio(double nu, double x) {
  check_nonneg("bessel_ratio", nu, x);
  if (nu < 0.5) throw DomainError("bessel_ratio: order must be >= 1/2");
  if (x == 0.0) return 0.0;
  // I_nu/I_{nu-1} = x / (2nu + x^2 / (2(nu+1) + x^2 / (2(nu+2) + ...))),
  // evaluated by the modified Lentz method.
  constexpr double kTiny = 1e-300;
  const double x2 = x * x;
  double f = kTiny, c = f, d = 0.0;
  for (long j = 1; j < 10'000'000; ++j) {
    const double a = j == 1 ? x : x2;
    const double b = 2.0 * (nu + static_cast<double>(j - 1));
    d = b + a * d;
    if (d == 0.0) d = kTiny;
    c = b + a / c;
    if (c == 0.0) c = kTiny;
    d = 1.0 / d;
    const double delta = c * d;
    f *= delta;
    if (std::fabs(delta - 1.0) < 1e-16) return f;
  }
  throw NumericError("bessel_ratio: continued fraction did not converge");
}

double log_uniform_density(int m) {
  check_dim("log_uniform_density", m);
  const double half = 0.5 * m;
  return std::lgamma(half) - std::log(2.0) - half * std::log(kPi);
}

double log_normalizer(int m, double kappa) {
  check_dim("log_normalizer", m);
  check_nonneg("log_normalizer", 0.0, kappa);
  if (kappa == 0.0) return log_uniform_density(m);
  // kappa^nu / I_nu(kappa) with the (kappa/2)^nu factors cancelled.
  const double nu = 0.5 * m - 1.0;
  return nu * std::log(2.0) + std::lgamma(nu + 1.0) - 0.5 * m * std::log(2.0 * kPi) -
         log_series_tail(nu, kappa);
}

double kl_to_uniform(int m, double kappa) {
  check_dim("kl_to_uniform", m);
  check_nonneg("kl_to_uniform", 0.0, kappa);
  if (kappa == 0.0) return 0.0;
  // log C_m(kappa) - log C_m(0) collapses to -tail(m/2 - 1, kappa).
  return kappa * bessel_ratio(0.5 * m, kappa) - log_series_tail(0.5 * m - 1.0, kappa);
}

double log_pdf(std::span<const double> x, const VmfDistribution& dist) {
  dist.validate();
  if (x.size() != dist.mu.size()) throw ShapeError("vmf log_pdf: dimension mismatch");
  double n2 = 0.0, dotp = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    n2 += x[i] * x[i];
    dotp += x[i] * dist.mu[i];
  }
  if (std::fabs(std::sqrt(n2) - 1.0) > 1e-6) throw DomainError("vmf log_pdf: x is not a unit vector");
  return log_normalizer(dist.dim(), dist.kappa) + dist.kappa * dotp;
}

ag::Var log_pdf(ag::Var x, ag::Var mu, double kappa) {
  const Tensor& xv = x.value();
  const std::size_t m = xv.cols();
  for (std::size_t r = 0; r < xv.rows(); ++r) {
    double n2 = 0.0;
    for (std::size_t j = 0; j < m; ++j) n2 += xv[r * m + j] * xv[r * m + j];
    if (std::fabs(std::sqrt(n2) - 1.0) > 1e-6) {
      throw DomainError("vmf log_pdf: row " + std::to_string(r) + " of x is not a unit vector");
    }
  }
  ag::Tape& tape = *x.tape();
  const double log_c = log_normalizer(static_cast<int>(m), kappa);
  ag::Var lin = ag::scale(ag::dot(mu, x), kappa);
  return ag::add(lin, tape.constant(Tensor({1, 1}, log_c)));
}

VmfNoise draw_noise(std::size_t rows, int m, double kappa, Rng& rng, int max_iterations,
                    SamplerStats* stats) {
  check_dim("draw_noise", m);
  check_nonneg("draw_noise", 0.0, kappa);
  const std::size_t dim = static_cast<std::size_t>(m);
  VmfNoise noise{Tensor({rows, dim})};
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);

  const double dm1 = m - 1.0;
  const double b = dm1 / (2.0 * kappa + std::sqrt(4.0 * kappa * kappa + dm1 * dm1));
  const double x0 = (1.0 - b) / (1.0 + b);
  const double c = kappa * x0 + dm1 * std::log(1.0 - x0 * x0);
  std::gamma_distribution<double> gamma(0.5 * dm1, 1.0);

  for (std::size_t r = 0; r < rows; ++r) {
    double* z = noise.base.data() + r * dim;
    if (kappa == 0.0) {
      double n2 = 0.0;
      do {
        n2 = 0.0;
        for (std::size_t j = 0; j < dim; ++j) {
          z[j] = gauss(rng);
          n2 += z[j] * z[j];
        }
      } while (n2 == 0.0);
      const double inv = 1.0 / std::sqrt(n2);
      for (std::size_t j = 0; j < dim; ++j) z[j] *= inv;
      continue;
    }

    double w = 0.0;
    bool accepted = false;
    for (int it = 0; it < max_iterations; ++it) {
      const double g1 = gamma(rng), g2 = gamma(rng);
      const double eps = g1 / (g1 + g2);
      w = (1.0 - (1.0 + b) * eps) / (1.0 - (1.0 - b) * eps);
      const double u = unif(rng);
      if (stats) ++stats->proposals;
      if (kappa * w + dm1 * std::log(1.0 - x0 * w) - c >= std::log(u)) {
        accepted = true;
        break;
      }
    }
    if (!accepted) {
      throw Error("vmf sampler: rejection loop exceeded " + std::to_string(max_iterations) +
                  " proposals (m=" + std::to_string(m) + ", kappa=" + std::to_string(kappa) + ")");
    }
    if (stats) ++stats->accepted;
    w = std::clamp(w, -1.0, 1.0);

    // Uniform direction on the tangent sphere S^{m-2}.
    double n2 = 0.0;
    do {
      n2 = 0.0;
      for (std::size_t j = 1; j < dim; ++j) {
        z[j] = gauss(rng);
        n2 += z[j] * z[j];
      }
    } while (n2 == 0.0);
    const double radial = std::sqrt(std::max(0.0, 1.0 - w * w)) / std::sqrt(n2);
    z[0] = w;
    for (std::size_t j = 1; j < dim; ++j) z[j] *= radial;
  }
  return noise;
}

// z = z' - (2 c / s) d with d = e1 - mu, c = <d, z'>, s = <d, d>. When mu is
// already e1 (s == 0) the reflection is the identity.
ag::Var householder_reflect(ag::Var mu, const Tensor& base) {
  const Tensor& mv = mu.value();
  if (mv.rows() != base.rows() || mv.cols() != base.cols()) {
    throw ShapeError("householder_reflect: shape mismatch " + shape_str(mv.shape()) + " vs " +
                     shape_str(base.shape()));
  }
  const std::size_t rows = mv.rows(), m = mv.cols();
  Tensor out({rows, m});
  for (std::size_t r = 0; r < rows; ++r) {
    const double* mu_r = mv.data() + r * m;
    const double* zp = base.data() + r * m;
    double s = 0.0, c = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
      const double d = (j == 0 ? 1.0 : 0.0) - mu_r[j];
      s += d * d;
      c += d * zp[j];
    }
    const double k = s > 1e-30 ? 2.0 * c / s : 0.0;
    for (std::size_t j = 0; j < m; ++j) {
      out[r * m + j] = zp[j] - k * ((j == 0 ? 1.0 : 0.0) - mu_r[j]);
    }
  }
  return mu.tape()->record(
      ag::OpKind::kCustom, {mu}, std::move(out),
      [mu, base, rows, m](const Tensor& g, std::span<Tensor* const> gi) {
        const Tensor& mv = mu.value();
        Tensor& gmu = *gi[0];
        std::vector<double> d(m);
        for (std::size_t r = 0; r < rows; ++r) {
          const double* zp = base.data() + r * m;
          const double* gr = g.data() + r * m;
          double s = 0.0, c = 0.0, dg = 0.0;
          for (std::size_t j = 0; j < m; ++j) {
            d[j] = (j == 0 ? 1.0 : 0.0) - mv[r * m + j];
            s += d[j] * d[j];
            c += d[j] * zp[j];
            dg += d[j] * gr[j];
          }
          if (s <= 1e-30) continue;
          for (std::size_t j = 0; j < m; ++j) {
            const double g_d = -2.0 * dg / s * zp[j] + 4.0 * c * dg / (s * s) * d[j] -
                               2.0 * c / s * gr[j];
            gmu[r * m + j] -= g_d;
          }
        }
      });
}

ag::Var reparameterize(ag::Var mu, const VmfNoise& noise) {
  return householder_reflect(mu, noise.base);
}

std::vector<double> sample(const VmfDistribution& dist, Rng& rng) {
  dist.validate();
  VmfNoise noise = draw_noise(1, dist.dim(), dist.kappa, rng);
  ag::Tape tape;
  ag::Var mu = tape.constant(Tensor::row(dist.mu));
  ag::Var z = reparameterize(mu, noise);
  return {z.value().values().begin(), z.value().values().end()};
}

LatentDimFit infer_latent_dim(std::span<const double> kappas, std::span<const double> targets,
                              int max_m) {
  if (kappas.size() != targets.size() || kappas.empty()) {
    throw ConfigError("infer_latent_dim: need matching non-empty kappa/target lists");
  }
  LatentDimFit best;
  best.max_rel_error = std::numeric_limits<double>::infinity();
  for (int m = 2; m <= max_m; ++m) {
    LatentDimFit fit{m, 0.0, {}};
    for (std::size_t i = 0; i < kappas.size(); ++i) {
      const double kl = kl_to_uniform(m, kappas[i]);
      fit.kl.push_back(kl);
      fit.max_rel_error = std::max(fit.max_rel_error, std::fabs(kl - targets[i]) / std::fabs(targets[i]));
    }
    if (fit.max_rel_error < best.max_rel_error) best = fit;
  }
  return best;
}

}  // namespace cslvm::vmf
