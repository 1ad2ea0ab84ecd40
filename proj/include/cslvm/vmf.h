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

// von Mises-Fisher distribution on the unit sphere S^{m-1}.
//
//   f(x; mu, kappa) = C_m(kappa) exp(kappa mu'x)
//   C_m(kappa) = kappa^{m/2-1} / ((2 pi)^{m/2} I_{m/2-1}(kappa))
//
// Bessel work is done in log space: I_nu(kappa) under- or overflows doubles
// long before the dimensions and concentrations used here.

#ifndef CSLVM_VMF_H_
#define CSLVM_VMF_H_

#include <cstddef>
#include <span>
#include <vector>

#include "cslvm/autograd.h"
#include "cslvm/tensor.h"

namespace cslvm::vmf {

struct VmfDistribution {
  std::vector<double> mu;  // unit vector, size m >= 2
  double kappa = 0.0;

  int dim() const { return static_cast<int>(mu.size()); }
  // Throws DomainError unless ||mu|| = 1 (1e-9), kappa >= 0 and m >= 2.
  void validate() const;
};

// log I_nu(x). Returns -inf for x == 0 and nu > 0.
double log_bessel_i(double nu, double x);

// I_nu(x) / I_{nu-1}(x) by continued fraction; nu >= 1/2.
double bessel_ratio(double nu, double x);

// log C_m(kappa); kappa == 0 gives the uniform log-density on S^{m-1}.
double log_normalizer(int m, double kappa);

// log(Gamma(m/2) / (2 pi^{m/2})).
double log_uniform_density(int m);

// KL(vMF(mu, kappa) || U(S^{m-1})); a function of (m, kappa) only.
double kl_to_uniform(int m, double kappa);

double log_pdf(std::span<const double> x, const VmfDistribution& dist);

// Row-wise log-density on the tape: x, mu are [r, m] with unit rows.
// Returns [r, 1] = log C_m(kappa) + kappa <mu, x>.
ag::Var log_pdf(ag::Var x, ag::Var mu, double kappa);

// Stage-one randomness of the sampler for r rows: the sample z' around the
// north pole e1, i.e. z' = (w, sqrt(1 - w^2) v). Independent of mu.
struct VmfNoise {
  Tensor base;  // [r, m]
};

struct SamplerStats {
  std::size_t proposals = 0;
  std::size_t accepted = 0;
  double acceptance_rate() const {
    return proposals ? static_cast<double>(accepted) / static_cast<double>(proposals) : 0.0;
  }
};

// Wood's acceptance-rejection for w, a uniform tangent direction for v.
// kappa == 0 draws z' uniformly by normalising a Gaussian vector.
// Throws Error when one draw needs more than `max_iterations` proposals.
VmfNoise draw_noise(std::size_t rows, int m, double kappa, Rng& rng,
                    int max_iterations = 1000, SamplerStats* stats = nullptr);

// Householder reflection H(mu) z' with H e1 = mu; gradients flow to mu only.
ag::Var householder_reflect(ag::Var mu, const Tensor& base);

// z = H(mu) z', the reparameterised sample for each row of mu.
ag::Var reparameterize(ag::Var mu, const VmfNoise& noise);

// Off-tape convenience draw.
std::vector<double> sample(const VmfDistribution& dist, Rng& rng);

struct LatentDimFit {
  int m = 0;
  double max_rel_error = 0.0;
  std::vector<double> kl;
};

// Integer m in [2, max_m] whose kl_to_uniform(m, kappas[i]) best matches
// targets[i], by smallest worst-case relative error.
LatentDimFit infer_latent_dim(std::span<const double> kappas, std::span<const double> targets,
                              int max_m = 1024);

}  // namespace cslvm::vmf

#endif  // CSLVM_VMF_H_
