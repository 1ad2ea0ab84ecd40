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

// Numerical self-checks shared by the command line and the acceptance run.

#ifndef CSLVM_VERIFY_H_
#define CSLVM_VERIFY_H_

#include <cstdint>
#include <string>
#include <vector>

#include "cslvm/model.h"

namespace cslvm::verify {

struct GradcheckEntry {
  std::string name;
  double max_rel_error = 0.0;
  std::string worst;  // parameter[index] of the largest error
};

// Dimensions of the composed-objective checks.
ModelConfig gradcheck_dims(const std::string& preset);  // "tiny" | "small"

// Central differences against reverse mode for every primitive and for the
// composed objectives, all randomness frozen.
std::vector<GradcheckEntry> gradcheck_suite(const ModelConfig& dims, std::uint64_t seed);

struct ResultantCheck {
  int m = 0;
  double kappa = 0.0;
  double mean = 0.0;    // empirical E[mu'z]
  double se = 0.0;
  double target = 0.0;  // Bessel ratio, or coth(kappa) - 1/kappa for m = 3
  bool pass = false;    // within 3 standard errors
};

std::vector<ResultantCheck> sampler_suite(std::size_t samples, std::uint64_t seed);

struct KlConstancy {
  double kl = 0.0;
  std::size_t trials = 0;
  bool identical = false;  // bit-for-bit across trials
};

// The KL term read off supervised losses of random posteriors.
KlConstancy kl_constancy(int m, double kappa, std::size_t trials, std::uint64_t seed);

struct EstimatorCheck {
  double enumerated = 0.0;  // L_u summed over labels
  double mean = 0.0;        // sample-mode L_u averaged over draws
  double se = 0.0;
  bool pass = false;        // within 3 standard errors
};

// Random tiny models and pairs; per instance, one frozen z shared by all
// label draws.
std::vector<EstimatorCheck> estimator_suite(std::size_t instances, std::size_t draws, std::uint64_t seed);

}  // namespace cslvm::verify

#endif  // CSLVM_VERIFY_H_
