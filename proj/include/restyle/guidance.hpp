// Copyright 2026 The ReStyle Toolkit Authors
// SPDX-License-Identifier: Apache-2.0
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Classifier-free guidance combinators.
//
//   CFG:  f_full + l_cfg (f_full - f_uncond)
//   DCFG: f_text + l_t (f_text - f_uncond) + l_a (f_full - f_text)
//
// where f_uncond = f(no text, no ref), f_text = f(text only) and
// f_full = f(text and ref). DCFG with (l_t, l_a) = (l_cfg, 1 + l_cfg) is
// exactly CFG. The combinators never call a model; any vector field works.

#ifndef RESTYLE_GUIDANCE_HPP_
#define RESTYLE_GUIDANCE_HPP_

#include <span>

#include "restyle/linalg.hpp"

namespace restyle {

struct GuidanceWeights {
  double lambda_t = 2.0;
  double lambda_a = 0.5;

  // Throws NumericError if either strength is not finite.
  void validate() const;
};

struct BranchOutputs {
  DenseVector f_uncond;
  DenseVector f_text;
  DenseVector f_full;
};

// Per-branch multipliers of the DCFG output; they always sum to one.
struct BranchCoefficients {
  double uncond = 0.0;  // -l_t
  double text = 0.0;    // 1 + l_t - l_a
  double full = 0.0;    // l_a
};

BranchCoefficients dcfg_coefficients(const GuidanceWeights& w);
GuidanceWeights cfg_equivalent_weights(double lambda_cfg);

DenseVector cfg_combine(std::span<const double> f_full,
                        std::span<const double> f_uncond, double lambda_cfg);
DenseVector dcfg_combine(const BranchOutputs& branches,
                         const GuidanceWeights& w);
DenseVector dcfg_combine(std::span<const double> f_uncond,
                         std::span<const double> f_text,
                         std::span<const double> f_full,
                         const GuidanceWeights& w);

// Allocation-free forms used inside the sampler. `out` may alias an input.
void cfg_combine_into(std::span<const double> f_full,
                      std::span<const double> f_uncond, double lambda_cfg,
                      std::span<double> out);
void dcfg_combine_into(std::span<const double> f_uncond,
                       std::span<const double> f_text,
                       std::span<const double> f_full,
                       const GuidanceWeights& w, std::span<double> out);

}  // namespace restyle

#endif  // RESTYLE_GUIDANCE_HPP_
