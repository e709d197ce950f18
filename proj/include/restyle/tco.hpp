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

// Reward-modulated loss weighting with an EMA baseline.
//
//   A_t = r_t - b_{t-1}
//   w_t = 1 + lambda * tanh(beta * A_t)
//   b_t = mu * b_{t-1} + (1 - mu) * r_t
//
// The weight multiplies the flow-matching loss as a constant; no gradient
// flows through the reward.

#ifndef RESTYLE_TCO_HPP_
#define RESTYLE_TCO_HPP_

#include <cstddef>
#include <span>

#include "restyle/linalg.hpp"

namespace restyle {

struct TcoConfig {
  double lambda = 0.2;
  double beta = 5.0;
  double mu = 0.9;
  // Generate a reward batch every this many training steps.
  std::size_t reward_every = 1;

  // Throws ValidationError unless 0 <= lambda < 1, beta > 0, 0 <= mu < 1.
  void validate() const;
};

struct TcoState {
  double baseline = 0.0;
  std::size_t step = 0;
  // False until the first reward seeds the baseline.
  bool seeded = false;
};

TcoState update_baseline(const TcoState& state, double reward,
                         const TcoConfig& cfg);
double loss_weight(double reward, const TcoState& state,
                   const TcoConfig& cfg);
// flow_loss * weight; throws ValidationError on a negative loss.
double weighted_loss(double flow_loss, double weight);

struct TcoStep {
  double reward = 0.0;
  double baseline = 0.0;  // value the advantage was measured against
  double advantage = 0.0;
  double weight = 1.0;
};

// One training-loop observation: seeds the baseline with the first reward,
// computes the weight against the prior baseline, then updates it.
TcoStep tco_observe(TcoState& state, double reward, const TcoConfig& cfg);

// (1 + cos(offset, descriptor)) / 2 clamped to [0, 1], where offset is the
// mean of the generated rows minus `centroid`. When `subspace` is non-null
// its rows (orthonormal) define the subspace the offset is projected onto
// before the cosine. A zero offset scores 0.5. Throws NumericError on a
// zero-norm descriptor, ValidationError on an empty batch.
double timbre_reward(const DenseMatrix& generated,
                     std::span<const double> centroid,
                     std::span<const double> descriptor,
                     const DenseMatrix* subspace = nullptr);

}  // namespace restyle

#endif  // RESTYLE_TCO_HPP_
