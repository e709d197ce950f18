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

#include "restyle/tco.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "restyle/error.hpp"

namespace restyle {

void TcoConfig::validate() const {
  if (!(lambda >= 0.0 && lambda < 1.0)) {
    throw ValidationError(
        fmt::format("tco lambda must lie in [0, 1), got {}", lambda));
  }
  if (!(beta > 0.0) || !std::isfinite(beta)) {
    throw ValidationError(fmt::format("tco beta must be positive, got {}", beta));
  }
  if (!(mu >= 0.0 && mu < 1.0)) {
    throw ValidationError(fmt::format("tco mu must lie in [0, 1), got {}", mu));
  }
  if (reward_every == 0) {
    throw ValidationError("tco reward_every must be >= 1");
  }
}

TcoState update_baseline(const TcoState& state, double reward,
                         const TcoConfig& cfg) {
  if (!std::isfinite(reward)) {
    throw NumericError(fmt::format("tco: non-finite reward {}", reward));
  }
  TcoState next = state;
  next.baseline = cfg.mu * state.baseline + (1.0 - cfg.mu) * reward;
  next.step = state.step + 1;
  next.seeded = true;
  return next;
}

double loss_weight(double reward, const TcoState& state,
                   const TcoConfig& cfg) {
  const double w =
      1.0 + cfg.lambda * std::tanh(cfg.beta * (reward - state.baseline));
  if (cfg.lambda == 0.0) return w;
  // tanh rounds to +-1 for large arguments; keep the bound strict.
  return std::clamp(w, std::nextafter(1.0 - cfg.lambda, 2.0),
                    std::nextafter(1.0 + cfg.lambda, 0.0));
}

double weighted_loss(double flow_loss, double weight) {
  if (flow_loss < 0.0) {
    throw ValidationError(
        fmt::format("weighted_loss: negative flow loss {}", flow_loss));
  }
  return flow_loss * weight;
}

TcoStep tco_observe(TcoState& state, double reward, const TcoConfig& cfg) {
  if (!std::isfinite(reward)) {
    throw NumericError(fmt::format("tco: non-finite reward {}", reward));
  }
  if (!state.seeded) {
    state.baseline = reward;
    state.seeded = true;
  }
  TcoStep out;
  out.reward = reward;
  out.baseline = state.baseline;
  out.advantage = reward - state.baseline;
  out.weight = loss_weight(reward, state, cfg);
  state = update_baseline(state, reward, cfg);
  return out;
}

double timbre_reward(const DenseMatrix& generated,
                     std::span<const double> centroid,
                     std::span<const double> descriptor,
                     const DenseMatrix* subspace) {
  if (generated.rows() == 0) {
    throw ValidationError("timbre_reward: empty batch");
  }
  const std::size_t dim = generated.cols();
  if (centroid.size() != dim || descriptor.size() != dim) {
    throw DimensionError(fmt::format(
        "timbre_reward: batch dim {}, centroid {}, descriptor {}", dim,
        centroid.size(), descriptor.size()));
  }
  const double dnorm = norm(descriptor);
  if (dnorm == 0.0) {
    throw NumericError("timbre_reward: zero-norm descriptor, cosine undefined");
  }
  DenseVector offset(dim, 0.0);
  for (std::size_t r = 0; r < generated.rows(); ++r) {
    axpy(1.0, generated.row(r), offset);
  }
  const double inv_n = 1.0 / static_cast<double>(generated.rows());
  for (std::size_t j = 0; j < dim; ++j) offset[j] = offset[j] * inv_n - centroid[j];

  if (subspace != nullptr) {
    if (subspace->cols() != dim) {
      throw DimensionError("timbre_reward: subspace basis has wrong width");
    }
    DenseVector projected(dim, 0.0);
    for (std::size_t k = 0; k < subspace->rows(); ++k) {
      axpy(dot(subspace->row(k), offset), subspace->row(k), projected);
    }
    offset = std::move(projected);
  }
  const double onorm = norm(offset);
  if (onorm == 0.0) return 0.5;
  const double cos = dot(offset, descriptor) / (onorm * dnorm);
  return std::clamp((1.0 + cos) / 2.0, 0.0, 1.0);
}

}  // namespace restyle
