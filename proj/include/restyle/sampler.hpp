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

// Euler integration of the guided velocity field from noise (t = 0) to data
// (t = 1). Every step evaluates the unconditional, text-only and full
// branches (DCFG) or the unconditional and full branches (CFG).

#ifndef RESTYLE_SAMPLER_HPP_
#define RESTYLE_SAMPLER_HPP_

#include <cstddef>
#include <cstdint>

#include "restyle/flow_model.hpp"
#include "restyle/fusion.hpp"
#include "restyle/guidance.hpp"

namespace restyle {

enum class GuidanceMode { kDcfg, kCfg };

inline constexpr std::size_t kDefaultEulerSteps = 32;

struct SampleRequest {
  // One row per generated sample (repeat a row to draw several samples for
  // the same conditions).
  DenseMatrix text;  // n x text_dim
  DenseMatrix ref;   // n x ref_dim
  GuidanceMode mode = GuidanceMode::kDcfg;
  GuidanceWeights weights;
  double lambda_cfg = 2.0;  // used in CFG mode
  const FusedDelta* delta = nullptr;
  // By default the delta reaches only the full (text + ref) branch.
  bool lora_all_branches = false;
  std::size_t euler_steps = kDefaultEulerSteps;
  std::uint64_t seed = 0;
};

// Rows repeated `n` times.
DenseMatrix repeat_rows(std::span<const double> row, std::size_t n);

// n x data_dim samples. Deterministic in (model, request). Throws
// NumericError naming the step if the state stops being finite.
DenseMatrix sample(const FlowModel& model, const SampleRequest& request);

}  // namespace restyle

#endif  // RESTYLE_SAMPLER_HPP_
