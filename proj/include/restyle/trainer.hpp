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

// Flow-matching training on the rectified path
//
//   x_t = (1 - t) x0 + t x1,   v_target = x1 - x0,   t ~ U[0, 1],
//
// with nested condition dropout (drop the reference, then drop both), an
// optional reward-modulated loss weight, and low-rank adapter training on a
// frozen base.

#ifndef RESTYLE_TRAINER_HPP_
#define RESTYLE_TRAINER_HPP_

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "restyle/flow_model.hpp"
#include "restyle/lora.hpp"
#include "restyle/styledata.hpp"
#include "restyle/tco.hpp"

namespace restyle {

struct TrainConfig {
  double drop_ref_rate = 0.3;
  double drop_both_rate = 0.2;
  double learning_rate = 1e-2;
  std::size_t batch_size = 256;
  std::size_t steps = 2000;
  std::uint64_t seed = 1;

  void validate() const;
};

nlohmann::json to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const nlohmann::json& doc,
                                   TrainConfig defaults = {});

// Training targets with their conditioning, one row per sample.
struct TrainingSet {
  DenseMatrix x1;
  DenseMatrix text;
  DenseMatrix ref;

  std::size_t size() const { return x1.rows(); }
};

TrainingSet make_training_set(const StyleSpace& space,
                              std::span<const StyledSample> samples);

struct FlowPair {
  DenseVector x0;
  DenseVector x1;
  double t = 0.0;
  DenseVector x_t;
  DenseVector v_target;
};

FlowPair make_flow_pair(std::span<const double> x0, std::span<const double> x1,
                        double t);

struct DropoutDecision {
  bool keep_text = true;
  bool keep_ref = true;
};

// u_ref < drop_ref_rate drops the reference; then u_both < drop_both_rate
// drops both conditions.
DropoutDecision decide_dropout(double u_ref, double u_both,
                               const TrainConfig& cfg);

struct FlowBatch {
  DenseMatrix inputs;   // n x input_dim
  DenseMatrix targets;  // n x data_dim
  std::vector<DropoutDecision> dropout;
};

// Draws batch_size pairs with replacement. Consumes rng in a fixed order:
// per sample the index, t, x0, then the two dropout uniforms.
FlowBatch draw_batch(const TrainingSet& data, const ModelConfig& model_cfg,
                     const TrainConfig& cfg, std::mt19937_64& rng);

struct ModelGradients {
  std::vector<DenseMatrix> weights;
  std::vector<DenseVector> biases;

  static ModelGradients zeros_like(const FlowModel& model);
};

struct LossAndGrad {
  double loss = 0.0;
  ModelGradients grads;  // with respect to the effective weights
};

// loss = mean over rows of ||f(inputs) - targets||^2, gradients by reverse
// mode. Rows are processed in fixed chunks on OpenMP threads and reduced in
// chunk order, so the result is bitwise independent of the thread count.
// Throws NumericError if the loss is not finite.
LossAndGrad flow_matching_loss(const FlowModel& model, const FlowBatch& batch,
                               const FusedDelta* delta = nullptr);

// Reward callback for reward-weighted training: scores the current model at
// the given step. It must not touch the trainer RNG.
using RewardFn = std::function<double(const FlowModel&, std::size_t step)>;

struct TcoHook {
  TcoConfig config;
  RewardFn reward;
};

struct TrainLogRow {
  std::size_t step = 0;
  double loss = 0.0;
  double weighted_loss = 0.0;
  bool has_reward = false;
  double reward = 0.0;
  double baseline = 0.0;
  double advantage = 0.0;
  double weight = 1.0;
};

// One gradient-descent update. Steps without a fresh reward use weight 1.
TrainLogRow train_step(FlowModel& model, const TrainingSet& data,
                       const TrainConfig& cfg, std::mt19937_64& rng,
                       std::size_t step, const TcoHook* tco = nullptr,
                       TcoState* tco_state = nullptr);

std::vector<TrainLogRow> train(FlowModel& model, const TrainingSet& data,
                               const TrainConfig& cfg,
                               const std::optional<TcoHook>& tco = {});

void write_train_log(std::span<const TrainLogRow> rows,
                     const std::filesystem::path& path);

struct LoraTrainConfig {
  std::size_t rank = kToyRank;
  double alpha = kToyAlpha;
  std::uint64_t init_seed = 11;
  TrainConfig train;
};

// Trains one adapter per linear layer on the frozen base. `up` starts at
// zero, so zero steps give a zero delta.
AdapterSet train_lora(const FlowModel& base, const TrainingSet& data,
                      const std::string& name, const LoraTrainConfig& cfg,
                      std::vector<TrainLogRow>* log = nullptr);

namespace serial {

LossAndGrad flow_matching_loss(const FlowModel& model, const FlowBatch& batch,
                               const FusedDelta* delta = nullptr);

}  // namespace serial

}  // namespace restyle

#endif  // RESTYLE_TRAINER_HPP_
