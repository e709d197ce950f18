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

// Conditional MLP velocity field.
//
// Input row: [x_t | time embedding | text | ref | has_text | has_ref]. An
// absent condition is a zero block with its presence flag at 0. Linear layers
// are named "layer0".."layerL" and separated by SiLU activations; the last
// layer is linear and outputs a velocity of the data dimension.

#ifndef RESTYLE_FLOW_MODEL_HPP_
#define RESTYLE_FLOW_MODEL_HPP_

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "restyle/fusion.hpp"
#include "restyle/linalg.hpp"

namespace restyle {

inline constexpr int kModelSchemaVersion = 1;

struct ModelConfig {
  std::size_t data_dim = 8;
  std::size_t text_dim = 4;
  std::size_t ref_dim = 9;
  std::size_t time_dim = 8;  // even; sin/cos pairs
  std::vector<std::size_t> hidden = {64, 64, 64};
  std::uint64_t init_seed = 7;

  std::size_t input_dim() const {
    return data_dim + time_dim + text_dim + ref_dim + 2;
  }
  std::size_t layer_count() const { return hidden.size() + 1; }
  void validate() const;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

nlohmann::json to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const nlohmann::json& doc);

struct DenseLayer {
  std::string name;
  DenseMatrix weight;  // out x in
  DenseVector bias;    // out

  friend bool operator==(const DenseLayer&, const DenseLayer&) = default;
};

class FlowModel {
 public:
  FlowModel() = default;
  // Xavier-uniform weights from cfg.init_seed, zero biases.
  explicit FlowModel(ModelConfig cfg);

  const ModelConfig& config() const { return config_; }
  std::vector<DenseLayer>& layers() { return layers_; }
  const std::vector<DenseLayer>& layers() const { return layers_; }
  std::vector<LayerShape> layer_shapes() const;
  // Throws ValidationError for an unknown name.
  std::size_t layer_index(const std::string& name) const;
  std::size_t parameter_count() const;

  friend bool operator==(const FlowModel&, const FlowModel&) = default;

 private:
  ModelConfig config_;
  std::vector<DenseLayer> layers_;
};

std::string layer_name(std::size_t index);

void save_model(const FlowModel& model, const std::filesystem::path& path);
FlowModel load_model(const std::filesystem::path& path);

// [sin(pi 2^k t), cos(pi 2^k t)] for k = 0 .. dim/2 - 1.
void time_embedding(double t, std::span<double> out);

// Writes one input row. Empty text/ref spans mean "absent".
void assemble_input(const ModelConfig& cfg, std::span<const double> x,
                    double t, std::span<const double> text,
                    std::span<const double> ref, std::span<double> out);

// Base weights, or base + delta for every layer the delta names. Throws
// ValidationError for a delta on an unknown layer and DimensionError for a
// shape mismatch. The model itself is never modified.
std::vector<DenseMatrix> effective_weights(const FlowModel& model,
                                           const FusedDelta* delta);

// Activations kept by a taped forward pass for the backward pass.
struct MlpTape {
  std::vector<DenseMatrix> inputs;  // input of each layer (post-activation)
  std::vector<DenseMatrix> pre;     // pre-activation of each hidden layer
};

// out[n x data_dim] for inputs[n x input_dim], single-threaded.
void mlp_forward(std::span<const DenseMatrix> weights,
                 const std::vector<DenseLayer>& layers,
                 const DenseMatrix& inputs, DenseMatrix& out,
                 MlpTape* tape = nullptr);

// Accumulates dL/dW (into grad_w, already shaped) and dL/db for the pass
// recorded in tape, given dL/d(out).
void mlp_backward(std::span<const DenseMatrix> weights, const MlpTape& tape,
                  const DenseMatrix& d_out, std::vector<DenseMatrix>& grad_w,
                  std::vector<DenseVector>& grad_b);

// A model with a fixed set of effective weights, evaluated over batches.
class VelocityField {
 public:
  VelocityField(const FlowModel& model, const FusedDelta* delta);

  const ModelConfig& config() const { return model_->config(); }
  // Rows are split into fixed chunks evaluated on OpenMP threads. Each row's
  // arithmetic is independent of the split, so results do not depend on the
  // thread count.
  DenseMatrix eval(const DenseMatrix& inputs) const;
  DenseMatrix eval_serial(const DenseMatrix& inputs) const;

 private:
  const FlowModel* model_;
  std::vector<DenseMatrix> weights_;
};

// Single-row convenience wrapper. Empty text/ref mean "absent".
DenseVector forward(const FlowModel& model, std::span<const double> x_t,
                    double t, std::span<const double> text,
                    std::span<const double> ref,
                    const FusedDelta* delta = nullptr);

}  // namespace restyle

#endif  // RESTYLE_FLOW_MODEL_HPP_
