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

#include "restyle/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <exception>

#include <fmt/format.h>

#include "restyle/error.hpp"
#include "restyle/io_util.hpp"

namespace restyle {

namespace {

constexpr std::size_t kLossChunk = 32;

struct ChunkResult {
  double sq_error = 0.0;
  ModelGradients grads;
};

ChunkResult chunk_loss(const FlowModel& model,
                       std::span<const DenseMatrix> weights,
                       const FlowBatch& batch, std::size_t begin,
                       std::size_t rows, double inv_n) {
  const std::size_t width = batch.inputs.cols();
  const std::size_t dim = batch.targets.cols();
  const auto in_first =
      batch.inputs.values().begin() + static_cast<std::ptrdiff_t>(begin * width);
  DenseMatrix in(rows, width,
                 std::vector<double>(
                     in_first, in_first + static_cast<std::ptrdiff_t>(rows * width)));
  MlpTape tape;
  DenseMatrix pred;
  mlp_forward(weights, model.layers(), in, pred, &tape);

  ChunkResult out;
  out.grads = ModelGradients::zeros_like(model);
  DenseMatrix d_out(rows, dim);
  for (std::size_t r = 0; r < rows; ++r) {
    const auto target = batch.targets.row(begin + r);
    for (std::size_t j = 0; j < dim; ++j) {
      const double e = pred(r, j) - target[j];
      out.sq_error += e * e;
      d_out(r, j) = 2.0 * e * inv_n;
    }
  }
  mlp_backward(weights, tape, d_out, out.grads.weights, out.grads.biases);
  return out;
}

LossAndGrad reduce_chunks(const FlowModel& model,
                          std::vector<ChunkResult>& chunks, double inv_n,
                          const FlowBatch& batch) {
  LossAndGrad out;
  out.grads = ModelGradients::zeros_like(model);
  double sq = 0.0;
  for (auto& c : chunks) {
    sq += c.sq_error;
    for (std::size_t l = 0; l < out.grads.weights.size(); ++l) {
      axpy(1.0, c.grads.weights[l], out.grads.weights[l]);
      axpy(1.0, c.grads.biases[l], out.grads.biases[l]);
    }
  }
  out.loss = sq * inv_n;
  if (!std::isfinite(out.loss)) {
    throw NumericError(fmt::format(
        "flow matching loss is not finite ({}); batch of {} rows, max |input| "
        "{}, max |target| {}",
        out.loss, batch.inputs.rows(), max_abs(batch.inputs.values()),
        max_abs(batch.targets.values())));
  }
  return out;
}

void check_batch(const FlowModel& model, const FlowBatch& batch) {
  if (batch.inputs.rows() == 0) {
    throw ValidationError("flow_matching_loss: empty batch");
  }
  if (batch.inputs.cols() != model.config().input_dim() ||
      batch.targets.cols() != model.config().data_dim ||
      batch.targets.rows() != batch.inputs.rows()) {
    throw DimensionError("flow_matching_loss: batch does not match the model");
  }
}

void descend(std::vector<DenseLayer>& layers, const ModelGradients& g,
             double step) {
  for (std::size_t l = 0; l < layers.size(); ++l) {
    axpy(-step, g.weights[l], layers[l].weight);
    axpy(-step, g.biases[l], layers[l].bias);
  }
}

std::string opt_cell(bool present, double v) {
  return present ? CsvTable::cell(v) : std::string();
}

}  // namespace

void TrainConfig::validate() const {
  const auto in_unit = [](double p) { return p >= 0.0 && p <= 1.0; };
  if (!in_unit(drop_ref_rate) || !in_unit(drop_both_rate)) {
    throw ValidationError(fmt::format(
        "train config: drop rates must lie in [0, 1] (got {}, {})",
        drop_ref_rate, drop_both_rate));
  }
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
    throw ValidationError("train config: learning_rate must be positive");
  }
  if (batch_size == 0) throw ValidationError("train config: batch_size is 0");
}

nlohmann::json to_json(const TrainConfig& cfg) {
  return {{"drop_ref_rate", cfg.drop_ref_rate},
          {"drop_both_rate", cfg.drop_both_rate},
          {"learning_rate", cfg.learning_rate},
          {"batch_size", cfg.batch_size},
          {"steps", cfg.steps},
          {"seed", cfg.seed}};
}

TrainConfig train_config_from_json(const nlohmann::json& doc,
                                   TrainConfig defaults) {
  TrainConfig cfg = defaults;
  try {
    cfg.drop_ref_rate = doc.value("drop_ref_rate", cfg.drop_ref_rate);
    cfg.drop_both_rate = doc.value("drop_both_rate", cfg.drop_both_rate);
    cfg.learning_rate = doc.value("learning_rate", cfg.learning_rate);
    cfg.batch_size = doc.value("batch_size", cfg.batch_size);
    cfg.steps = doc.value("steps", cfg.steps);
    cfg.seed = doc.value("seed", cfg.seed);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(fmt::format("train config: {}", e.what()));
  }
  cfg.validate();
  return cfg;
}

TrainingSet make_training_set(const StyleSpace& space,
                              std::span<const StyledSample> samples) {
  if (samples.empty()) throw ValidationError("training set: no samples");
  TrainingSet set;
  const std::size_t n = samples.size();
  const std::size_t n_classes = space.spec().n_classes;
  set.x1 = stack_x(samples);
  set.text = DenseMatrix(n, n_classes);
  set.ref = DenseMatrix(n, space.ref_dim());
  for (std::size_t i = 0; i < n; ++i) {
    const auto t = text_embedding(samples[i].class_id, n_classes);
    std::copy(t.begin(), t.end(), set.text.row(i).begin());
    const auto r = reference_embedding(space, samples[i]);
    std::copy(r.begin(), r.end(), set.ref.row(i).begin());
  }
  return set;
}

FlowPair make_flow_pair(std::span<const double> x0, std::span<const double> x1,
                        double t) {
  if (x0.size() != x1.size()) {
    throw DimensionError("flow pair: x0 and x1 differ in length");
  }
  FlowPair p{DenseVector(x0.begin(), x0.end()), DenseVector(x1.begin(), x1.end()),
             t, DenseVector(x0.size()), DenseVector(x0.size())};
  for (std::size_t j = 0; j < x0.size(); ++j) {
    p.x_t[j] = (1.0 - t) * x0[j] + t * x1[j];
    p.v_target[j] = x1[j] - x0[j];
  }
  return p;
}

DropoutDecision decide_dropout(double u_ref, double u_both,
                               const TrainConfig& cfg) {
  DropoutDecision d;
  if (u_ref < cfg.drop_ref_rate) d.keep_ref = false;
  if (u_both < cfg.drop_both_rate) {
    d.keep_ref = false;
    d.keep_text = false;
  }
  return d;
}

FlowBatch draw_batch(const TrainingSet& data, const ModelConfig& model_cfg,
                     const TrainConfig& cfg, std::mt19937_64& rng) {
  if (data.size() == 0) throw ValidationError("draw_batch: empty dataset");
  if (data.x1.cols() != model_cfg.data_dim ||
      data.text.cols() != model_cfg.text_dim ||
      data.ref.cols() != model_cfg.ref_dim) {
    throw DimensionError("draw_batch: dataset does not match the model");
  }
  const std::size_t n = cfg.batch_size;
  const std::size_t dim = model_cfg.data_dim;
  std::uniform_int_distribution<std::size_t> pick(0, data.size() - 1);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);

  FlowBatch batch{DenseMatrix(n, model_cfg.input_dim()), DenseMatrix(n, dim),
                  std::vector<DropoutDecision>(n)};
  DenseVector x0(dim);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t idx = pick(rng);
    const double t = unit(rng);
    for (double& v : x0) v = normal(rng);
    const double u_ref = unit(rng);
    const double u_both = unit(rng);
    const DropoutDecision d = decide_dropout(u_ref, u_both, cfg);
    batch.dropout[i] = d;

    const FlowPair p = make_flow_pair(x0, data.x1.row(idx), t);
    std::copy(p.v_target.begin(), p.v_target.end(), batch.targets.row(i).begin());
    assemble_input(model_cfg, p.x_t, t,
                   d.keep_text ? data.text.row(idx) : std::span<const double>{},
                   d.keep_ref ? data.ref.row(idx) : std::span<const double>{},
                   batch.inputs.row(i));
  }
  return batch;
}

ModelGradients ModelGradients::zeros_like(const FlowModel& model) {
  ModelGradients g;
  for (const auto& l : model.layers()) {
    g.weights.emplace_back(l.weight.rows(), l.weight.cols());
    g.biases.emplace_back(l.bias.size(), 0.0);
  }
  return g;
}

LossAndGrad flow_matching_loss(const FlowModel& model, const FlowBatch& batch,
                               const FusedDelta* delta) {
  check_batch(model, batch);
  const auto weights = effective_weights(model, delta);
  const std::size_t n = batch.inputs.rows();
  const double inv_n = 1.0 / static_cast<double>(n);
  const std::size_t n_chunks = (n + kLossChunk - 1) / kLossChunk;
  std::vector<ChunkResult> chunks(n_chunks);
  std::vector<std::exception_ptr> errors(n_chunks);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t c = 0; c < static_cast<std::ptrdiff_t>(n_chunks); ++c) {
    const std::size_t begin = static_cast<std::size_t>(c) * kLossChunk;
    try {
      chunks[c] = chunk_loss(model, weights, batch, begin,
                             std::min(kLossChunk, n - begin), inv_n);
    } catch (...) {
      errors[c] = std::current_exception();
    }
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return reduce_chunks(model, chunks, inv_n, batch);
}

namespace serial {

LossAndGrad flow_matching_loss(const FlowModel& model, const FlowBatch& batch,
                               const FusedDelta* delta) {
  check_batch(model, batch);
  const auto weights = effective_weights(model, delta);
  const std::size_t n = batch.inputs.rows();
  const double inv_n = 1.0 / static_cast<double>(n);
  std::vector<ChunkResult> chunks;
  for (std::size_t begin = 0; begin < n; begin += kLossChunk) {
    chunks.push_back(chunk_loss(model, weights, batch, begin,
                                std::min(kLossChunk, n - begin), inv_n));
  }
  return reduce_chunks(model, chunks, inv_n, batch);
}

}  // namespace serial

TrainLogRow train_step(FlowModel& model, const TrainingSet& data,
                       const TrainConfig& cfg, std::mt19937_64& rng,
                       std::size_t step, const TcoHook* tco,
                       TcoState* tco_state) {
  const FlowBatch batch = draw_batch(data, model.config(), cfg, rng);
  const LossAndGrad lg = flow_matching_loss(model, batch);

  TrainLogRow row;
  row.step = step;
  row.loss = lg.loss;
  if (tco != nullptr && step % tco->config.reward_every == 0) {
    if (tco_state == nullptr) {
      throw ValidationError("train_step: reward weighting needs a TcoState");
    }
    const double reward = tco->reward(model, step);
    const TcoStep s = tco_observe(*tco_state, reward, tco->config);
    row.has_reward = true;
    row.reward = s.reward;
    row.baseline = s.baseline;
    row.advantage = s.advantage;
    row.weight = s.weight;
  }
  row.weighted_loss = weighted_loss(lg.loss, row.weight);
  // The weight is a constant factor of the loss, so it only scales the step.
  descend(model.layers(), lg.grads, cfg.learning_rate * row.weight);
  return row;
}

std::vector<TrainLogRow> train(FlowModel& model, const TrainingSet& data,
                               const TrainConfig& cfg,
                               const std::optional<TcoHook>& tco) {
  cfg.validate();
  if (tco) tco->config.validate();
  std::mt19937_64 rng(cfg.seed);
  TcoState state;
  std::vector<TrainLogRow> log;
  log.reserve(cfg.steps);
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    log.push_back(train_step(model, data, cfg, rng, step,
                             tco ? &*tco : nullptr, &state));
  }
  return log;
}

void write_train_log(std::span<const TrainLogRow> rows,
                     const std::filesystem::path& path) {
  CsvTable table({"step", "loss", "weighted_loss", "reward", "baseline",
                  "advantage", "weight"});
  for (const auto& r : rows) {
    table.add_row({CsvTable::cell(r.step), CsvTable::cell(r.loss),
                   CsvTable::cell(r.weighted_loss),
                   opt_cell(r.has_reward, r.reward),
                   opt_cell(r.has_reward, r.baseline),
                   opt_cell(r.has_reward, r.advantage),
                   CsvTable::cell(r.weight)});
  }
  table.write(path);
}

AdapterSet train_lora(const FlowModel& base, const TrainingSet& data,
                      const std::string& name, const LoraTrainConfig& cfg,
                      std::vector<TrainLogRow>* log) {
  cfg.train.validate();
  if (cfg.rank == 0 || !(cfg.alpha > 0.0)) {
    throw ValidationError("train_lora: rank must be >= 1 and alpha > 0");
  }
  std::mt19937_64 init_rng(cfg.init_seed);
  std::vector<LoraAdapter> adapters;
  for (const auto& layer : base.layers()) {
    LoraAdapter a;
    a.name = name;
    a.target_layer = layer.name;
    a.rank = cfg.rank;
    a.alpha = cfg.alpha;
    const std::size_t in = layer.weight.cols();
    const std::size_t out = layer.weight.rows();
    if (cfg.rank > std::min(in, out)) {
      throw ValidationError(fmt::format(
          "train_lora: rank {} exceeds layer '{}' ({}x{})", cfg.rank,
          layer.name, out, in));
    }
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    a.down = DenseMatrix(cfg.rank, in);
    for (double& v : a.down.values()) v = dist(init_rng);
    a.up = DenseMatrix(out, cfg.rank);
    adapters.push_back(std::move(a));
  }

  std::mt19937_64 rng(cfg.train.seed);
  const double lr = cfg.train.learning_rate;
  for (std::size_t step = 0; step < cfg.train.steps; ++step) {
    FusedDelta fused;
    for (const auto& a : adapters) fused.layers.emplace(a.target_layer, delta(a));
    const FlowBatch batch = draw_batch(data, base.config(), cfg.train, rng);
    const LossAndGrad lg = flow_matching_loss(base, batch, &fused);
    for (std::size_t l = 0; l < adapters.size(); ++l) {
      LoraAdapter& a = adapters[l];
      const double s = a.scale();
      // dL/dB = s G A^T and dL/dA = s B^T G for G = dL/dW_eff.
      const DenseMatrix& g = lg.grads.weights[l];
      DenseMatrix d_up = matmul(g, transpose(a.down));
      DenseMatrix d_down = matmul(transpose(a.up), g);
      axpy(-lr * s, d_up, a.up);
      axpy(-lr * s, d_down, a.down);
    }
    if (log != nullptr) {
      TrainLogRow row;
      row.step = step;
      row.loss = lg.loss;
      row.weighted_loss = lg.loss;
      log->push_back(row);
    }
  }
  return AdapterSet(std::move(adapters));
}

}  // namespace restyle
