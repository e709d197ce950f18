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

#include "restyle/flow_model.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include <fmt/format.h>

#include "restyle/error.hpp"
#include "restyle/io_util.hpp"

namespace restyle {

namespace {

constexpr std::size_t kEvalChunk = 64;

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

}  // namespace

void ModelConfig::validate() const {
  if (data_dim == 0 || hidden.empty()) {
    throw ValidationError("model config: data_dim and hidden must be non-empty");
  }
  if (time_dim == 0 || time_dim % 2 != 0) {
    throw ValidationError(
        fmt::format("model config: time_dim must be even and >= 2, got {}",
                    time_dim));
  }
  for (std::size_t h : hidden) {
    if (h == 0) throw ValidationError("model config: zero-width hidden layer");
  }
}

nlohmann::json to_json(const ModelConfig& cfg) {
  return {{"data_dim", cfg.data_dim}, {"text_dim", cfg.text_dim},
          {"ref_dim", cfg.ref_dim},   {"time_dim", cfg.time_dim},
          {"hidden", cfg.hidden},     {"init_seed", cfg.init_seed}};
}

ModelConfig model_config_from_json(const nlohmann::json& doc) {
  ModelConfig cfg;
  try {
    cfg.data_dim = doc.value("data_dim", cfg.data_dim);
    cfg.text_dim = doc.value("text_dim", cfg.text_dim);
    cfg.ref_dim = doc.value("ref_dim", cfg.ref_dim);
    cfg.time_dim = doc.value("time_dim", cfg.time_dim);
    cfg.hidden = doc.value("hidden", cfg.hidden);
    cfg.init_seed = doc.value("init_seed", cfg.init_seed);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(fmt::format("model config: {}", e.what()));
  }
  cfg.validate();
  return cfg;
}

std::string layer_name(std::size_t index) {
  return fmt::format("layer{}", index);
}

FlowModel::FlowModel(ModelConfig cfg) : config_(std::move(cfg)) {
  config_.validate();
  std::mt19937_64 rng(config_.init_seed);
  std::size_t in = config_.input_dim();
  for (std::size_t l = 0; l < config_.layer_count(); ++l) {
    const std::size_t out =
        l < config_.hidden.size() ? config_.hidden[l] : config_.data_dim;
    const double a = std::sqrt(6.0 / static_cast<double>(in + out));
    std::uniform_real_distribution<double> dist(-a, a);
    DenseLayer layer{layer_name(l), DenseMatrix(out, in), DenseVector(out, 0.0)};
    for (double& w : layer.weight.values()) w = dist(rng);
    layers_.push_back(std::move(layer));
    in = out;
  }
}

std::vector<LayerShape> FlowModel::layer_shapes() const {
  std::vector<LayerShape> out;
  for (const auto& l : layers_) {
    out.push_back({l.name, l.weight.rows(), l.weight.cols()});
  }
  return out;
}

std::size_t FlowModel::layer_index(const std::string& name) const {
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    if (layers_[i].name == name) return i;
  }
  throw ValidationError(fmt::format("model has no layer named '{}'", name));
}

std::size_t FlowModel::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers_) n += l.weight.size() + l.bias.size();
  return n;
}

void save_model(const FlowModel& model, const std::filesystem::path& path) {
  nlohmann::json names = nlohmann::json::array();
  nlohmann::json shapes = nlohmann::json::array();
  nlohmann::json weights = nlohmann::json::array();
  nlohmann::json biases = nlohmann::json::array();
  for (const auto& l : model.layers()) {
    require_finite(l.weight.values(), "model weight");
    require_finite(l.bias, "model bias");
    names.push_back(l.name);
    shapes.push_back({l.weight.rows(), l.weight.cols()});
    weights.push_back(l.weight.storage());
    biases.push_back(l.bias);
  }
  nlohmann::json doc{{"schema_version", kModelSchemaVersion},
                     {"layer_names", std::move(names)},
                     {"shapes", std::move(shapes)},
                     {"weights", std::move(weights)},
                     {"biases", std::move(biases)},
                     {"config", to_json(model.config())},
                     {"rng_seed", model.config().init_seed}};
  write_json_file(path, doc);
}

FlowModel load_model(const std::filesystem::path& path) {
  const nlohmann::json doc = read_json_file(path);
  try {
    const int version = doc.at("schema_version").get<int>();
    if (version != kModelSchemaVersion) {
      throw VersionError(fmt::format("{}: model schema version {} (expected {})",
                                     path.string(), version,
                                     kModelSchemaVersion));
    }
    FlowModel model(model_config_from_json(doc.at("config")));
    auto& layers = model.layers();
    const auto& names = doc.at("layer_names");
    if (names.size() != layers.size()) {
      throw ValidationError(fmt::format(
          "{}: {} layers stored, config implies {}", path.string(),
          names.size(), layers.size()));
    }
    for (std::size_t l = 0; l < layers.size(); ++l) {
      const auto& shape = doc.at("shapes").at(l);
      const auto rows = shape.at(0).get<std::size_t>();
      const auto cols = shape.at(1).get<std::size_t>();
      if (names.at(l).get<std::string>() != layers[l].name ||
          rows != layers[l].weight.rows() || cols != layers[l].weight.cols()) {
        throw DimensionError(fmt::format(
            "{}: layer {} does not match the stored config", path.string(), l));
      }
      layers[l].weight = DenseMatrix(
          rows, cols, doc.at("weights").at(l).get<std::vector<double>>());
      layers[l].bias = doc.at("biases").at(l).get<std::vector<double>>();
      if (layers[l].bias.size() != rows) {
        throw DimensionError(
            fmt::format("{}: bias {} has wrong length", path.string(), l));
      }
      require_finite(layers[l].weight.values(), "loaded weight");
      require_finite(layers[l].bias, "loaded bias");
    }
    return model;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(
        fmt::format("{}: malformed model file: {}", path.string(), e.what()));
  }
}

void time_embedding(double t, std::span<double> out) {
  for (std::size_t k = 0; k < out.size() / 2; ++k) {
    const double angle =
        std::numbers::pi * static_cast<double>(std::size_t{1} << k) * t;
    out[2 * k] = std::sin(angle);
    out[2 * k + 1] = std::cos(angle);
  }
}

void assemble_input(const ModelConfig& cfg, std::span<const double> x,
                    double t, std::span<const double> text,
                    std::span<const double> ref, std::span<double> out) {
  if (x.size() != cfg.data_dim || out.size() != cfg.input_dim() ||
      (!text.empty() && text.size() != cfg.text_dim) ||
      (!ref.empty() && ref.size() != cfg.ref_dim)) {
    throw DimensionError(fmt::format(
        "model input: x {}, text {}, ref {}, row {} do not match config "
        "({}, {}, {}, {})",
        x.size(), text.size(), ref.size(), out.size(), cfg.data_dim,
        cfg.text_dim, cfg.ref_dim, cfg.input_dim()));
  }
  auto it = std::copy(x.begin(), x.end(), out.begin());
  time_embedding(t, {it, cfg.time_dim});
  it += static_cast<std::ptrdiff_t>(cfg.time_dim);
  if (text.empty()) {
    it = std::fill_n(it, cfg.text_dim, 0.0);
  } else {
    it = std::copy(text.begin(), text.end(), it);
  }
  if (ref.empty()) {
    it = std::fill_n(it, cfg.ref_dim, 0.0);
  } else {
    it = std::copy(ref.begin(), ref.end(), it);
  }
  *it++ = text.empty() ? 0.0 : 1.0;
  *it = ref.empty() ? 0.0 : 1.0;
}

std::vector<DenseMatrix> effective_weights(const FlowModel& model,
                                           const FusedDelta* delta) {
  std::vector<DenseMatrix> out;
  out.reserve(model.layers().size());
  for (const auto& l : model.layers()) out.push_back(l.weight);
  if (delta == nullptr) return out;
  for (const auto& [name, d] : delta->layers) {
    const std::size_t i = model.layer_index(name);
    if (!d.same_shape(out[i])) {
      throw DimensionError(fmt::format(
          "delta for layer '{}' is {}x{}, weight is {}x{}", name, d.rows(),
          d.cols(), out[i].rows(), out[i].cols()));
    }
    axpy(1.0, d, out[i]);
  }
  return out;
}

void mlp_forward(std::span<const DenseMatrix> weights,
                 const std::vector<DenseLayer>& layers,
                 const DenseMatrix& inputs, DenseMatrix& out, MlpTape* tape) {
  const std::size_t n = inputs.rows();
  const std::size_t nl = weights.size();
  if (tape != nullptr) {
    tape->inputs.resize(nl);
    tape->pre.resize(nl - 1);
  }
  DenseMatrix act = inputs;
  for (std::size_t l = 0; l < nl; ++l) {
    const DenseMatrix& w = weights[l];
    if (act.cols() != w.cols()) {
      throw DimensionError(fmt::format("layer {} expects {} inputs, got {}",
                                       layers[l].name, w.cols(), act.cols()));
    }
    DenseMatrix z(n, w.rows());
    kernels::gemm_nt(n, w.cols(), w.rows(), act.values().data(),
                     w.values().data(), z.values().data(), false);
    const auto& b = layers[l].bias;
    for (std::size_t r = 0; r < n; ++r) {
      auto zr = z.row(r);
      for (std::size_t j = 0; j < zr.size(); ++j) zr[j] += b[j];
    }
    if (tape != nullptr) tape->inputs[l] = std::move(act);
    if (l + 1 == nl) {
      out = std::move(z);
      return;
    }
    act = DenseMatrix(n, w.rows());
    auto zv = z.values();
    auto av = act.values();
    for (std::size_t i = 0; i < zv.size(); ++i) av[i] = zv[i] * sigmoid(zv[i]);
    if (tape != nullptr) tape->pre[l] = std::move(z);
  }
}

void mlp_backward(std::span<const DenseMatrix> weights, const MlpTape& tape,
                  const DenseMatrix& d_out, std::vector<DenseMatrix>& grad_w,
                  std::vector<DenseVector>& grad_b) {
  const std::size_t nl = weights.size();
  const std::size_t n = d_out.rows();
  DenseMatrix d = d_out;
  for (std::size_t step = 0; step < nl; ++step) {
    const std::size_t l = nl - 1 - step;
    const DenseMatrix& w = weights[l];
    const DenseMatrix& in = tape.inputs[l];
    kernels::gemm_tn(n, w.rows(), w.cols(), d.values().data(),
                     in.values().data(), grad_w[l].values().data(), true);
    for (std::size_t r = 0; r < n; ++r) {
      const auto dr = d.row(r);
      for (std::size_t j = 0; j < dr.size(); ++j) grad_b[l][j] += dr[j];
    }
    if (l == 0) break;
    DenseMatrix d_in(n, w.cols());
    kernels::gemm_nn(n, w.rows(), w.cols(), d.values().data(),
                     w.values().data(), d_in.values().data(), false);
    const auto pre = tape.pre[l - 1].values();
    auto dv = d_in.values();
    for (std::size_t i = 0; i < dv.size(); ++i) {
      const double s = sigmoid(pre[i]);
      dv[i] *= s * (1.0 + pre[i] * (1.0 - s));
    }
    d = std::move(d_in);
  }
}

VelocityField::VelocityField(const FlowModel& model, const FusedDelta* delta)
    : model_(&model), weights_(effective_weights(model, delta)) {}

DenseMatrix VelocityField::eval_serial(const DenseMatrix& inputs) const {
  DenseMatrix out;
  mlp_forward(weights_, model_->layers(), inputs, out);
  return out;
}

DenseMatrix VelocityField::eval(const DenseMatrix& inputs) const {
  const std::size_t n = inputs.rows();
  const std::size_t width = inputs.cols();
  const std::size_t out_dim = model_->config().data_dim;
  if (n <= kEvalChunk) return eval_serial(inputs);
  const auto chunks = static_cast<std::ptrdiff_t>((n + kEvalChunk - 1) / kEvalChunk);
  DenseMatrix out(n, out_dim);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t c = 0; c < chunks; ++c) {
    const std::size_t begin = static_cast<std::size_t>(c) * kEvalChunk;
    const std::size_t rows = std::min(kEvalChunk, n - begin);
    const auto first = inputs.values().begin() +
                       static_cast<std::ptrdiff_t>(begin * width);
    DenseMatrix part(rows, width,
                     std::vector<double>(first, first + static_cast<std::ptrdiff_t>(rows * width)));
    DenseMatrix y;
    mlp_forward(weights_, model_->layers(), part, y);
    std::copy(y.values().begin(), y.values().end(),
              out.values().begin() + static_cast<std::ptrdiff_t>(begin * out_dim));
  }
  return out;
}

DenseVector forward(const FlowModel& model, std::span<const double> x_t,
                    double t, std::span<const double> text,
                    std::span<const double> ref, const FusedDelta* delta) {
  const ModelConfig& cfg = model.config();
  DenseMatrix in(1, cfg.input_dim());
  assemble_input(cfg, x_t, t, text, ref, in.row(0));
  const auto weights = effective_weights(model, delta);
  DenseMatrix out;
  mlp_forward(weights, model.layers(), in, out);
  return out.storage();
}

}  // namespace restyle
