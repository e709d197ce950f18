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

#include "restyle/sampler.hpp"

#include <random>

#include <fmt/format.h>

#include "restyle/error.hpp"

namespace restyle {

namespace {

enum class Branch { kUncond, kText, kFull };

void fill_inputs(const ModelConfig& cfg, const DenseMatrix& x, double t,
                 const SampleRequest& req, Branch branch, DenseMatrix& inputs) {
  for (std::size_t r = 0; r < x.rows(); ++r) {
    const std::span<const double> text =
        branch == Branch::kUncond ? std::span<const double>{} : req.text.row(r);
    const std::span<const double> ref =
        branch == Branch::kFull ? req.ref.row(r) : std::span<const double>{};
    assemble_input(cfg, x.row(r), t, text, ref, inputs.row(r));
  }
}

}  // namespace

DenseMatrix repeat_rows(std::span<const double> row, std::size_t n) {
  DenseMatrix out(n, row.size());
  for (std::size_t r = 0; r < n; ++r) {
    std::copy(row.begin(), row.end(), out.row(r).begin());
  }
  return out;
}

DenseMatrix sample(const FlowModel& model, const SampleRequest& req) {
  const ModelConfig& cfg = model.config();
  const std::size_t n = req.text.rows();
  if (req.euler_steps == 0) {
    throw ValidationError("sample: euler_steps must be >= 1");
  }
  if (req.ref.rows() != n || req.text.cols() != cfg.text_dim ||
      req.ref.cols() != cfg.ref_dim) {
    throw DimensionError(fmt::format(
        "sample: text {}x{} and ref {}x{} do not match the model ({}, {})",
        req.text.rows(), req.text.cols(), req.ref.rows(), req.ref.cols(),
        cfg.text_dim, cfg.ref_dim));
  }
  req.weights.validate();

  const VelocityField base(model, nullptr);
  const VelocityField adapted(model, req.delta);
  const VelocityField& full_field = adapted;
  const VelocityField& other_field = req.lora_all_branches ? adapted : base;

  DenseMatrix x(n, cfg.data_dim);
  std::mt19937_64 rng(req.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (double& v : x.values()) v = normal(rng);

  DenseMatrix inputs(n, cfg.input_dim());
  DenseMatrix v(n, cfg.data_dim);
  const double dt = 1.0 / static_cast<double>(req.euler_steps);
  for (std::size_t k = 0; k < req.euler_steps; ++k) {
    const double t = static_cast<double>(k) * dt;
    fill_inputs(cfg, x, t, req, Branch::kFull, inputs);
    const DenseMatrix f_full = full_field.eval(inputs);
    fill_inputs(cfg, x, t, req, Branch::kUncond, inputs);
    const DenseMatrix f_uncond = other_field.eval(inputs);
    if (req.mode == GuidanceMode::kCfg) {
      cfg_combine_into(f_full.values(), f_uncond.values(), req.lambda_cfg,
                       v.values());
    } else {
      fill_inputs(cfg, x, t, req, Branch::kText, inputs);
      const DenseMatrix f_text = other_field.eval(inputs);
      dcfg_combine_into(f_uncond.values(), f_text.values(), f_full.values(),
                        req.weights, v.values());
    }
    axpy(dt, v, x);
    if (!all_finite(x.values())) {
      throw NumericError(fmt::format(
          "sample: state became non-finite at Euler step {} of {} (t = {})",
          k + 1, req.euler_steps, t + dt));
    }
  }
  return x;
}

}  // namespace restyle
