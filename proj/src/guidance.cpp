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

#include "restyle/guidance.hpp"

#include <cmath>

#include <fmt/format.h>

#include "restyle/error.hpp"

namespace restyle {

namespace {

void check_lengths(std::size_t a, std::size_t b, std::size_t out) {
  if (a != b || a != out) {
    throw DimensionError(
        fmt::format("guidance: branch lengths {}, {} and output {} differ", a,
                    b, out));
  }
}

}  // namespace

void GuidanceWeights::validate() const {
  if (!std::isfinite(lambda_t) || !std::isfinite(lambda_a)) {
    throw NumericError(fmt::format(
        "guidance weights must be finite (lambda_t={}, lambda_a={})",
        lambda_t, lambda_a));
  }
}

BranchCoefficients dcfg_coefficients(const GuidanceWeights& w) {
  return {-w.lambda_t, 1.0 + w.lambda_t - w.lambda_a, w.lambda_a};
}

GuidanceWeights cfg_equivalent_weights(double lambda_cfg) {
  if (!std::isfinite(lambda_cfg)) {
    throw NumericError("cfg_equivalent_weights: lambda_cfg must be finite");
  }
  return {lambda_cfg, 1.0 + lambda_cfg};
}

void cfg_combine_into(std::span<const double> f_full,
                      std::span<const double> f_uncond, double lambda_cfg,
                      std::span<double> out) {
  check_lengths(f_full.size(), f_uncond.size(), out.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double full = f_full[i];
    out[i] = full + lambda_cfg * (full - f_uncond[i]);
  }
}

void dcfg_combine_into(std::span<const double> f_uncond,
                       std::span<const double> f_text,
                       std::span<const double> f_full,
                       const GuidanceWeights& w, std::span<double> out) {
  check_lengths(f_uncond.size(), f_text.size(), out.size());
  check_lengths(f_full.size(), f_text.size(), out.size());
  w.validate();
  // Same value as f_text + l_t (f_text - f_uncond) + l_a (f_full - f_text),
  // arranged so that l_a = 0 never reads f_full and (l_t, l_a) = (0, 1)
  // returns f_full exactly.
  const double keep_text = 1.0 - w.lambda_a;
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double text = f_text[i];
    const double full = f_full[i];
    out[i] = keep_text * text + w.lambda_a * full +
             w.lambda_t * (text - f_uncond[i]);
  }
}

DenseVector cfg_combine(std::span<const double> f_full,
                        std::span<const double> f_uncond, double lambda_cfg) {
  DenseVector out(f_full.size());
  cfg_combine_into(f_full, f_uncond, lambda_cfg, out);
  return out;
}

DenseVector dcfg_combine(std::span<const double> f_uncond,
                         std::span<const double> f_text,
                         std::span<const double> f_full,
                         const GuidanceWeights& w) {
  DenseVector out(f_text.size());
  dcfg_combine_into(f_uncond, f_text, f_full, w, out);
  return out;
}

DenseVector dcfg_combine(const BranchOutputs& branches,
                         const GuidanceWeights& w) {
  return dcfg_combine(branches.f_uncond, branches.f_text, branches.f_full, w);
}

}  // namespace restyle
