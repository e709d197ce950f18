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

// Orthogonal adapter fusion.
//
// For the N adapters bound to one layer, each vectorized delta v_i is
// replaced by its component orthogonal to the span of all the others,
//
//   v~_i = v_i - V_{-i} s_i,   s_i = argmin ||V_{-i} s - v_i||,
//
// which equals (I - P_{-i}) v_i for the projector P_{-i} = V_{-i} V_{-i}^+
// without ever forming a D x D matrix. Every adapter is projected against the
// same set of originals, so the result does not depend on input order. The
// fused layer delta is sum_i alpha_i * reshape(v~_i).

#ifndef RESTYLE_FUSION_HPP_
#define RESTYLE_FUSION_HPP_

#include <cstddef>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "restyle/linalg.hpp"
#include "restyle/lora.hpp"

namespace restyle {

// ||v~_i|| below this fraction of ||v_i|| marks v_i as linearly dependent on
// the others; its orthogonalized delta is set to exactly zero.
inline constexpr double kDependenceRatio = 1e-12;

struct OrthogonalizedSet {
  std::vector<DenseMatrix> deltas;     // same order as the input
  std::vector<std::size_t> dependent;  // indices zeroed as dependent
  std::vector<std::string> warnings;
};

// Joint (order-independent) orthogonalization of same-shape deltas. Each
// adapter's least-squares solve runs on its own OpenMP iteration.
OrthogonalizedSet orthogonalize_set(std::span<const DenseMatrix> deltas,
                                    double rank_tol = kDefaultRankTol);

struct LayerShape {
  std::string name;
  std::size_t rows = 0;
  std::size_t cols = 0;
};

struct FusionRequest {
  AdapterSet adapters;
  std::vector<double> alphas;  // one per entry of adapters.adapters()
  bool orthogonalize = true;
  double rank_tol = kDefaultRankTol;
  // Optional: layers listed here but without adapters get explicit zeros.
  std::vector<LayerShape> layer_shapes;
};

struct FusedDelta {
  std::map<std::string, DenseMatrix> layers;
  std::vector<std::pair<std::string, double>> provenance;
  std::vector<std::string> warnings;

  // nullptr when the layer carries no delta (treated as zero).
  const DenseMatrix* find(const std::string& layer) const;
};

FusedDelta fuse(const FusionRequest& request);

// Orthogonalization does not depend on the control scales, so sweeps prepare
// the per-layer bases once and recombine them for every grid point.
class PreparedFusion {
 public:
  PreparedFusion(AdapterSet adapters, bool orthogonalize,
                 double rank_tol = kDefaultRankTol,
                 std::vector<LayerShape> layer_shapes = {});

  const AdapterSet& adapters() const { return adapters_; }
  bool orthogonalized() const { return orthogonalize_; }
  const std::vector<std::string>& warnings() const { return warnings_; }
  // Basis delta (orthogonalized or raw) for adapters().adapters()[i].
  const DenseMatrix& basis(std::size_t i) const { return basis_[i]; }

  // alphas has one entry per adapter; sums run in adapter order.
  FusedDelta combine(std::span<const double> alphas) const;
  // One scale per style name; every adapter with that name gets it.
  FusedDelta combine_by_name(
      const std::map<std::string, double>& scales) const;

 private:
  AdapterSet adapters_;
  bool orthogonalize_;
  std::vector<LayerShape> layer_shapes_;
  std::vector<DenseMatrix> basis_;
  std::vector<std::string> warnings_;
};

// Expands per-style scales into the per-adapter alpha list of a set.
std::vector<double> alphas_by_name(const AdapterSet& adapters,
                                   const std::map<std::string, double>& scales);

// N x N matrix of cos(v_i, v_j). Throws NumericError on a zero-norm delta.
DenseMatrix interference_report(std::span<const DenseMatrix> deltas);

// Writes one adapter-schema file per layer, named "fused" with provenance.
// The full-rank delta is stored as an exact factorization (identity on the
// smaller side) with alpha == rank so the scale is 1.
std::vector<std::filesystem::path> export_fused(
    const FusedDelta& fused, const std::filesystem::path& directory);

namespace serial {

OrthogonalizedSet orthogonalize_set(std::span<const DenseMatrix> deltas,
                                    double rank_tol = kDefaultRankTol);

}  // namespace serial

}  // namespace restyle

#endif  // RESTYLE_FUSION_HPP_
