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

#include "restyle/fusion.hpp"

#include <algorithm>
#include <cmath>
#include <exception>

#include <fmt/format.h>

#include "restyle/error.hpp"

namespace restyle {

namespace {

void check_delta_set(std::span<const DenseMatrix> deltas, double rank_tol) {
  if (deltas.empty()) {
    throw ValidationError("orthogonalize_set: need at least one delta");
  }
  if (!(rank_tol > 0.0)) {
    throw ValidationError("orthogonalize_set: rank_tol must be positive");
  }
  for (const auto& d : deltas) {
    if (!d.same_shape(deltas.front())) {
      throw DimensionError(fmt::format(
          "orthogonalize_set: delta {}x{} does not match {}x{}", d.rows(),
          d.cols(), deltas.front().rows(), deltas.front().cols()));
    }
    require_finite(d.values(), "orthogonalize_set delta");
  }
  const std::size_t dim = deltas.front().size();
  if (deltas.size() > dim) {
    throw ValidationError(fmt::format(
        "orthogonalize_set: degenerate subspace, {} deltas in dimension {}",
        deltas.size(), dim));
  }
}

struct Residual {
  DenseVector values;
  bool dependent = false;
};

// v_i minus its least-squares projection onto the other deltas, with one
// refinement pass on the residual.
Residual project_out_others(std::span<const DenseMatrix> deltas,
                            std::size_t i, double rank_tol) {
  std::vector<std::span<const double>> others;
  others.reserve(deltas.size() - 1);
  for (std::size_t j = 0; j < deltas.size(); ++j) {
    if (j != i) others.push_back(deltas[j].values());
  }
  const std::span<const double> vi = deltas[i].values();
  Residual r{DenseVector(vi.begin(), vi.end())};
  for (int pass = 0; pass < 2; ++pass) {
    const DenseVector s = least_squares_columns(others, r.values, rank_tol);
    for (std::size_t j = 0; j < others.size(); ++j) {
      axpy(-s[j], others[j], r.values);
    }
  }
  const double original = norm(vi);
  if (original == 0.0 || norm(r.values) < kDependenceRatio * original) {
    std::fill(r.values.begin(), r.values.end(), 0.0);
    r.dependent = true;
  }
  return r;
}

OrthogonalizedSet assemble(std::span<const DenseMatrix> deltas,
                           std::vector<Residual> residuals) {
  OrthogonalizedSet out;
  const std::size_t rows = deltas.front().rows();
  const std::size_t cols = deltas.front().cols();
  out.deltas.reserve(residuals.size());
  for (std::size_t i = 0; i < residuals.size(); ++i) {
    if (residuals[i].dependent) {
      out.dependent.push_back(i);
      out.warnings.push_back(fmt::format(
          "delta {} is linearly dependent on the others; its orthogonalized "
          "delta is zero",
          i));
    }
    out.deltas.push_back(
        DenseMatrix(rows, cols, std::move(residuals[i].values)));
  }
  return out;
}

}  // namespace

OrthogonalizedSet orthogonalize_set(std::span<const DenseMatrix> deltas,
                                    double rank_tol) {
  check_delta_set(deltas, rank_tol);
  if (deltas.size() == 1) {
    return {{deltas.front()}, {}, {}};
  }
  const auto n = static_cast<std::ptrdiff_t>(deltas.size());
  std::vector<Residual> residuals(deltas.size());
  std::vector<std::exception_ptr> errors(deltas.size());
#pragma omp parallel for schedule(dynamic, 1)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    try {
      residuals[i] =
          project_out_others(deltas, static_cast<std::size_t>(i), rank_tol);
    } catch (...) {
      errors[i] = std::current_exception();
    }
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return assemble(deltas, std::move(residuals));
}

namespace serial {

OrthogonalizedSet orthogonalize_set(std::span<const DenseMatrix> deltas,
                                    double rank_tol) {
  check_delta_set(deltas, rank_tol);
  if (deltas.size() == 1) {
    return {{deltas.front()}, {}, {}};
  }
  std::vector<Residual> residuals;
  residuals.reserve(deltas.size());
  for (std::size_t i = 0; i < deltas.size(); ++i) {
    residuals.push_back(project_out_others(deltas, i, rank_tol));
  }
  return assemble(deltas, std::move(residuals));
}

}  // namespace serial

const DenseMatrix* FusedDelta::find(const std::string& layer) const {
  const auto it = layers.find(layer);
  return it == layers.end() ? nullptr : &it->second;
}

PreparedFusion::PreparedFusion(AdapterSet adapters, bool orthogonalize,
                               double rank_tol,
                               std::vector<LayerShape> layer_shapes)
    : adapters_(std::move(adapters)),
      orthogonalize_(orthogonalize),
      layer_shapes_(std::move(layer_shapes)) {
  const auto& list = adapters_.adapters();
  basis_.resize(list.size());
  for (const auto& layer : adapters_.layers()) {
    const auto idx = adapters_.indices_for_layer(layer);
    std::vector<DenseMatrix> deltas;
    deltas.reserve(idx.size());
    for (std::size_t i : idx) deltas.push_back(delta(list[i]));
    if (!orthogonalize_) {
      for (std::size_t k = 0; k < idx.size(); ++k) {
        basis_[idx[k]] = std::move(deltas[k]);
      }
      continue;
    }
    OrthogonalizedSet ortho = orthogonalize_set(deltas, rank_tol);
    for (std::size_t k = 0; k < idx.size(); ++k) {
      basis_[idx[k]] = std::move(ortho.deltas[k]);
    }
    for (std::size_t dep : ortho.dependent) {
      warnings_.push_back(fmt::format(
          "layer '{}': adapter '{}' is linearly dependent on the others and "
          "contributes nothing after orthogonalization",
          layer, list[idx[dep]].name));
    }
  }
}

FusedDelta PreparedFusion::combine(std::span<const double> alphas) const {
  const auto& list = adapters_.adapters();
  if (alphas.size() != list.size()) {
    throw DimensionError(fmt::format("fuse: {} alphas for {} adapters",
                                     alphas.size(), list.size()));
  }
  require_finite(alphas, "fuse alphas");
  FusedDelta out;
  out.warnings = warnings_;
  for (const auto& shape : layer_shapes_) {
    out.layers.emplace(shape.name, DenseMatrix(shape.rows, shape.cols));
  }
  for (std::size_t i = 0; i < list.size(); ++i) {
    const auto& a = list[i];
    auto it = out.layers.find(a.target_layer);
    if (it == out.layers.end()) {
      it = out.layers
               .emplace(a.target_layer, DenseMatrix(a.out_dim(), a.in_dim()))
               .first;
    } else if (it->second.rows() != a.out_dim() ||
               it->second.cols() != a.in_dim()) {
      throw DimensionError(fmt::format(
          "fuse: adapter '{}' does not match layer '{}' shape", a.name,
          a.target_layer));
    }
    axpy(alphas[i], basis_[i], it->second);
    const bool seen = std::any_of(
        out.provenance.begin(), out.provenance.end(),
        [&](const auto& p) { return p.first == a.name; });
    if (!seen) out.provenance.emplace_back(a.name, alphas[i]);
  }
  return out;
}

FusedDelta PreparedFusion::combine_by_name(
    const std::map<std::string, double>& scales) const {
  return combine(alphas_by_name(adapters_, scales));
}

std::vector<double> alphas_by_name(
    const AdapterSet& adapters, const std::map<std::string, double>& scales) {
  std::vector<double> alphas;
  alphas.reserve(adapters.size());
  for (const auto& a : adapters.adapters()) {
    const auto it = scales.find(a.name);
    if (it == scales.end()) {
      throw ConfigError(fmt::format("no scale given for adapter '{}'", a.name));
    }
    alphas.push_back(it->second);
  }
  return alphas;
}

FusedDelta fuse(const FusionRequest& request) {
  if (request.alphas.size() != request.adapters.size()) {
    throw DimensionError(fmt::format("fuse: {} alphas for {} adapters",
                                     request.alphas.size(),
                                     request.adapters.size()));
  }
  if (!(request.rank_tol > 0.0)) {
    throw ValidationError("fuse: rank_tol must be positive");
  }
  const PreparedFusion prepared(request.adapters, request.orthogonalize,
                                request.rank_tol, request.layer_shapes);
  return prepared.combine(request.alphas);
}

DenseMatrix interference_report(std::span<const DenseMatrix> deltas) {
  if (deltas.size() < 2) {
    throw ValidationError("interference_report: need at least two deltas");
  }
  const std::size_t n = deltas.size();
  std::vector<double> norms(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (deltas[i].size() != deltas.front().size()) {
      throw DimensionError("interference_report: deltas differ in size");
    }
    norms[i] = frobenius_norm(deltas[i]);
    if (norms[i] == 0.0) {
      throw NumericError(fmt::format(
          "interference_report: delta {} has zero norm, cosine undefined", i));
    }
  }
  DenseMatrix cos(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    cos(i, i) = 1.0;
    for (std::size_t j = i + 1; j < n; ++j) {
      const double c =
          dot(deltas[i].values(), deltas[j].values()) / (norms[i] * norms[j]);
      cos(i, j) = c;
      cos(j, i) = c;
    }
  }
  return cos;
}

std::vector<std::filesystem::path> export_fused(
    const FusedDelta& fused, const std::filesystem::path& directory) {
  std::vector<std::filesystem::path> written;
  for (const auto& [layer, d] : fused.layers) {
    LoraAdapter a;
    a.name = "fused";
    a.target_layer = layer;
    a.provenance = fused.provenance;
    if (d.rows() <= d.cols()) {
      a.rank = d.rows();
      a.up = DenseMatrix::identity(d.rows());
      a.down = d;
    } else {
      a.rank = d.cols();
      a.up = d;
      a.down = DenseMatrix::identity(d.cols());
    }
    a.alpha = static_cast<double>(a.rank);
    const auto path = directory / fmt::format("fused.{}.lora.json", layer);
    save_adapter(a, path);
    written.push_back(path);
  }
  return written;
}

}  // namespace restyle
