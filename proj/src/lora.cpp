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

#include "restyle/lora.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "restyle/error.hpp"
#include "restyle/io_util.hpp"

namespace restyle {

void LoraAdapter::validate() const {
  if (rank == 0) {
    throw ValidationError(fmt::format("adapter '{}': rank must be >= 1", name));
  }
  if (!(alpha > 0.0) || !std::isfinite(alpha)) {
    throw ValidationError(
        fmt::format("adapter '{}': alpha must be positive, got {}", name,
                    alpha));
  }
  if (down.rows() != rank || up.cols() != rank) {
    throw DimensionError(fmt::format(
        "adapter '{}': rank {} but down is {}x{} and up is {}x{}", name, rank,
        down.rows(), down.cols(), up.rows(), up.cols()));
  }
  if (rank > std::min(in_dim(), out_dim())) {
    throw ValidationError(fmt::format(
        "adapter '{}': rank {} exceeds min(in_dim {}, out_dim {})", name, rank,
        in_dim(), out_dim()));
  }
  require_finite(down.values(), "adapter down matrix");
  require_finite(up.values(), "adapter up matrix");
}

DenseMatrix delta(const LoraAdapter& adapter) {
  adapter.validate();
  DenseMatrix d = matmul(adapter.up, adapter.down);
  const double s = adapter.scale();
  for (double& x : d.values()) x *= s;
  return d;
}

DenseMatrix scale_adapter(const LoraAdapter& adapter, double control) {
  if (!std::isfinite(control)) {
    throw NumericError(
        fmt::format("adapter '{}': non-finite control scale", adapter.name));
  }
  DenseMatrix d = delta(adapter);
  for (double& x : d.values()) x *= control;
  return d;
}

DenseMatrix apply_fused(const DenseMatrix& base_weight,
                        const DenseMatrix& fused_delta) {
  return add(base_weight, fused_delta);
}

void save_adapter(const LoraAdapter& adapter,
                  const std::filesystem::path& path) {
  adapter.validate();
  nlohmann::json doc;
  doc["schema_version"] = kAdapterSchemaVersion;
  doc["name"] = adapter.name;
  doc["target_layer"] = adapter.target_layer;
  doc["rank"] = adapter.rank;
  doc["alpha"] = adapter.alpha;
  doc["in_dim"] = adapter.in_dim();
  doc["out_dim"] = adapter.out_dim();
  doc["down"] = adapter.down.storage();
  doc["up"] = adapter.up.storage();
  if (!adapter.provenance.empty()) {
    nlohmann::json prov = nlohmann::json::array();
    for (const auto& [name, scale] : adapter.provenance) {
      prov.push_back({{"adapter", name}, {"scale", scale}});
    }
    doc["provenance"] = std::move(prov);
  }
  write_json_file(path, doc);
}

LoraAdapter load_adapter(const std::filesystem::path& path) {
  const nlohmann::json doc = read_json_file(path);
  try {
    const int version = doc.at("schema_version").get<int>();
    if (version != kAdapterSchemaVersion) {
      throw VersionError(fmt::format("{}: adapter schema version {} (expected {})",
                                     path.string(), version,
                                     kAdapterSchemaVersion));
    }
    LoraAdapter a;
    a.name = doc.at("name").get<std::string>();
    a.target_layer = doc.at("target_layer").get<std::string>();
    a.rank = doc.at("rank").get<std::size_t>();
    a.alpha = doc.at("alpha").get<double>();
    const auto in_dim = doc.at("in_dim").get<std::size_t>();
    const auto out_dim = doc.at("out_dim").get<std::size_t>();
    if (a.rank == 0) {
      throw ValidationError(
          fmt::format("{}: adapter rank must be >= 1", path.string()));
    }
    a.down = DenseMatrix(a.rank, in_dim,
                         doc.at("down").get<std::vector<double>>());
    a.up = DenseMatrix(out_dim, a.rank, doc.at("up").get<std::vector<double>>());
    if (doc.contains("provenance")) {
      for (const auto& p : doc.at("provenance")) {
        a.provenance.emplace_back(p.at("adapter").get<std::string>(),
                                  p.at("scale").get<double>());
      }
    }
    a.validate();
    return a;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(
        fmt::format("{}: malformed adapter file: {}", path.string(), e.what()));
  }
}

AdapterSet::AdapterSet(std::vector<LoraAdapter> adapters) {
  for (auto& a : adapters) add(std::move(a));
}

void AdapterSet::add(LoraAdapter adapter) {
  adapter.validate();
  for (const auto& existing : adapters_) {
    if (existing.name == adapter.name &&
        existing.target_layer == adapter.target_layer) {
      throw ValidationError(fmt::format(
          "duplicate adapter '{}' for layer '{}'", adapter.name,
          adapter.target_layer));
    }
    if (existing.target_layer == adapter.target_layer &&
        (existing.in_dim() != adapter.in_dim() ||
         existing.out_dim() != adapter.out_dim())) {
      throw DimensionError(fmt::format(
          "adapter '{}' on layer '{}' is {}x{}, layer already has {}x{}",
          adapter.name, adapter.target_layer, adapter.out_dim(),
          adapter.in_dim(), existing.out_dim(), existing.in_dim()));
    }
  }
  adapters_.push_back(std::move(adapter));
}

std::vector<std::string> AdapterSet::layers() const {
  std::vector<std::string> out;
  for (const auto& a : adapters_) {
    if (std::find(out.begin(), out.end(), a.target_layer) == out.end()) {
      out.push_back(a.target_layer);
    }
  }
  return out;
}

std::vector<std::size_t> AdapterSet::indices_for_layer(
    const std::string& layer) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < adapters_.size(); ++i) {
    if (adapters_[i].target_layer == layer) out.push_back(i);
  }
  return out;
}

}  // namespace restyle
