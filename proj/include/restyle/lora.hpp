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

// Low-rank adapters: delta = (alpha / rank) * up * down, bound to one named
// linear layer. The stored adapter is scale-free; a runtime control scale is
// applied to the materialized delta.

#ifndef RESTYLE_LORA_HPP_
#define RESTYLE_LORA_HPP_

#include <cstddef>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "restyle/linalg.hpp"

namespace restyle {

inline constexpr int kAdapterSchemaVersion = 1;
// Production adapter shape (64-wide toy layers use kToyRank/kToyAlpha, which
// keep the same alpha/rank = 2 ratio).
inline constexpr std::size_t kDefaultRank = 32;
inline constexpr double kDefaultAlpha = 64.0;
inline constexpr std::size_t kToyRank = 4;
inline constexpr double kToyAlpha = 8.0;

struct LoraAdapter {
  std::string name;          // style label, e.g. "high_pitch"
  std::string target_layer;  // FlowModel layer name
  DenseMatrix down;          // rank x in_dim
  DenseMatrix up;            // out_dim x rank
  std::size_t rank = 0;
  double alpha = 0.0;
  // (adapter name, control scale) pairs; only set on fused exports.
  std::vector<std::pair<std::string, double>> provenance;

  std::size_t in_dim() const { return down.cols(); }
  std::size_t out_dim() const { return up.rows(); }
  double scale() const { return alpha / static_cast<double>(rank); }

  // Throws ValidationError/DimensionError on any broken invariant.
  void validate() const;
};

// (alpha / rank) * up * down, shape out_dim x in_dim.
DenseMatrix delta(const LoraAdapter& adapter);
// control * delta(adapter); control may be negative.
DenseMatrix scale_adapter(const LoraAdapter& adapter, double control);
// base + fused_delta.
DenseMatrix apply_fused(const DenseMatrix& base_weight,
                        const DenseMatrix& fused_delta);

// JSON document with row-major arrays; see README for the schema.
void save_adapter(const LoraAdapter& adapter,
                  const std::filesystem::path& path);
LoraAdapter load_adapter(const std::filesystem::path& path);

// Adapters in insertion order. Names are unique; adapters bound to the same
// layer must agree on (in_dim, out_dim).
class AdapterSet {
 public:
  AdapterSet() = default;
  explicit AdapterSet(std::vector<LoraAdapter> adapters);

  void add(LoraAdapter adapter);

  const std::vector<LoraAdapter>& adapters() const { return adapters_; }
  std::size_t size() const { return adapters_.size(); }
  bool empty() const { return adapters_.empty(); }

  // Distinct target layers in first-seen order.
  std::vector<std::string> layers() const;
  // Indices (into adapters()) of the adapters bound to `layer`.
  std::vector<std::size_t> indices_for_layer(const std::string& layer) const;

 private:
  std::vector<LoraAdapter> adapters_;
};

}  // namespace restyle

#endif  // RESTYLE_LORA_HPP_
