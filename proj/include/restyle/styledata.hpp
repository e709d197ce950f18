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

// Synthetic styled data with known ground truth.
//
// A fixed orthonormal basis {u_1, ..., u_D} splits the data space into
//   u_1                     pitch axis
//   u_2 .. u_{1+E}          emotion axes (E emotions); class centroids and
//                           the energy measurement live here too
//   u_{2+E} .. u_D          timbre subspace holding the speaker offsets
//
// A sample is x = centroid(class) + offset(speaker) + pitch * u_1
//               + strength * u_emotion + energy * eps,   eps ~ N(0, I_D).

#ifndef RESTYLE_STYLEDATA_HPP_
#define RESTYLE_STYLEDATA_HPP_

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "restyle/linalg.hpp"

namespace restyle {

struct Range {
  double lo = 0.0;
  double hi = 0.0;
  bool contains(const Range& inner) const {
    return inner.lo >= lo && inner.hi <= hi;
  }
};

struct SubsetSpec {
  std::string name;
  Range pitch;
  Range energy;
  int emotion = -1;  // index into StyleSpec::emotion_names, -1 for neutral
  Range emotion_strength;
};

struct StyleSpec {
  std::size_t data_dim = 8;
  std::size_t n_classes = 4;
  std::size_t n_speakers = 16;
  std::vector<std::string> emotion_names = {"angry", "happy", "sad",
                                            "surprised"};
  double centroid_radius = 6.0;
  double speaker_scale = 1.5;
  std::uint64_t basis_seed = 20260101;
  Range pitch_range{-2.0, 2.0};
  Range energy_range{0.05, 0.5};
  Range emotion_range{0.0, 2.5};
  std::vector<SubsetSpec> subsets;

  // Base, pitch/energy extremes, correlated variants and one per emotion.
  static StyleSpec defaults();

  std::size_t n_emotions() const { return emotion_names.size(); }
  std::size_t timbre_dim() const { return data_dim - 1 - n_emotions(); }
  const SubsetSpec& subset(const std::string& name) const;

  // Throws ValidationError on a broken invariant.
  void validate() const;
};

nlohmann::json to_json(const StyleSpec& spec);
StyleSpec style_spec_from_json(const nlohmann::json& doc);

struct StyledSample {
  DenseVector x;
  std::size_t class_id = 0;
  std::size_t speaker_id = 0;
  DenseVector speaker_offset;
  double pitch = 0.0;
  double energy = 0.0;
  int emotion = -1;
  double emotion_strength = 0.0;
};

// Geometry derived from a validated StyleSpec: basis, centroids, offsets.
class StyleSpace {
 public:
  explicit StyleSpace(StyleSpec spec);

  const StyleSpec& spec() const { return spec_; }
  std::size_t dim() const { return spec_.data_dim; }
  std::size_t ref_dim() const { return spec_.data_dim + 1; }

  std::span<const double> pitch_axis() const { return basis_.row(0); }
  std::span<const double> emotion_axis(std::size_t k) const;
  // Rows are orthonormal.
  const DenseMatrix& timbre_basis() const { return timbre_; }
  const DenseMatrix& energy_basis() const { return energy_; }
  const DenseMatrix& basis() const { return basis_; }

  const DenseMatrix& centroids() const { return centroids_; }
  std::span<const double> centroid(std::size_t class_id) const;
  std::span<const double> speaker_offset(std::size_t speaker_id) const;

 private:
  StyleSpec spec_;
  DenseMatrix basis_;
  DenseMatrix timbre_;
  DenseMatrix energy_;
  DenseMatrix centroids_;
  DenseMatrix offsets_;
};

// Deterministic in (space, subset, n, seed). Throws ConfigError on an unknown
// subset name.
std::vector<StyledSample> generate(const StyleSpace& space,
                                   const std::string& subset, std::size_t n,
                                   std::uint64_t seed);

// Conditioning inputs fed to the model.
DenseVector text_embedding(std::size_t class_id, std::size_t n_classes);
// [offset + pitch * u_1 + strength * u_emotion, kEnergyRefScale * energy]
DenseVector reference_embedding(const StyleSpace& space,
                                const StyledSample& sample);
inline constexpr double kEnergyRefScale = 4.0;

DenseMatrix stack_x(std::span<const StyledSample> samples);

// Mean of <x - centroid - offset, u_1>; offset may be null.
double measure_pitch(const StyleSpace& space, const DenseMatrix& xs,
                     std::size_t class_id,
                     std::span<const double> offset = {});
double measure_pitch(const StyleSpace& space,
                     std::span<const StyledSample> samples);

// Per-coordinate sample standard deviation of the centroid-removed samples
// projected onto the energy subspace, after removing the batch mean.
// Needs at least two samples.
double measure_energy(const StyleSpace& space, const DenseMatrix& xs,
                      std::size_t class_id);
double measure_energy(const StyleSpace& space,
                      std::span<const StyledSample> samples);

// Mean of <x - centroid, u_emotion>.
double measure_emotion(const StyleSpace& space, const DenseMatrix& xs,
                       std::size_t class_id, std::size_t emotion);

// Fraction of rows whose nearest centroid is `class_id`.
double condition_fidelity(const DenseMatrix& xs, std::size_t class_id,
                          const DenseMatrix& centroids);
double condition_fidelity(const StyleSpace& space, const DenseMatrix& xs,
                          std::size_t class_id);

struct RegressionFit {
  double slope = 0.0;
  double intercept = 0.0;
  double r2 = 0.0;
};

// OLS fit gen = slope * ref + intercept. Needs >= 3 points and non-zero
// variance in ref (NumericError otherwise).
RegressionFit relative_regression(std::span<const double> ref_attrs,
                                  std::span<const double> gen_attrs);

double pearson_correlation(std::span<const double> a,
                           std::span<const double> b);
// Pearson correlation of average ranks.
double spearman_correlation(std::span<const double> a,
                            std::span<const double> b);

// One row per sample: x0..x{D-1}, class_id, speaker_id, pitch, energy,
// emotion, emotion_strength.
void export_csv(const StyleSpace& space, std::span<const StyledSample> samples,
                const std::filesystem::path& path);

}  // namespace restyle

#endif  // RESTYLE_STYLEDATA_HPP_
