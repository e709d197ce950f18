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

#include "restyle/styledata.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include <fmt/format.h>

#include "restyle/error.hpp"
#include "restyle/io_util.hpp"

namespace restyle {

namespace {

SubsetSpec make_subset(std::string name, Range pitch, Range energy,
                       int emotion = -1, Range strength = {}) {
  return {std::move(name), pitch, energy, emotion, strength};
}

void check_range(const Range& r, const char* what) {
  if (!std::isfinite(r.lo) || !std::isfinite(r.hi) || r.lo > r.hi) {
    throw ValidationError(
        fmt::format("{} range [{}, {}] is invalid", what, r.lo, r.hi));
  }
}

// Modified Gram-Schmidt, applied twice for orthogonality at f64 precision.
DenseMatrix random_orthonormal_basis(std::size_t dim, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  DenseMatrix q(dim, dim);
  for (double& v : q.values()) v = normal(rng);
  for (std::size_t i = 0; i < dim; ++i) {
    auto qi = q.row(i);
    for (int pass = 0; pass < 2; ++pass) {
      for (std::size_t j = 0; j < i; ++j) {
        axpy(-dot(q.row(j), qi), q.row(j), qi);
      }
    }
    const double n = norm(qi);
    if (n < 1e-8) {
      throw NumericError("style basis: degenerate random draw");
    }
    for (double& v : qi) v /= n;
  }
  return q;
}

DenseMatrix basis_rows(const DenseMatrix& basis, std::size_t first,
                       std::size_t count) {
  DenseMatrix out(count, basis.cols());
  for (std::size_t r = 0; r < count; ++r) {
    const auto src = basis.row(first + r);
    std::copy(src.begin(), src.end(), out.row(r).begin());
  }
  return out;
}

void check_batch(const StyleSpace& space, const DenseMatrix& xs,
                 std::size_t class_id, std::size_t min_rows, const char* op) {
  if (xs.rows() < min_rows) {
    throw ValidationError(fmt::format("{}: need at least {} sample(s), got {}",
                                      op, min_rows, xs.rows()));
  }
  if (xs.cols() != space.dim()) {
    throw DimensionError(fmt::format("{}: samples have dim {}, expected {}",
                                     op, xs.cols(), space.dim()));
  }
  if (class_id >= space.spec().n_classes) {
    throw ValidationError(fmt::format("{}: class {} out of range", op,
                                      class_id));
  }
}

double energy_from_projections(const DenseMatrix& y) {
  const std::size_t n = y.rows();
  const std::size_t k = y.cols();
  DenseVector mean(k, 0.0);
  for (std::size_t r = 0; r < n; ++r) axpy(1.0, y.row(r), mean);
  for (double& m : mean) m /= static_cast<double>(n);
  double ss = 0.0;
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t j = 0; j < k; ++j) {
      const double d = y(r, j) - mean[j];
      ss += d * d;
    }
  }
  return std::sqrt(ss / (static_cast<double>(n - 1) * static_cast<double>(k)));
}

void project_row(const DenseMatrix& basis, std::span<const double> x,
                 std::span<const double> centroid, std::span<double> out) {
  for (std::size_t j = 0; j < basis.rows(); ++j) {
    const auto u = basis.row(j);
    double acc = 0.0;
    for (std::size_t d = 0; d < x.size(); ++d) acc += (x[d] - centroid[d]) * u[d];
    out[j] = acc;
  }
}

std::vector<double> average_ranks(std::span<const double> v) {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(v.size());
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = r;
    i = j + 1;
  }
  return ranks;
}

}  // namespace

StyleSpec StyleSpec::defaults() {
  StyleSpec s;
  const Range base_pitch{-1.0, 1.0};
  const Range base_energy{0.1, 0.3};
  s.subsets = {
      make_subset("base", base_pitch, base_energy),
      make_subset("high_pitch", {1.0, 2.0}, base_energy),
      make_subset("low_pitch", {-2.0, -1.0}, base_energy),
      make_subset("high_energy", base_pitch, {0.35, 0.5}),
      make_subset("low_energy", base_pitch, {0.05, 0.1}),
      // Style subsets whose attributes move together, for entangled adapters.
      make_subset("high_pitch_corr", {1.0, 2.0}, {0.3, 0.4}),
      make_subset("high_energy_corr", {0.5, 1.5}, {0.35, 0.5}),
  };
  for (std::size_t k = 0; k < s.emotion_names.size(); ++k) {
    s.subsets.push_back(make_subset(s.emotion_names[k], base_pitch,
                                    base_energy, static_cast<int>(k),
                                    {1.0, 2.0}));
  }
  return s;
}

const SubsetSpec& StyleSpec::subset(const std::string& name) const {
  for (const auto& s : subsets) {
    if (s.name == name) return s;
  }
  throw ConfigError(fmt::format("unknown subset '{}'", name));
}

void StyleSpec::validate() const {
  if (n_classes < 2) throw ValidationError("style spec: n_classes must be >= 2");
  if (n_speakers < 1) {
    throw ValidationError("style spec: n_speakers must be >= 1");
  }
  if (emotion_names.empty()) {
    throw ValidationError("style spec: need at least one emotion axis");
  }
  if (data_dim < n_emotions() + 2) {
    throw ValidationError(fmt::format(
        "style spec: data_dim {} leaves no timbre subspace after pitch and {} "
        "emotion axes",
        data_dim, n_emotions()));
  }
  if ((n_classes + 1) / 2 > n_emotions()) {
    throw ValidationError(fmt::format(
        "style spec: {} classes need {} centroid axes, only {} available",
        n_classes, (n_classes + 1) / 2, n_emotions()));
  }
  if (!(centroid_radius > 0.0) || !(speaker_scale >= 0.0)) {
    throw ValidationError("style spec: radius and speaker scale must be >= 0");
  }
  check_range(pitch_range, "pitch");
  check_range(energy_range, "energy");
  check_range(emotion_range, "emotion");
  if (energy_range.lo < 0.0) {
    throw ValidationError("style spec: energy must be non-negative");
  }
  if (subsets.empty()) throw ValidationError("style spec: no subsets");
  for (std::size_t i = 0; i < subsets.size(); ++i) {
    const auto& s = subsets[i];
    check_range(s.pitch, "subset pitch");
    check_range(s.energy, "subset energy");
    if (!pitch_range.contains(s.pitch) || !energy_range.contains(s.energy)) {
      throw ValidationError(fmt::format(
          "subset '{}' ranges lie outside the global ranges", s.name));
    }
    if (s.emotion >= static_cast<int>(n_emotions()) || s.emotion < -1) {
      throw ValidationError(
          fmt::format("subset '{}': emotion index {} out of range", s.name,
                      s.emotion));
    }
    if (s.emotion >= 0) {
      check_range(s.emotion_strength, "subset emotion");
      if (!emotion_range.contains(s.emotion_strength)) {
        throw ValidationError(fmt::format(
            "subset '{}' emotion strength outside the global range", s.name));
      }
    }
    for (std::size_t j = 0; j < i; ++j) {
      if (subsets[j].name == s.name) {
        throw ValidationError(fmt::format("duplicate subset '{}'", s.name));
      }
    }
  }
}

namespace {

nlohmann::json range_json(const Range& r) { return {r.lo, r.hi}; }

Range range_from(const nlohmann::json& j) {
  if (!j.is_array() || j.size() != 2) {
    throw ConfigError("range must be a two-element array");
  }
  return {j[0].get<double>(), j[1].get<double>()};
}

}  // namespace

nlohmann::json to_json(const StyleSpec& spec) {
  nlohmann::json subsets = nlohmann::json::array();
  for (const auto& s : spec.subsets) {
    nlohmann::json j{{"name", s.name},
                     {"pitch", range_json(s.pitch)},
                     {"energy", range_json(s.energy)},
                     {"emotion", s.emotion}};
    if (s.emotion >= 0) j["emotion_strength"] = range_json(s.emotion_strength);
    subsets.push_back(std::move(j));
  }
  return {{"data_dim", spec.data_dim},
          {"n_classes", spec.n_classes},
          {"n_speakers", spec.n_speakers},
          {"emotion_names", spec.emotion_names},
          {"centroid_radius", spec.centroid_radius},
          {"speaker_scale", spec.speaker_scale},
          {"basis_seed", spec.basis_seed},
          {"pitch_range", range_json(spec.pitch_range)},
          {"energy_range", range_json(spec.energy_range)},
          {"emotion_range", range_json(spec.emotion_range)},
          {"subsets", std::move(subsets)}};
}

StyleSpec style_spec_from_json(const nlohmann::json& doc) {
  StyleSpec s = StyleSpec::defaults();
  try {
    if (doc.contains("data_dim")) s.data_dim = doc["data_dim"].get<std::size_t>();
    if (doc.contains("n_classes")) {
      s.n_classes = doc["n_classes"].get<std::size_t>();
    }
    if (doc.contains("n_speakers")) {
      s.n_speakers = doc["n_speakers"].get<std::size_t>();
    }
    if (doc.contains("emotion_names")) {
      s.emotion_names = doc["emotion_names"].get<std::vector<std::string>>();
    }
    if (doc.contains("centroid_radius")) {
      s.centroid_radius = doc["centroid_radius"].get<double>();
    }
    if (doc.contains("speaker_scale")) {
      s.speaker_scale = doc["speaker_scale"].get<double>();
    }
    if (doc.contains("basis_seed")) {
      s.basis_seed = doc["basis_seed"].get<std::uint64_t>();
    }
    if (doc.contains("pitch_range")) s.pitch_range = range_from(doc["pitch_range"]);
    if (doc.contains("energy_range")) {
      s.energy_range = range_from(doc["energy_range"]);
    }
    if (doc.contains("emotion_range")) {
      s.emotion_range = range_from(doc["emotion_range"]);
    }
    if (doc.contains("subsets")) {
      s.subsets.clear();
      for (const auto& j : doc["subsets"]) {
        SubsetSpec sub;
        sub.name = j.at("name").get<std::string>();
        sub.pitch = range_from(j.at("pitch"));
        sub.energy = range_from(j.at("energy"));
        sub.emotion = j.value("emotion", -1);
        if (j.contains("emotion_strength")) {
          sub.emotion_strength = range_from(j["emotion_strength"]);
        }
        s.subsets.push_back(std::move(sub));
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(fmt::format("style spec: {}", e.what()));
  }
  s.validate();
  return s;
}

StyleSpace::StyleSpace(StyleSpec spec) : spec_(std::move(spec)) {
  spec_.validate();
  const std::size_t dim = spec_.data_dim;
  const std::size_t ne = spec_.n_emotions();
  basis_ = random_orthonormal_basis(dim, spec_.basis_seed);
  energy_ = basis_rows(basis_, 1, ne);
  timbre_ = basis_rows(basis_, 1 + ne, spec_.timbre_dim());

  centroids_ = DenseMatrix(spec_.n_classes, dim);
  for (std::size_t c = 0; c < spec_.n_classes; ++c) {
    const double sign = (c % 2 == 0) ? 1.0 : -1.0;
    axpy(sign * spec_.centroid_radius, basis_.row(1 + c / 2),
         centroids_.row(c));
  }

  std::mt19937_64 rng(spec_.basis_seed ^ 0x5eedf00dULL);
  std::normal_distribution<double> normal(0.0, spec_.speaker_scale);
  offsets_ = DenseMatrix(spec_.n_speakers, dim);
  for (std::size_t s = 0; s < spec_.n_speakers; ++s) {
    for (std::size_t k = 0; k < timbre_.rows(); ++k) {
      axpy(normal(rng), timbre_.row(k), offsets_.row(s));
    }
  }
}

std::span<const double> StyleSpace::emotion_axis(std::size_t k) const {
  if (k >= spec_.n_emotions()) {
    throw ValidationError(fmt::format("emotion index {} out of range", k));
  }
  return basis_.row(1 + k);
}

std::span<const double> StyleSpace::centroid(std::size_t class_id) const {
  if (class_id >= spec_.n_classes) {
    throw ValidationError(fmt::format("class {} out of range", class_id));
  }
  return centroids_.row(class_id);
}

std::span<const double> StyleSpace::speaker_offset(
    std::size_t speaker_id) const {
  if (speaker_id >= spec_.n_speakers) {
    throw ValidationError(fmt::format("speaker {} out of range", speaker_id));
  }
  return offsets_.row(speaker_id);
}

std::vector<StyledSample> generate(const StyleSpace& space,
                                   const std::string& subset, std::size_t n,
                                   std::uint64_t seed) {
  const StyleSpec& spec = space.spec();
  const SubsetSpec& sub = spec.subset(subset);
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick_class(0, spec.n_classes - 1);
  std::uniform_int_distribution<std::size_t> pick_speaker(0,
                                                          spec.n_speakers - 1);
  std::uniform_real_distribution<double> pitch(sub.pitch.lo, sub.pitch.hi);
  std::uniform_real_distribution<double> energy(sub.energy.lo, sub.energy.hi);
  std::uniform_real_distribution<double> strength(sub.emotion_strength.lo,
                                                  sub.emotion_strength.hi);
  std::normal_distribution<double> normal(0.0, 1.0);

  std::vector<StyledSample> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    StyledSample s;
    s.class_id = pick_class(rng);
    s.speaker_id = pick_speaker(rng);
    s.pitch = pitch(rng);
    s.energy = energy(rng);
    s.emotion = sub.emotion;
    if (sub.emotion >= 0) s.emotion_strength = strength(rng);
    const auto off = space.speaker_offset(s.speaker_id);
    s.speaker_offset.assign(off.begin(), off.end());
    const auto c = space.centroid(s.class_id);
    s.x.assign(c.begin(), c.end());
    axpy(1.0, off, s.x);
    axpy(s.pitch, space.pitch_axis(), s.x);
    if (s.emotion >= 0) {
      axpy(s.emotion_strength,
           space.emotion_axis(static_cast<std::size_t>(s.emotion)), s.x);
    }
    for (double& v : s.x) v += s.energy * normal(rng);
    out.push_back(std::move(s));
  }
  return out;
}

DenseVector text_embedding(std::size_t class_id, std::size_t n_classes) {
  if (class_id >= n_classes) {
    throw ValidationError(
        fmt::format("text_embedding: class {} of {}", class_id, n_classes));
  }
  DenseVector e(n_classes, 0.0);
  e[class_id] = 1.0;
  return e;
}

DenseVector reference_embedding(const StyleSpace& space,
                                const StyledSample& sample) {
  if (sample.speaker_offset.size() != space.dim()) {
    throw DimensionError("reference_embedding: offset has wrong dimension");
  }
  DenseVector ref(sample.speaker_offset);
  axpy(sample.pitch, space.pitch_axis(), ref);
  if (sample.emotion >= 0) {
    axpy(sample.emotion_strength,
         space.emotion_axis(static_cast<std::size_t>(sample.emotion)), ref);
  }
  ref.push_back(kEnergyRefScale * sample.energy);
  return ref;
}

DenseMatrix stack_x(std::span<const StyledSample> samples) {
  if (samples.empty()) return {};
  DenseMatrix xs(samples.size(), samples.front().x.size());
  for (std::size_t r = 0; r < samples.size(); ++r) {
    if (samples[r].x.size() != xs.cols()) {
      throw DimensionError("stack_x: samples differ in dimension");
    }
    std::copy(samples[r].x.begin(), samples[r].x.end(), xs.row(r).begin());
  }
  return xs;
}

double measure_pitch(const StyleSpace& space, const DenseMatrix& xs,
                     std::size_t class_id, std::span<const double> offset) {
  check_batch(space, xs, class_id, 1, "measure_pitch");
  if (!offset.empty() && offset.size() != space.dim()) {
    throw DimensionError("measure_pitch: offset has wrong dimension");
  }
  const auto u = space.pitch_axis();
  const auto c = space.centroid(class_id);
  double base = dot(c, u);
  if (!offset.empty()) base += dot(offset, u);
  double acc = 0.0;
  for (std::size_t r = 0; r < xs.rows(); ++r) acc += dot(xs.row(r), u) - base;
  return acc / static_cast<double>(xs.rows());
}

double measure_pitch(const StyleSpace& space,
                     std::span<const StyledSample> samples) {
  if (samples.empty()) throw ValidationError("measure_pitch: empty batch");
  const auto u = space.pitch_axis();
  double acc = 0.0;
  for (const auto& s : samples) {
    acc += dot(s.x, u) - dot(space.centroid(s.class_id), u) -
           dot(s.speaker_offset, u);
  }
  return acc / static_cast<double>(samples.size());
}

double measure_energy(const StyleSpace& space, const DenseMatrix& xs,
                      std::size_t class_id) {
  check_batch(space, xs, class_id, 2, "measure_energy");
  const DenseMatrix& e = space.energy_basis();
  DenseMatrix y(xs.rows(), e.rows());
  const auto c = space.centroid(class_id);
  for (std::size_t r = 0; r < xs.rows(); ++r) project_row(e, xs.row(r), c, y.row(r));
  return energy_from_projections(y);
}

double measure_energy(const StyleSpace& space,
                      std::span<const StyledSample> samples) {
  if (samples.size() < 2) {
    throw ValidationError("measure_energy: need at least 2 samples");
  }
  const DenseMatrix& e = space.energy_basis();
  DenseMatrix y(samples.size(), e.rows());
  for (std::size_t r = 0; r < samples.size(); ++r) {
    project_row(e, samples[r].x, space.centroid(samples[r].class_id), y.row(r));
  }
  return energy_from_projections(y);
}

double measure_emotion(const StyleSpace& space, const DenseMatrix& xs,
                       std::size_t class_id, std::size_t emotion) {
  check_batch(space, xs, class_id, 1, "measure_emotion");
  const auto u = space.emotion_axis(emotion);
  const double base = dot(space.centroid(class_id), u);
  double acc = 0.0;
  for (std::size_t r = 0; r < xs.rows(); ++r) acc += dot(xs.row(r), u) - base;
  return acc / static_cast<double>(xs.rows());
}

double condition_fidelity(const DenseMatrix& xs, std::size_t class_id,
                          const DenseMatrix& centroids) {
  if (xs.rows() == 0) {
    throw ValidationError("condition_fidelity: empty batch");
  }
  if (class_id >= centroids.rows() || xs.cols() != centroids.cols()) {
    throw DimensionError("condition_fidelity: class or dimension mismatch");
  }
  std::size_t hits = 0;
  for (std::size_t r = 0; r < xs.rows(); ++r) {
    std::size_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < centroids.rows(); ++c) {
      double d = 0.0;
      for (std::size_t j = 0; j < xs.cols(); ++j) {
        const double diff = xs(r, j) - centroids(c, j);
        d += diff * diff;
      }
      if (d < best_d) {
        best_d = d;
        best = c;
      }
    }
    if (best == class_id) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(xs.rows());
}

double condition_fidelity(const StyleSpace& space, const DenseMatrix& xs,
                          std::size_t class_id) {
  return condition_fidelity(xs, class_id, space.centroids());
}

RegressionFit relative_regression(std::span<const double> ref_attrs,
                                  std::span<const double> gen_attrs) {
  if (ref_attrs.size() != gen_attrs.size()) {
    throw DimensionError("relative_regression: length mismatch");
  }
  const std::size_t n = ref_attrs.size();
  if (n < 3) throw ValidationError("relative_regression: need >= 3 points");
  require_finite(ref_attrs, "relative_regression ref");
  require_finite(gen_attrs, "relative_regression gen");
  const double nd = static_cast<double>(n);
  const double mx =
      std::accumulate(ref_attrs.begin(), ref_attrs.end(), 0.0) / nd;
  const double my =
      std::accumulate(gen_attrs.begin(), gen_attrs.end(), 0.0) / nd;
  double sxx = 0.0;
  double sxy = 0.0;
  double syy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double dx = ref_attrs[i] - mx;
    const double dy = gen_attrs[i] - my;
    sxx += dx * dx;
    sxy += dx * dy;
    syy += dy * dy;
  }
  if (!(sxx > 0.0)) {
    throw NumericError("relative_regression: reference attribute has zero "
                       "variance, fit is degenerate");
  }
  RegressionFit fit;
  fit.slope = sxy / sxx;
  fit.intercept = my - fit.slope * mx;
  fit.r2 = syy > 0.0 ? (sxy * sxy) / (sxx * syy) : 1.0;
  return fit;
}

double pearson_correlation(std::span<const double> a,
                           std::span<const double> b) {
  if (a.size() != b.size() || a.size() < 2) {
    throw DimensionError("pearson_correlation: need two equal-length series");
  }
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
  const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
  double sab = 0.0;
  double saa = 0.0;
  double sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  if (!(saa > 0.0) || !(sbb > 0.0)) {
    throw NumericError("pearson_correlation: constant series");
  }
  return sab / std::sqrt(saa * sbb);
}

double spearman_correlation(std::span<const double> a,
                            std::span<const double> b) {
  const auto ra = average_ranks(a);
  const auto rb = average_ranks(b);
  return pearson_correlation(ra, rb);
}

void export_csv(const StyleSpace& space, std::span<const StyledSample> samples,
                const std::filesystem::path& path) {
  std::vector<std::string> cols;
  for (std::size_t j = 0; j < space.dim(); ++j) cols.push_back(fmt::format("x{}", j));
  for (const char* c : {"class_id", "speaker_id", "pitch", "energy", "emotion",
                        "emotion_strength"}) {
    cols.emplace_back(c);
  }
  CsvTable table(std::move(cols));
  for (const auto& s : samples) {
    std::vector<std::string> row;
    for (double v : s.x) row.push_back(CsvTable::cell(v));
    row.push_back(CsvTable::cell(s.class_id));
    row.push_back(CsvTable::cell(s.speaker_id));
    row.push_back(CsvTable::cell(s.pitch));
    row.push_back(CsvTable::cell(s.energy));
    row.push_back(s.emotion >= 0
                      ? space.spec().emotion_names[static_cast<std::size_t>(
                            s.emotion)]
                      : std::string("neutral"));
    row.push_back(CsvTable::cell(s.emotion_strength));
    table.add_row(std::move(row));
  }
  table.write(path);
}

}  // namespace restyle
