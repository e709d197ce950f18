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

// Experiment configuration, evaluation over a fixed reference set, and the
// commands behind the `restyle` CLI. Every command writes its resolved
// configuration as config.json next to its outputs.

#ifndef RESTYLE_EXPERIMENT_HPP_
#define RESTYLE_EXPERIMENT_HPP_

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "restyle/flow_model.hpp"
#include "restyle/fusion.hpp"
#include "restyle/guidance.hpp"
#include "restyle/lora.hpp"
#include "restyle/sampler.hpp"
#include "restyle/styledata.hpp"
#include "restyle/tco.hpp"
#include "restyle/trainer.hpp"

namespace restyle {

struct EvalConfig {
  std::string subset = "base";
  std::size_t n_refs = 32;
  std::size_t samples_per_ref = 16;
  std::uint64_t seed = 99;
  std::size_t euler_steps = kDefaultEulerSteps;
};

struct GenerationSettings {
  GuidanceMode mode = GuidanceMode::kDcfg;
  GuidanceWeights weights;
  double lambda_cfg = 2.0;
  bool lora_all_branches = false;
};

struct RewardConfig {
  std::size_t n_refs = 8;
  std::size_t samples_per_ref = 8;
  std::size_t euler_steps = 8;
};

struct ExperimentConfig {
  std::uint64_t seed = 1;
  std::filesystem::path output_dir = "restyle_out";
  std::filesystem::path base_checkpoint;  // default: output_dir/base.flow.json
  std::filesystem::path adapter_dir;      // default: output_dir/adapters
  StyleSpec style = StyleSpec::defaults();
  ModelConfig model;

  std::size_t base_dataset_size = 8192;
  TrainConfig base_train;
  bool tco_enabled = true;
  TcoConfig tco;
  RewardConfig reward;

  std::size_t lora_dataset_size = 4096;
  LoraTrainConfig lora_train;

  GenerationSettings generation;
  bool orthogonalize = true;
  EvalConfig eval;

  std::string sweep_adapter = "high_pitch";
  std::vector<double> scales = {-2.0, -1.0, 0.0, 1.0, 2.0};
  std::vector<std::string> grid_adapters = {"high_pitch", "high_energy"};
  std::vector<double> scales_b = {-2.0, -1.0, 0.0, 1.0, 2.0};
  std::vector<double> scales_c = {0.0, 1.0};
  std::string relative_adapter = "high_pitch";
  std::vector<double> relative_scales = {0.0, 1.0, 2.0};
  std::string ablate_adapter = "high_pitch";
  double ablate_scale = 1.0;
  std::vector<double> ablate_lambda_cfg = {2.0, 0.5};
  std::vector<double> ablate_lambda_a = {3.0, 1.5, 0.5};
  std::filesystem::path no_tco_checkpoint;  // trained on demand if empty
  std::string contradict_reference_subset = "high_pitch";
  std::string contradict_adapter = "low_pitch";
  std::vector<double> contradict_scales = {0.0, 1.0, 2.0};

  int threads = 1;

  std::filesystem::path base_path() const;
  std::filesystem::path adapters_path() const;
  // Throws ConfigError on an inconsistent configuration.
  void validate() const;
};

nlohmann::json to_json(const ExperimentConfig& cfg);
// Missing keys keep their defaults. Throws ConfigError on bad values.
ExperimentConfig experiment_config_from_json(const nlohmann::json& doc);
ExperimentConfig load_experiment_config(const std::filesystem::path& path);

// The model dimensions implied by a style spec.
ModelConfig model_config_for(const StyleSpace& space, ModelConfig model);

// Which attribute a style subset moves relative to "base".
enum class AttributeKind { kPitch, kEnergy, kEmotion };
struct Attribute {
  AttributeKind kind = AttributeKind::kPitch;
  std::size_t emotion = 0;

  std::string label(const StyleSpec& spec) const;
};

Attribute attribute_for_subset(const StyleSpec& spec,
                               const std::string& subset);
double reference_attribute(const Attribute& attr, const StyledSample& ref);
double measure_attribute(const StyleSpace& space, const Attribute& attr,
                         const DenseMatrix& xs, std::size_t class_id,
                         std::span<const double> offset);

struct RefResult {
  double pitch = 0.0;
  double energy = 0.0;
  double fidelity = 0.0;
  double timbre = 0.0;
  DenseVector emotions;
};

struct EvalResult {
  std::vector<RefResult> per_ref;
  double pitch = 0.0;
  double energy = 0.0;
  double fidelity = 0.0;
  double timbre = 0.0;
  DenseVector emotions;
  DenseMatrix samples;  // refs.size() * samples_per_ref rows, ref-major

  double attribute(const Attribute& attr) const;
  double ref_attribute(const Attribute& attr, std::size_t ref) const;
};

// Generates samples_per_ref samples for every reference (text = reference
// class) and scores them.
EvalResult evaluate(const FlowModel& model, const StyleSpace& space,
                    std::span<const StyledSample> refs,
                    std::size_t samples_per_ref,
                    const GenerationSettings& settings,
                    const FusedDelta* delta, std::size_t euler_steps,
                    std::uint64_t seed);

std::vector<StyledSample> eval_references(const StyleSpace& space,
                                          const EvalConfig& eval);

// Reward used for reward-weighted training: mean timbre reward of guided
// samples for fresh base references drawn from (seed, step).
RewardFn make_timbre_reward(const StyleSpace& space,
                            const GenerationSettings& settings,
                            const RewardConfig& reward, std::uint64_t seed);

// Adapter files: <dir>/<name>.<layer>.lora.json plus <dir>/<name>.manifest.json.
std::vector<std::filesystem::path> save_adapter_set(
    const AdapterSet& set, const std::string& name, const std::string& subset,
    const std::filesystem::path& dir);
AdapterSet load_adapter_set(const std::filesystem::path& dir,
                            std::span<const std::string> names);
std::string adapter_subset(const std::filesystem::path& dir,
                           const std::string& name);

// Trains the base model (with reward weighting if enabled in cfg).
FlowModel train_base_model(const ExperimentConfig& cfg, bool use_tco,
                           std::vector<TrainLogRow>* log = nullptr);
AdapterSet train_style_adapter(const ExperimentConfig& cfg,
                               const FlowModel& base,
                               const std::string& subset,
                               std::vector<TrainLogRow>* log = nullptr);

// Command outputs; each also writes CSV/JSON files under cfg.output_dir.
struct SweepRow {
  double scale = 0.0;
  double attribute = 0.0;
  double pitch = 0.0;
  double energy = 0.0;
  double fidelity = 0.0;
  double timbre = 0.0;
};

struct GridRow {
  std::vector<double> scales;
  double pitch = 0.0;
  double energy = 0.0;
  std::vector<double> attributes;  // one per grid adapter
  double fidelity = 0.0;
  double timbre = 0.0;
};

struct RelativeFitRow {
  double scale = 0.0;
  RegressionFit fit;
};

struct RelativeResult {
  std::vector<RelativeFitRow> fits;
  std::vector<double> ref_attribute;                // per reference
  std::vector<std::vector<double>> gen_attribute;   // [scale][reference]
};

struct AblateRow {
  std::string setting;
  double lambda_t = 0.0;
  double lambda_a = 0.0;
  double attr_shift = 0.0;
  double ref_correlation = 0.0;
  double fidelity = 0.0;
  double timbre = 0.0;
};

struct ContradictRow {
  double scale = 0.0;
  double success_rate = 0.0;
  double attribute = 0.0;
};

// Off-target leakage of a grid: entry (i, j) is the mean total variation of
// attribute j along adapter i's axis divided by its mean total variation
// along its own axis j. The diagonal is 1.
DenseMatrix grid_crosstalk(std::span<const GridRow> rows,
                           std::span<const std::vector<double>> scales);

std::filesystem::path cmd_train_base(const ExperimentConfig& cfg);
std::vector<std::filesystem::path> cmd_train_lora(const ExperimentConfig& cfg,
                                                  const std::string& subset);
std::vector<SweepRow> cmd_sweep(const ExperimentConfig& cfg,
                                const std::string& adapter,
                                std::span<const double> scales);
std::vector<GridRow> cmd_grid(const ExperimentConfig& cfg,
                              std::span<const std::string> adapters,
                              std::span<const std::vector<double>> scales);
RelativeResult cmd_relative(const ExperimentConfig& cfg,
                            const std::string& adapter,
                            std::span<const double> scales);
std::vector<AblateRow> cmd_ablate(const ExperimentConfig& cfg);
std::vector<ContradictRow> cmd_contradict(const ExperimentConfig& cfg);

}  // namespace restyle

#endif  // RESTYLE_EXPERIMENT_HPP_
