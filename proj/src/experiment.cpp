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

#include "restyle/experiment.hpp"

#include <omp.h>

#include <algorithm>
#include <cmath>
#include <exception>
#include <functional>

#include <fmt/format.h>

#include "restyle/error.hpp"
#include "restyle/io_util.hpp"

namespace restyle {

namespace {

constexpr int kManifestVersion = 1;

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

// Independent RNG streams derived from the master seed.
enum Stream : std::uint64_t {
  kBaseData = 1,
  kBaseTrain = 2,
  kReward = 3,
  kLoraData = 4,
  kLoraTrain = 5,
  kLoraInit = 6,
  kEvalNoise = 7,
};

std::uint64_t derive_seed(std::uint64_t seed, Stream stream,
                          std::uint64_t salt = 0) {
  return splitmix64(splitmix64(seed ^ (stream * 0x632be59bd9b4e019ULL)) ^ salt);
}

// Runs fn(i) for i in [0, n) on OpenMP threads; rethrows the first error.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn) {
  std::vector<std::exception_ptr> errors(n);
#pragma omp parallel for schedule(dynamic, 1)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(n); ++i) {
    try {
      fn(static_cast<std::size_t>(i));
    } catch (...) {
      errors[static_cast<std::size_t>(i)] = std::current_exception();
    }
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

void use_threads(const ExperimentConfig& cfg) {
  omp_set_num_threads(cfg.threads);
}

void echo_config(const ExperimentConfig& cfg, const std::string& command) {
  write_json_file(cfg.output_dir / fmt::format("{}.config.json", command),
                  to_json(cfg));
}

template <typename T>
T get_or(const nlohmann::json& doc, const char* key, T fallback) {
  return doc.contains(key) ? doc.at(key).get<T>() : fallback;
}

nlohmann::json train_json(const TrainConfig& cfg) {
  nlohmann::json j = to_json(cfg);
  j.erase("seed");  // derived from the experiment seed
  return j;
}

std::string scale_label(double s) { return fmt::format("{:g}", s); }

std::vector<double> column_of(const std::vector<RefResult>& refs,
                              const Attribute& attr) {
  std::vector<double> out;
  out.reserve(refs.size());
  for (const auto& r : refs) {
    switch (attr.kind) {
      case AttributeKind::kPitch:
        out.push_back(r.pitch);
        break;
      case AttributeKind::kEnergy:
        out.push_back(r.energy);
        break;
      case AttributeKind::kEmotion:
        out.push_back(r.emotions[attr.emotion]);
        break;
    }
  }
  return out;
}

double subset_midpoint(const StyleSpec& spec, const std::string& subset,
                       const Attribute& attr) {
  const SubsetSpec& s = spec.subset(subset);
  switch (attr.kind) {
    case AttributeKind::kPitch:
      return 0.5 * (s.pitch.lo + s.pitch.hi);
    case AttributeKind::kEnergy:
      return 0.5 * (s.energy.lo + s.energy.hi);
    case AttributeKind::kEmotion:
      return s.emotion == static_cast<int>(attr.emotion)
                 ? 0.5 * (s.emotion_strength.lo + s.emotion_strength.hi)
                 : 0.0;
  }
  return 0.0;
}

FlowModel load_base(const ExperimentConfig& cfg) {
  const auto path = cfg.base_path();
  if (!std::filesystem::exists(path)) {
    throw IoError(fmt::format(
        "base checkpoint {} does not exist; run train-base first",
        path.string()));
  }
  return load_model(path);
}

}  // namespace

std::filesystem::path ExperimentConfig::base_path() const {
  return base_checkpoint.empty() ? output_dir / "base.flow.json"
                                 : base_checkpoint;
}

std::filesystem::path ExperimentConfig::adapters_path() const {
  return adapter_dir.empty() ? output_dir / "adapters" : adapter_dir;
}

void ExperimentConfig::validate() const {
  try {
    style.validate();
    model.validate();
    base_train.validate();
    lora_train.train.validate();
    tco.validate();
    generation.weights.validate();
  } catch (const ValidationError& e) {
    throw ConfigError(e.what());
  } catch (const NumericError& e) {
    throw ConfigError(e.what());
  }
  const auto nonempty = [](const auto& v, const char* what) {
    if (v.empty()) throw ConfigError(fmt::format("{} must not be empty", what));
  };
  nonempty(scales, "scales");
  nonempty(scales_b, "scales_b");
  nonempty(relative_scales, "relative scales");
  nonempty(ablate_lambda_a, "ablate lambda_a grid");
  nonempty(contradict_scales, "contradict scales");
  if (grid_adapters.size() < 2 || grid_adapters.size() > 3) {
    throw ConfigError("grid needs two or three adapters");
  }
  if (grid_adapters.size() == 3) nonempty(scales_c, "scales_c");
  if (eval.n_refs < 3 || eval.samples_per_ref < 2 || eval.euler_steps == 0) {
    throw ConfigError(
        "eval needs n_refs >= 3, samples_per_ref >= 2 and euler_steps >= 1");
  }
  if (reward.n_refs == 0 || reward.samples_per_ref == 0 ||
      reward.euler_steps == 0) {
    throw ConfigError("reward batch sizes must be positive");
  }
  if (base_dataset_size == 0 || lora_dataset_size == 0) {
    throw ConfigError("dataset sizes must be positive");
  }
  if (threads < 1) throw ConfigError("threads must be >= 1");
}

nlohmann::json to_json(const ExperimentConfig& cfg) {
  nlohmann::json model = to_json(cfg.model);
  for (const char* derived : {"data_dim", "text_dim", "ref_dim"}) {
    model.erase(derived);
  }
  return {
      {"seed", cfg.seed},
      {"output_dir", cfg.output_dir.string()},
      {"base_checkpoint", cfg.base_path().string()},
      {"adapter_dir", cfg.adapters_path().string()},
      {"style", to_json(cfg.style)},
      {"model", std::move(model)},
      {"base_train",
       [&] {
         auto j = train_json(cfg.base_train);
         j["dataset_size"] = cfg.base_dataset_size;
         return j;
       }()},
      {"tco",
       {{"enabled", cfg.tco_enabled},
        {"lambda", cfg.tco.lambda},
        {"beta", cfg.tco.beta},
        {"mu", cfg.tco.mu},
        {"reward_every", cfg.tco.reward_every},
        {"reward_refs", cfg.reward.n_refs},
        {"reward_samples_per_ref", cfg.reward.samples_per_ref},
        {"reward_euler_steps", cfg.reward.euler_steps}}},
      {"lora_train",
       [&] {
         auto j = train_json(cfg.lora_train.train);
         j["dataset_size"] = cfg.lora_dataset_size;
         j["rank"] = cfg.lora_train.rank;
         j["alpha"] = cfg.lora_train.alpha;
         return j;
       }()},
      {"guidance",
       {{"mode", cfg.generation.mode == GuidanceMode::kCfg ? "cfg" : "dcfg"},
        {"lambda_t", cfg.generation.weights.lambda_t},
        {"lambda_a", cfg.generation.weights.lambda_a},
        {"lambda_cfg", cfg.generation.lambda_cfg},
        {"lora_all_branches", cfg.generation.lora_all_branches}}},
      {"orthogonalize", cfg.orthogonalize},
      {"eval",
       {{"subset", cfg.eval.subset},
        {"n_refs", cfg.eval.n_refs},
        {"samples_per_ref", cfg.eval.samples_per_ref},
        {"seed", cfg.eval.seed},
        {"euler_steps", cfg.eval.euler_steps}}},
      {"sweep", {{"adapter", cfg.sweep_adapter}, {"scales", cfg.scales}}},
      {"grid",
       {{"adapters", cfg.grid_adapters},
        {"scales_a", cfg.scales},
        {"scales_b", cfg.scales_b},
        {"scales_c", cfg.scales_c}}},
      {"relative",
       {{"adapter", cfg.relative_adapter}, {"scales", cfg.relative_scales}}},
      {"ablate",
       {{"adapter", cfg.ablate_adapter},
        {"scale", cfg.ablate_scale},
        {"lambda_cfg", cfg.ablate_lambda_cfg},
        {"lambda_a", cfg.ablate_lambda_a},
        {"no_tco_checkpoint", cfg.no_tco_checkpoint.string()}}},
      {"contradict",
       {{"reference_subset", cfg.contradict_reference_subset},
        {"adapter", cfg.contradict_adapter},
        {"scales", cfg.contradict_scales}}},
      {"threads", cfg.threads},
  };
}

ExperimentConfig experiment_config_from_json(const nlohmann::json& doc) {
  ExperimentConfig cfg;
  try {
    cfg.seed = get_or(doc, "seed", cfg.seed);
    cfg.output_dir = get_or<std::string>(doc, "output_dir", cfg.output_dir);
    cfg.base_checkpoint =
        get_or<std::string>(doc, "base_checkpoint", cfg.base_checkpoint);
    cfg.adapter_dir = get_or<std::string>(doc, "adapter_dir", cfg.adapter_dir);
    if (doc.contains("style")) cfg.style = style_spec_from_json(doc["style"]);
    if (doc.contains("model")) {
      const auto& m = doc["model"];
      cfg.model.hidden = get_or(m, "hidden", cfg.model.hidden);
      cfg.model.time_dim = get_or(m, "time_dim", cfg.model.time_dim);
      cfg.model.init_seed = get_or(m, "init_seed", cfg.model.init_seed);
    }
    if (doc.contains("base_train")) {
      const auto& b = doc["base_train"];
      cfg.base_train = train_config_from_json(b, cfg.base_train);
      cfg.base_dataset_size = get_or(b, "dataset_size", cfg.base_dataset_size);
    }
    if (doc.contains("tco")) {
      const auto& t = doc["tco"];
      cfg.tco_enabled = get_or(t, "enabled", cfg.tco_enabled);
      cfg.tco.lambda = get_or(t, "lambda", cfg.tco.lambda);
      cfg.tco.beta = get_or(t, "beta", cfg.tco.beta);
      cfg.tco.mu = get_or(t, "mu", cfg.tco.mu);
      cfg.tco.reward_every = get_or(t, "reward_every", cfg.tco.reward_every);
      cfg.reward.n_refs = get_or(t, "reward_refs", cfg.reward.n_refs);
      cfg.reward.samples_per_ref =
          get_or(t, "reward_samples_per_ref", cfg.reward.samples_per_ref);
      cfg.reward.euler_steps =
          get_or(t, "reward_euler_steps", cfg.reward.euler_steps);
    }
    if (doc.contains("lora_train")) {
      const auto& l = doc["lora_train"];
      cfg.lora_train.train = train_config_from_json(l, cfg.lora_train.train);
      cfg.lora_dataset_size = get_or(l, "dataset_size", cfg.lora_dataset_size);
      cfg.lora_train.rank = get_or(l, "rank", cfg.lora_train.rank);
      cfg.lora_train.alpha = get_or(l, "alpha", cfg.lora_train.alpha);
    }
    if (doc.contains("guidance")) {
      const auto& g = doc["guidance"];
      const std::string mode = get_or<std::string>(g, "mode", "dcfg");
      if (mode != "dcfg" && mode != "cfg") {
        throw ConfigError(fmt::format("guidance mode '{}' is not dcfg or cfg",
                                      mode));
      }
      cfg.generation.mode =
          mode == "cfg" ? GuidanceMode::kCfg : GuidanceMode::kDcfg;
      cfg.generation.weights.lambda_t =
          get_or(g, "lambda_t", cfg.generation.weights.lambda_t);
      cfg.generation.weights.lambda_a =
          get_or(g, "lambda_a", cfg.generation.weights.lambda_a);
      cfg.generation.lambda_cfg =
          get_or(g, "lambda_cfg", cfg.generation.lambda_cfg);
      cfg.generation.lora_all_branches =
          get_or(g, "lora_all_branches", cfg.generation.lora_all_branches);
    }
    cfg.orthogonalize = get_or(doc, "orthogonalize", cfg.orthogonalize);
    if (doc.contains("eval")) {
      const auto& e = doc["eval"];
      cfg.eval.subset = get_or(e, "subset", cfg.eval.subset);
      cfg.eval.n_refs = get_or(e, "n_refs", cfg.eval.n_refs);
      cfg.eval.samples_per_ref =
          get_or(e, "samples_per_ref", cfg.eval.samples_per_ref);
      cfg.eval.seed = get_or(e, "seed", cfg.eval.seed);
      cfg.eval.euler_steps = get_or(e, "euler_steps", cfg.eval.euler_steps);
    }
    if (doc.contains("sweep")) {
      cfg.sweep_adapter = get_or(doc["sweep"], "adapter", cfg.sweep_adapter);
      cfg.scales = get_or(doc["sweep"], "scales", cfg.scales);
    }
    if (doc.contains("grid")) {
      const auto& g = doc["grid"];
      cfg.grid_adapters = get_or(g, "adapters", cfg.grid_adapters);
      cfg.scales = get_or(g, "scales_a", cfg.scales);
      cfg.scales_b = get_or(g, "scales_b", cfg.scales_b);
      cfg.scales_c = get_or(g, "scales_c", cfg.scales_c);
    }
    if (doc.contains("relative")) {
      cfg.relative_adapter =
          get_or(doc["relative"], "adapter", cfg.relative_adapter);
      cfg.relative_scales =
          get_or(doc["relative"], "scales", cfg.relative_scales);
    }
    if (doc.contains("ablate")) {
      const auto& a = doc["ablate"];
      cfg.ablate_adapter = get_or(a, "adapter", cfg.ablate_adapter);
      cfg.ablate_scale = get_or(a, "scale", cfg.ablate_scale);
      cfg.ablate_lambda_cfg = get_or(a, "lambda_cfg", cfg.ablate_lambda_cfg);
      cfg.ablate_lambda_a = get_or(a, "lambda_a", cfg.ablate_lambda_a);
      cfg.no_tco_checkpoint = get_or<std::string>(a, "no_tco_checkpoint",
                                                  cfg.no_tco_checkpoint);
    }
    if (doc.contains("contradict")) {
      const auto& c = doc["contradict"];
      cfg.contradict_reference_subset = get_or(
          c, "reference_subset", cfg.contradict_reference_subset);
      cfg.contradict_adapter = get_or(c, "adapter", cfg.contradict_adapter);
      cfg.contradict_scales = get_or(c, "scales", cfg.contradict_scales);
    }
    cfg.threads = get_or(doc, "threads", cfg.threads);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(fmt::format("experiment config: {}", e.what()));
  } catch (const ValidationError& e) {
    throw ConfigError(e.what());
  }
  cfg.validate();
  return cfg;
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
  return experiment_config_from_json(read_json_file(path));
}

ModelConfig model_config_for(const StyleSpace& space, ModelConfig model) {
  model.data_dim = space.dim();
  model.text_dim = space.spec().n_classes;
  model.ref_dim = space.ref_dim();
  return model;
}

std::string Attribute::label(const StyleSpec& spec) const {
  switch (kind) {
    case AttributeKind::kPitch:
      return "pitch";
    case AttributeKind::kEnergy:
      return "energy";
    case AttributeKind::kEmotion:
      return spec.emotion_names.at(emotion);
  }
  return "";
}

Attribute attribute_for_subset(const StyleSpec& spec,
                               const std::string& subset) {
  const SubsetSpec& s = spec.subset(subset);
  if (s.emotion >= 0) {
    return {AttributeKind::kEmotion, static_cast<std::size_t>(s.emotion)};
  }
  if (subset.find("energy") != std::string::npos) {
    return {AttributeKind::kEnergy, 0};
  }
  if (subset.find("pitch") != std::string::npos) {
    return {AttributeKind::kPitch, 0};
  }
  const SubsetSpec& base = spec.subset("base");
  if (s.pitch.lo != base.pitch.lo || s.pitch.hi != base.pitch.hi) {
    return {AttributeKind::kPitch, 0};
  }
  if (s.energy.lo != base.energy.lo || s.energy.hi != base.energy.hi) {
    return {AttributeKind::kEnergy, 0};
  }
  throw ConfigError(
      fmt::format("subset '{}' does not move any attribute", subset));
}

double reference_attribute(const Attribute& attr, const StyledSample& ref) {
  switch (attr.kind) {
    case AttributeKind::kPitch:
      return ref.pitch;
    case AttributeKind::kEnergy:
      return ref.energy;
    case AttributeKind::kEmotion:
      return ref.emotion == static_cast<int>(attr.emotion)
                 ? ref.emotion_strength
                 : 0.0;
  }
  return 0.0;
}

double measure_attribute(const StyleSpace& space, const Attribute& attr,
                         const DenseMatrix& xs, std::size_t class_id,
                         std::span<const double> offset) {
  switch (attr.kind) {
    case AttributeKind::kPitch:
      return measure_pitch(space, xs, class_id, offset);
    case AttributeKind::kEnergy:
      return measure_energy(space, xs, class_id);
    case AttributeKind::kEmotion:
      return measure_emotion(space, xs, class_id, attr.emotion);
  }
  return 0.0;
}

double EvalResult::attribute(const Attribute& attr) const {
  switch (attr.kind) {
    case AttributeKind::kPitch:
      return pitch;
    case AttributeKind::kEnergy:
      return energy;
    case AttributeKind::kEmotion:
      return emotions.at(attr.emotion);
  }
  return 0.0;
}

double EvalResult::ref_attribute(const Attribute& attr, std::size_t ref) const {
  const RefResult& r = per_ref.at(ref);
  switch (attr.kind) {
    case AttributeKind::kPitch:
      return r.pitch;
    case AttributeKind::kEnergy:
      return r.energy;
    case AttributeKind::kEmotion:
      return r.emotions.at(attr.emotion);
  }
  return 0.0;
}

EvalResult evaluate(const FlowModel& model, const StyleSpace& space,
                    std::span<const StyledSample> refs,
                    std::size_t samples_per_ref,
                    const GenerationSettings& settings,
                    const FusedDelta* delta, std::size_t euler_steps,
                    std::uint64_t seed) {
  if (refs.empty() || samples_per_ref == 0) {
    throw ValidationError("evaluate: need references and samples");
  }
  const std::size_t m = samples_per_ref;
  const std::size_t n = refs.size() * m;
  const std::size_t n_classes = space.spec().n_classes;
  SampleRequest req;
  req.text = DenseMatrix(n, n_classes);
  req.ref = DenseMatrix(n, space.ref_dim());
  for (std::size_t i = 0; i < refs.size(); ++i) {
    const auto text = text_embedding(refs[i].class_id, n_classes);
    const auto ref = reference_embedding(space, refs[i]);
    for (std::size_t k = 0; k < m; ++k) {
      std::copy(text.begin(), text.end(), req.text.row(i * m + k).begin());
      std::copy(ref.begin(), ref.end(), req.ref.row(i * m + k).begin());
    }
  }
  req.mode = settings.mode;
  req.weights = settings.weights;
  req.lambda_cfg = settings.lambda_cfg;
  req.delta = delta;
  req.lora_all_branches = settings.lora_all_branches;
  req.euler_steps = euler_steps;
  req.seed = seed;

  EvalResult out;
  out.samples = sample(model, req);
  const std::size_t ne = space.spec().n_emotions();
  out.emotions.assign(ne, 0.0);
  for (std::size_t i = 0; i < refs.size(); ++i) {
    const auto first = out.samples.values().begin() +
                       static_cast<std::ptrdiff_t>(i * m * space.dim());
    const DenseMatrix xs(
        m, space.dim(),
        std::vector<double>(first,
                            first + static_cast<std::ptrdiff_t>(m * space.dim())));
    const StyledSample& ref = refs[i];
    RefResult r;
    r.pitch = measure_pitch(space, xs, ref.class_id, ref.speaker_offset);
    r.energy = m >= 2 ? measure_energy(space, xs, ref.class_id) : 0.0;
    for (std::size_t k = 0; k < ne; ++k) {
      r.emotions.push_back(measure_emotion(space, xs, ref.class_id, k));
    }
    r.fidelity = condition_fidelity(space, xs, ref.class_id);
    r.timbre = timbre_reward(xs, space.centroid(ref.class_id),
                             ref.speaker_offset, &space.timbre_basis());
    out.pitch += r.pitch;
    out.energy += r.energy;
    out.fidelity += r.fidelity;
    out.timbre += r.timbre;
    for (std::size_t k = 0; k < ne; ++k) out.emotions[k] += r.emotions[k];
    out.per_ref.push_back(std::move(r));
  }
  const double inv = 1.0 / static_cast<double>(refs.size());
  out.pitch *= inv;
  out.energy *= inv;
  out.fidelity *= inv;
  out.timbre *= inv;
  for (double& e : out.emotions) e *= inv;
  return out;
}

std::vector<StyledSample> eval_references(const StyleSpace& space,
                                          const EvalConfig& eval) {
  return generate(space, eval.subset, eval.n_refs, eval.seed);
}

RewardFn make_timbre_reward(const StyleSpace& space,
                            const GenerationSettings& settings,
                            const RewardConfig& reward, std::uint64_t seed) {
  return [space, settings, reward, seed](const FlowModel& model,
                                         std::size_t step) {
    const std::uint64_t s = splitmix64(seed ^ splitmix64(step));
    const auto refs = generate(space, "base", reward.n_refs, s);
    const EvalResult r =
        evaluate(model, space, refs, reward.samples_per_ref, settings, nullptr,
                 reward.euler_steps, splitmix64(s));
    return r.timbre;
  };
}

std::vector<std::filesystem::path> save_adapter_set(
    const AdapterSet& set, const std::string& name, const std::string& subset,
    const std::filesystem::path& dir) {
  std::vector<std::filesystem::path> written;
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& a : set.adapters()) {
    const std::string file = fmt::format("{}.{}.lora.json", name, a.target_layer);
    save_adapter(a, dir / file);
    written.push_back(dir / file);
    layers.push_back({{"layer", a.target_layer}, {"file", file}});
  }
  const auto manifest = dir / fmt::format("{}.manifest.json", name);
  write_json_file(manifest, {{"schema_version", kManifestVersion},
                             {"name", name},
                             {"subset", subset},
                             {"layers", std::move(layers)}});
  written.push_back(manifest);
  return written;
}

namespace {

nlohmann::json read_manifest(const std::filesystem::path& dir,
                             const std::string& name) {
  const auto path = dir / fmt::format("{}.manifest.json", name);
  if (!std::filesystem::exists(path)) {
    throw IoError(fmt::format("adapter manifest {} does not exist; run "
                              "train-lora for '{}' first",
                              path.string(), name));
  }
  nlohmann::json doc = read_json_file(path);
  if (doc.value("schema_version", -1) != kManifestVersion) {
    throw VersionError(
        fmt::format("{}: unsupported manifest version", path.string()));
  }
  return doc;
}

}  // namespace

AdapterSet load_adapter_set(const std::filesystem::path& dir,
                            std::span<const std::string> names) {
  AdapterSet set;
  for (const auto& name : names) {
    const nlohmann::json manifest = read_manifest(dir, name);
    try {
      for (const auto& entry : manifest.at("layers")) {
        LoraAdapter a = load_adapter(dir / entry.at("file").get<std::string>());
        if (a.name != name) {
          throw ValidationError(fmt::format(
              "adapter file for '{}' carries name '{}'", name, a.name));
        }
        set.add(std::move(a));
      }
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError(
          fmt::format("malformed manifest for '{}': {}", name, e.what()));
    }
  }
  return set;
}

std::string adapter_subset(const std::filesystem::path& dir,
                           const std::string& name) {
  return read_manifest(dir, name).value("subset", name);
}

FlowModel train_base_model(const ExperimentConfig& cfg, bool use_tco,
                           std::vector<TrainLogRow>* log) {
  const StyleSpace space(cfg.style);
  const auto data = generate(space, "base", cfg.base_dataset_size,
                             derive_seed(cfg.seed, kBaseData));
  const TrainingSet set = make_training_set(space, data);
  FlowModel model(model_config_for(space, cfg.model));
  TrainConfig tc = cfg.base_train;
  tc.seed = derive_seed(cfg.seed, kBaseTrain);
  std::optional<TcoHook> hook;
  if (use_tco) {
    GenerationSettings reward_settings = cfg.generation;
    reward_settings.lora_all_branches = false;
    hook = TcoHook{cfg.tco,
                   make_timbre_reward(space, reward_settings, cfg.reward,
                                      derive_seed(cfg.seed, kReward))};
  }
  auto rows = train(model, set, tc, hook);
  if (log != nullptr) *log = std::move(rows);
  return model;
}

AdapterSet train_style_adapter(const ExperimentConfig& cfg,
                               const FlowModel& base,
                               const std::string& subset,
                               std::vector<TrainLogRow>* log) {
  const StyleSpace space(cfg.style);
  const std::uint64_t salt = fnv1a(subset);
  const auto data = generate(space, subset, cfg.lora_dataset_size,
                             derive_seed(cfg.seed, kLoraData, salt));
  const TrainingSet set = make_training_set(space, data);
  LoraTrainConfig lc = cfg.lora_train;
  lc.init_seed = derive_seed(cfg.seed, kLoraInit, salt);
  lc.train.seed = derive_seed(cfg.seed, kLoraTrain, salt);
  return train_lora(base, set, subset, lc, log);
}

std::filesystem::path cmd_train_base(const ExperimentConfig& cfg) {
  cfg.validate();
  use_threads(cfg);
  std::vector<TrainLogRow> log;
  const FlowModel model = train_base_model(cfg, cfg.tco_enabled, &log);
  const auto path = cfg.base_path();
  save_model(model, path);
  write_train_log(log, cfg.output_dir / "train_base_log.csv");
  echo_config(cfg, "train-base");
  return path;
}

std::vector<std::filesystem::path> cmd_train_lora(const ExperimentConfig& cfg,
                                                  const std::string& subset) {
  cfg.validate();
  use_threads(cfg);
  cfg.style.subset(subset);
  const FlowModel base = load_base(cfg);
  std::vector<TrainLogRow> log;
  const AdapterSet set = train_style_adapter(cfg, base, subset, &log);
  auto written = save_adapter_set(set, subset, subset, cfg.adapters_path());
  write_train_log(log,
                  cfg.output_dir / fmt::format("train_lora_{}_log.csv", subset));
  echo_config(cfg, fmt::format("train-lora-{}", subset));
  return written;
}

std::vector<SweepRow> cmd_sweep(const ExperimentConfig& cfg,
                                const std::string& adapter,
                                std::span<const double> scales) {
  cfg.validate();
  use_threads(cfg);
  if (scales.empty()) throw ConfigError("sweep: no scales");
  const StyleSpace space(cfg.style);
  const FlowModel base = load_base(cfg);
  const std::vector<std::string> names{adapter};
  const AdapterSet set = load_adapter_set(cfg.adapters_path(), names);
  const Attribute attr = attribute_for_subset(
      cfg.style, adapter_subset(cfg.adapters_path(), adapter));
  const PreparedFusion prepared(set, cfg.orthogonalize, kDefaultRankTol,
                                base.layer_shapes());
  const auto refs = eval_references(space, cfg.eval);
  const std::uint64_t noise = derive_seed(cfg.eval.seed, kEvalNoise);

  std::vector<SweepRow> rows(scales.size());
  parallel_for(scales.size(), [&](std::size_t i) {
    const std::vector<double> alphas(set.size(), scales[i]);
    const FusedDelta fused = prepared.combine(alphas);
    const EvalResult r =
        evaluate(base, space, refs, cfg.eval.samples_per_ref, cfg.generation,
                 &fused, cfg.eval.euler_steps, noise);
    rows[i] = {scales[i], r.attribute(attr), r.pitch, r.energy, r.fidelity,
               r.timbre};
  });

  CsvTable table({"scale", "attribute_name", "attribute", "pitch", "energy",
                  "condition_fidelity", "timbre_similarity"});
  for (const auto& r : rows) {
    table.add_row({CsvTable::cell(r.scale), attr.label(cfg.style),
                   CsvTable::cell(r.attribute), CsvTable::cell(r.pitch),
                   CsvTable::cell(r.energy), CsvTable::cell(r.fidelity),
                   CsvTable::cell(r.timbre)});
  }
  table.write(cfg.output_dir / fmt::format("sweep_{}.csv", adapter));
  echo_config(cfg, "sweep");
  return rows;
}

DenseMatrix grid_crosstalk(std::span<const GridRow> rows,
                           std::span<const std::vector<double>> scales) {
  const std::size_t k = scales.size();
  std::size_t total = 1;
  for (const auto& s : scales) total *= s.size();
  if (rows.size() != total || k == 0) {
    throw DimensionError("grid_crosstalk: rows do not match the grid shape");
  }
  std::vector<std::size_t> stride(k, 1);
  for (std::size_t a = k - 1; a > 0; --a) {
    stride[a - 1] = stride[a] * scales[a].size();
  }
  // tv(axis, attr): mean total variation of attr walking along axis.
  const auto tv = [&](std::size_t axis, std::size_t attr) {
    const std::size_t len = scales[axis].size();
    if (len < 2) return 0.0;
    double sum = 0.0;
    std::size_t lines = 0;
    for (std::size_t start = 0; start < total; ++start) {
      if ((start / stride[axis]) % len != 0) continue;
      double line = 0.0;
      for (std::size_t s = 0; s + 1 < len; ++s) {
        const auto& a = rows[start + s * stride[axis]];
        const auto& b = rows[start + (s + 1) * stride[axis]];
        line += std::abs(b.attributes.at(attr) - a.attributes.at(attr));
      }
      sum += line;
      ++lines;
    }
    return sum / static_cast<double>(lines);
  };
  DenseMatrix out(k, k);
  for (std::size_t j = 0; j < k; ++j) {
    const double own = tv(j, j);
    if (!(own > 0.0)) {
      throw NumericError(fmt::format(
          "grid_crosstalk: attribute {} does not vary along its own axis", j));
    }
    for (std::size_t i = 0; i < k; ++i) out(i, j) = tv(i, j) / own;
  }
  return out;
}

std::vector<GridRow> cmd_grid(const ExperimentConfig& cfg,
                              std::span<const std::string> adapters,
                              std::span<const std::vector<double>> scales) {
  cfg.validate();
  use_threads(cfg);
  if (adapters.size() < 2 || adapters.size() > 3 ||
      scales.size() != adapters.size()) {
    throw ConfigError("grid: need 2 or 3 adapters with one scale list each");
  }
  for (const auto& s : scales) {
    if (s.empty()) throw ConfigError("grid: empty scale list");
  }
  const StyleSpace space(cfg.style);
  const FlowModel base = load_base(cfg);
  const AdapterSet set = load_adapter_set(cfg.adapters_path(), adapters);
  std::vector<Attribute> attrs;
  for (const auto& name : adapters) {
    attrs.push_back(attribute_for_subset(
        cfg.style, adapter_subset(cfg.adapters_path(), name)));
  }
  const PreparedFusion prepared(set, cfg.orthogonalize, kDefaultRankTol,
                                base.layer_shapes());
  const auto refs = eval_references(space, cfg.eval);
  const std::uint64_t noise = derive_seed(cfg.eval.seed, kEvalNoise);

  std::size_t total = 1;
  for (const auto& s : scales) total *= s.size();
  std::vector<GridRow> rows(total);
  parallel_for(total, [&](std::size_t cell) {
    std::vector<double> point(adapters.size());
    std::size_t rem = cell;
    for (std::size_t a = adapters.size(); a-- > 0;) {
      point[a] = scales[a][rem % scales[a].size()];
      rem /= scales[a].size();
    }
    std::map<std::string, double> by_name;
    for (std::size_t a = 0; a < adapters.size(); ++a) {
      by_name[adapters[a]] = point[a];
    }
    const FusedDelta fused = prepared.combine_by_name(by_name);
    const EvalResult r =
        evaluate(base, space, refs, cfg.eval.samples_per_ref, cfg.generation,
                 &fused, cfg.eval.euler_steps, noise);
    GridRow row;
    row.scales = point;
    row.pitch = r.pitch;
    row.energy = r.energy;
    for (const auto& attr : attrs) row.attributes.push_back(r.attribute(attr));
    row.fidelity = r.fidelity;
    row.timbre = r.timbre;
    rows[cell] = std::move(row);
  });

  std::vector<std::string> cols;
  for (const auto& name : adapters) cols.push_back("scale_" + name);
  for (const auto& name : adapters) cols.push_back("target_" + name);
  for (const char* c : {"pitch", "energy", "condition_fidelity",
                        "timbre_similarity"}) {
    cols.emplace_back(c);
  }
  CsvTable table(cols);
  for (const auto& r : rows) {
    std::vector<std::string> cells;
    for (double s : r.scales) cells.push_back(CsvTable::cell(s));
    for (double a : r.attributes) cells.push_back(CsvTable::cell(a));
    cells.push_back(CsvTable::cell(r.pitch));
    cells.push_back(CsvTable::cell(r.energy));
    cells.push_back(CsvTable::cell(r.fidelity));
    cells.push_back(CsvTable::cell(r.timbre));
    table.add_row(std::move(cells));
  }
  const std::string tag = cfg.orthogonalize ? "orth" : "raw";
  table.write(cfg.output_dir / fmt::format("grid_{}.csv", tag));

  // Pairwise adapter cosines per layer, before and after orthogonalization.
  const PreparedFusion raw(set, false, kDefaultRankTol);
  const PreparedFusion orth(set, true, kDefaultRankTol);
  CsvTable cos({"layer", "adapter_i", "adapter_j", "cos_raw", "cos_orth"});
  for (const auto& layer : set.layers()) {
    const auto idx = set.indices_for_layer(layer);
    for (std::size_t p = 0; p < idx.size(); ++p) {
      for (std::size_t q = p + 1; q < idx.size(); ++q) {
        const auto cosine = [&](const PreparedFusion& f) {
          const DenseMatrix& a = f.basis(idx[p]);
          const DenseMatrix& b = f.basis(idx[q]);
          const double na = frobenius_norm(a);
          const double nb = frobenius_norm(b);
          if (na == 0.0 || nb == 0.0) return std::nan("");
          return dot(a.values(), b.values()) / (na * nb);
        };
        cos.add_row({layer, set.adapters()[idx[p]].name,
                     set.adapters()[idx[q]].name, CsvTable::cell(cosine(raw)),
                     CsvTable::cell(cosine(orth))});
      }
    }
  }
  cos.write(cfg.output_dir / "interference.csv");

  const DenseMatrix xt = grid_crosstalk(rows, scales);
  nlohmann::json summary{{"orthogonalize", cfg.orthogonalize},
                         {"adapters", adapters},
                         {"crosstalk", nlohmann::json::array()}};
  for (std::size_t i = 0; i < xt.rows(); ++i) {
    summary["crosstalk"].push_back(
        std::vector<double>(xt.row(i).begin(), xt.row(i).end()));
  }
  write_json_file(cfg.output_dir / fmt::format("grid_{}_summary.json", tag),
                  summary);
  echo_config(cfg, fmt::format("grid-{}", tag));
  return rows;
}

RelativeResult cmd_relative(const ExperimentConfig& cfg,
                            const std::string& adapter,
                            std::span<const double> scales) {
  cfg.validate();
  use_threads(cfg);
  if (scales.empty()) throw ConfigError("relative: no scales");
  const StyleSpace space(cfg.style);
  const FlowModel base = load_base(cfg);
  const std::vector<std::string> names{adapter};
  const AdapterSet set = load_adapter_set(cfg.adapters_path(), names);
  const Attribute attr = attribute_for_subset(
      cfg.style, adapter_subset(cfg.adapters_path(), adapter));
  const PreparedFusion prepared(set, cfg.orthogonalize, kDefaultRankTol,
                                base.layer_shapes());
  const auto refs = eval_references(space, cfg.eval);
  const std::uint64_t noise = derive_seed(cfg.eval.seed, kEvalNoise);

  RelativeResult out;
  for (const auto& r : refs) out.ref_attribute.push_back(reference_attribute(attr, r));
  out.gen_attribute.resize(scales.size());
  out.fits.resize(scales.size());
  parallel_for(scales.size(), [&](std::size_t i) {
    const std::vector<double> alphas(set.size(), scales[i]);
    const FusedDelta fused = prepared.combine(alphas);
    const EvalResult r =
        evaluate(base, space, refs, cfg.eval.samples_per_ref, cfg.generation,
                 &fused, cfg.eval.euler_steps, noise);
    out.gen_attribute[i] = column_of(r.per_ref, attr);
    out.fits[i] = {scales[i],
                   relative_regression(out.ref_attribute, out.gen_attribute[i])};
  });

  CsvTable traj({"ref_id", "class_id", "speaker_id", "ref_attribute", "scale",
                 "gen_attribute"});
  for (std::size_t j = 0; j < refs.size(); ++j) {
    for (std::size_t i = 0; i < scales.size(); ++i) {
      traj.add_row({CsvTable::cell(j), CsvTable::cell(refs[j].class_id),
                    CsvTable::cell(refs[j].speaker_id),
                    CsvTable::cell(out.ref_attribute[j]),
                    CsvTable::cell(scales[i]),
                    CsvTable::cell(out.gen_attribute[i][j])});
    }
  }
  traj.write(cfg.output_dir / fmt::format("relative_{}_trajectories.csv", adapter));
  CsvTable fits({"scale", "slope", "intercept", "r2"});
  for (const auto& f : out.fits) {
    fits.add_row({CsvTable::cell(f.scale), CsvTable::cell(f.fit.slope),
                  CsvTable::cell(f.fit.intercept), CsvTable::cell(f.fit.r2)});
  }
  fits.write(cfg.output_dir / fmt::format("relative_{}_fit.csv", adapter));
  echo_config(cfg, "relative");
  return out;
}

std::vector<AblateRow> cmd_ablate(const ExperimentConfig& cfg) {
  cfg.validate();
  use_threads(cfg);
  const StyleSpace space(cfg.style);
  const FlowModel base = load_base(cfg);
  FlowModel no_tco;
  if (!cfg.no_tco_checkpoint.empty()) {
    no_tco = load_model(cfg.no_tco_checkpoint);
  } else {
    no_tco = train_base_model(cfg, false);
    save_model(no_tco, cfg.output_dir / "base_no_tco.flow.json");
  }
  const std::vector<std::string> names{cfg.ablate_adapter};
  const AdapterSet set = load_adapter_set(cfg.adapters_path(), names);
  const Attribute attr = attribute_for_subset(
      cfg.style, adapter_subset(cfg.adapters_path(), cfg.ablate_adapter));
  const PreparedFusion prepared(set, cfg.orthogonalize, kDefaultRankTol,
                                base.layer_shapes());
  const FusedDelta zero = prepared.combine(std::vector<double>(set.size(), 0.0));
  const FusedDelta scaled =
      prepared.combine(std::vector<double>(set.size(), cfg.ablate_scale));
  const auto refs = eval_references(space, cfg.eval);
  const std::uint64_t noise = derive_seed(cfg.eval.seed, kEvalNoise);
  std::vector<double> ref_attr;
  for (const auto& r : refs) ref_attr.push_back(reference_attribute(attr, r));

  struct Setting {
    std::string name;
    const FlowModel* model;
    GenerationSettings gen;
  };
  std::vector<Setting> settings;
  settings.push_back({"default", &base, cfg.generation});
  for (double l : cfg.ablate_lambda_cfg) {
    GenerationSettings c = cfg.generation;
    c.mode = GuidanceMode::kCfg;
    c.lambda_cfg = l;
    c.weights = cfg_equivalent_weights(l);
    settings.push_back({fmt::format("cfg_{}", scale_label(l)), &base, c});
    GenerationSettings d = cfg.generation;
    d.mode = GuidanceMode::kDcfg;
    d.weights = cfg_equivalent_weights(l);
    settings.push_back({fmt::format("dcfg_equiv_cfg_{}", scale_label(l)), &base, d});
  }
  settings.push_back({"no_tco", &no_tco, cfg.generation});
  for (double la : cfg.ablate_lambda_a) {
    GenerationSettings g = cfg.generation;
    g.mode = GuidanceMode::kDcfg;
    g.weights.lambda_a = la;
    settings.push_back({fmt::format("lambda_a_{}", scale_label(la)), &base, g});
  }

  std::vector<AblateRow> rows(settings.size());
  std::vector<DenseMatrix> samples(settings.size());
  parallel_for(settings.size(), [&](std::size_t i) {
    const Setting& s = settings[i];
    const EvalResult r0 =
        evaluate(*s.model, space, refs, cfg.eval.samples_per_ref, s.gen, &zero,
                 cfg.eval.euler_steps, noise);
    const EvalResult r1 =
        evaluate(*s.model, space, refs, cfg.eval.samples_per_ref, s.gen,
                 &scaled, cfg.eval.euler_steps, noise);
    AblateRow row;
    row.setting = s.name;
    row.lambda_t = s.gen.weights.lambda_t;
    row.lambda_a = s.gen.weights.lambda_a;
    row.attr_shift = r1.attribute(attr) - r0.attribute(attr);
    row.ref_correlation =
        pearson_correlation(ref_attr, column_of(r0.per_ref, attr));
    row.fidelity = r1.fidelity;
    row.timbre = r1.timbre;
    rows[i] = std::move(row);
    samples[i] = r1.samples;
  });

  CsvTable table({"setting", "lambda_t", "lambda_a", "attr_shift",
                  "ref_correlation", "condition_fidelity", "timbre_similarity"});
  for (const auto& r : rows) {
    table.add_row({r.setting, CsvTable::cell(r.lambda_t),
                   CsvTable::cell(r.lambda_a), CsvTable::cell(r.attr_shift),
                   CsvTable::cell(r.ref_correlation), CsvTable::cell(r.fidelity),
                   CsvTable::cell(r.timbre)});
  }
  table.write(cfg.output_dir / "ablate.csv");

  nlohmann::json summary{{"attribute", attr.label(cfg.style)},
                         {"cfg_equivalence_max_abs_diff", nlohmann::json::object()}};
  for (std::size_t i = 0; i < settings.size(); ++i) {
    if (settings[i].gen.mode != GuidanceMode::kCfg) continue;
    const DenseMatrix diff = subtract(samples[i], samples[i + 1]);
    summary["cfg_equivalence_max_abs_diff"][settings[i].name] =
        max_abs(diff.values());
  }
  write_json_file(cfg.output_dir / "ablate_summary.json", summary);
  echo_config(cfg, "ablate");
  return rows;
}

std::vector<ContradictRow> cmd_contradict(const ExperimentConfig& cfg) {
  cfg.validate();
  use_threads(cfg);
  const StyleSpace space(cfg.style);
  const FlowModel base = load_base(cfg);
  const std::vector<std::string> names{cfg.contradict_adapter};
  const AdapterSet set = load_adapter_set(cfg.adapters_path(), names);
  const std::string subset =
      adapter_subset(cfg.adapters_path(), cfg.contradict_adapter);
  const Attribute attr = attribute_for_subset(cfg.style, subset);
  const double threshold = subset_midpoint(cfg.style, "base", attr);
  const bool target_high = subset_midpoint(cfg.style, subset, attr) > threshold;
  const PreparedFusion prepared(set, cfg.orthogonalize, kDefaultRankTol,
                                base.layer_shapes());
  const auto refs = generate(space, cfg.contradict_reference_subset,
                             cfg.eval.n_refs, cfg.eval.seed);
  const std::uint64_t noise = derive_seed(cfg.eval.seed, kEvalNoise);

  const auto& scales = cfg.contradict_scales;
  std::vector<ContradictRow> rows(scales.size());
  parallel_for(scales.size(), [&](std::size_t i) {
    const FusedDelta fused =
        prepared.combine(std::vector<double>(set.size(), scales[i]));
    const EvalResult r =
        evaluate(base, space, refs, cfg.eval.samples_per_ref, cfg.generation,
                 &fused, cfg.eval.euler_steps, noise);
    std::size_t hits = 0;
    for (double v : column_of(r.per_ref, attr)) {
      if (target_high ? v > threshold : v < threshold) ++hits;
    }
    rows[i] = {scales[i],
               static_cast<double>(hits) / static_cast<double>(refs.size()),
               r.attribute(attr)};
  });

  CsvTable table({"scale", "success_rate", "attribute"});
  for (const auto& r : rows) {
    table.add_row({CsvTable::cell(r.scale), CsvTable::cell(r.success_rate),
                   CsvTable::cell(r.attribute)});
  }
  table.write(cfg.output_dir / "contradict.csv");
  echo_config(cfg, "contradict");
  return rows;
}

}  // namespace restyle
