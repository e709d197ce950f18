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

// restyle: command-line entry point for the experiment commands.
//
// Exit codes: 0 success, 2 configuration or validation error, 3 numeric
// failure, 4 I/O failure.

#include <cstdio>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "restyle/error.hpp"
#include "restyle/experiment.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitNumeric = 3;
constexpr int kExitIo = 4;

struct Overrides {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<double> lambda_t;
  std::optional<double> lambda_a;
  std::optional<double> lambda_cfg;
  std::vector<double> scales;
  std::optional<std::string> output_dir;
  bool no_orthogonalize = false;
  bool no_tco = false;
  bool lora_all_branches = false;
  std::optional<int> threads;
};

restyle::ExperimentConfig resolve(const Overrides& o) {
  restyle::ExperimentConfig cfg =
      o.config_path.empty() ? restyle::ExperimentConfig{}
                            : restyle::load_experiment_config(o.config_path);
  if (o.output_dir) cfg.output_dir = *o.output_dir;
  if (o.seed) cfg.seed = *o.seed;
  if (o.lambda_t) cfg.generation.weights.lambda_t = *o.lambda_t;
  if (o.lambda_a) cfg.generation.weights.lambda_a = *o.lambda_a;
  if (o.lambda_cfg) {
    cfg.generation.mode = restyle::GuidanceMode::kCfg;
    cfg.generation.lambda_cfg = *o.lambda_cfg;
    cfg.generation.weights = restyle::cfg_equivalent_weights(*o.lambda_cfg);
  }
  if (o.no_orthogonalize) cfg.orthogonalize = false;
  if (o.no_tco) cfg.tco_enabled = false;
  if (o.lora_all_branches) cfg.generation.lora_all_branches = true;
  if (o.threads) cfg.threads = *o.threads;
  cfg.validate();
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Guided-generation control experiments on a toy flow model"};
  app.require_subcommand(1);
  app.fallthrough();
  Overrides o;
  // Existence is checked on load so a missing file maps to the I/O exit code.
  app.add_option("--config", o.config_path, "Experiment config (JSON)");
  app.add_option("--output-dir", o.output_dir, "Directory for all outputs");
  app.add_option("--seed", o.seed, "Master seed");
  app.add_option("--lambda-t", o.lambda_t, "Text guidance strength");
  app.add_option("--lambda-a", o.lambda_a, "Reference guidance strength");
  app.add_option("--lambda-cfg", o.lambda_cfg,
                 "Use standard CFG with this strength");
  app.add_option("--scales", o.scales, "Adapter scales, e.g. -2,-1,0,1,2")
      ->delimiter(',');
  app.add_flag("--no-orthogonalize", o.no_orthogonalize,
               "Fuse raw adapter deltas");
  app.add_flag("--no-tco", o.no_tco, "Train the base without reward weighting");
  app.add_flag("--lora-all-branches", o.lora_all_branches,
               "Apply the adapter delta to every guidance branch");
  app.add_option("--threads", o.threads, "OpenMP threads")
      ->check(CLI::PositiveNumber);

  auto* train_base = app.add_subcommand("train-base", "Train the base model");
  std::string subset;
  auto* train_lora =
      app.add_subcommand("train-lora", "Train a style adapter on a subset");
  train_lora->add_option("subset", subset, "Style subset name")->required();

  std::string adapter;
  auto* sweep = app.add_subcommand("sweep", "Single-adapter scale sweep");
  sweep->add_option("--adapter", adapter, "Adapter name");

  std::vector<std::string> grid_adapters;
  std::vector<double> scales_b;
  std::vector<double> scales_c;
  auto* grid = app.add_subcommand("grid", "Multi-adapter scale grid");
  grid->add_option("--adapters", grid_adapters, "Two or three adapter names")
      ->delimiter(',');
  grid->add_option("--scales-b", scales_b, "Scales of the second adapter")
      ->delimiter(',');
  grid->add_option("--scales-c", scales_c, "Scales of the third adapter")
      ->delimiter(',');

  auto* relative = app.add_subcommand("relative", "Relative-control regression");
  relative->add_option("--adapter", adapter, "Adapter name");
  auto* ablate = app.add_subcommand("ablate", "Guidance and TCO ablations");
  auto* contradict =
      app.add_subcommand("contradict", "Mismatched reference and target style");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    restyle::ExperimentConfig cfg = resolve(o);
    if (train_base->parsed()) {
      const auto path = restyle::cmd_train_base(cfg);
      fmt::print("wrote {}\n", path.string());
    } else if (train_lora->parsed()) {
      for (const auto& p : restyle::cmd_train_lora(cfg, subset)) {
        fmt::print("wrote {}\n", p.string());
      }
    } else if (sweep->parsed()) {
      if (!adapter.empty()) cfg.sweep_adapter = adapter;
      if (!o.scales.empty()) cfg.scales = o.scales;
      const auto rows = restyle::cmd_sweep(cfg, cfg.sweep_adapter, cfg.scales);
      fmt::print("scale,attribute,condition_fidelity,timbre_similarity\n");
      for (const auto& r : rows) {
        fmt::print("{:g},{:.6f},{:.4f},{:.4f}\n", r.scale, r.attribute,
                   r.fidelity, r.timbre);
      }
    } else if (grid->parsed()) {
      if (!grid_adapters.empty()) cfg.grid_adapters = grid_adapters;
      if (!o.scales.empty()) cfg.scales = o.scales;
      if (!scales_b.empty()) cfg.scales_b = scales_b;
      if (!scales_c.empty()) cfg.scales_c = scales_c;
      cfg.validate();
      std::vector<std::vector<double>> scales{cfg.scales, cfg.scales_b};
      if (cfg.grid_adapters.size() == 3) scales.push_back(cfg.scales_c);
      const auto rows = restyle::cmd_grid(cfg, cfg.grid_adapters, scales);
      const auto xt = restyle::grid_crosstalk(rows, scales);
      for (std::size_t i = 0; i < xt.rows(); ++i) {
        for (std::size_t j = 0; j < xt.cols(); ++j) {
          if (i == j) continue;
          fmt::print("crosstalk {} -> {}: {:.4f}\n", cfg.grid_adapters[i],
                     cfg.grid_adapters[j], xt(i, j));
        }
      }
    } else if (relative->parsed()) {
      if (!adapter.empty()) cfg.relative_adapter = adapter;
      if (!o.scales.empty()) cfg.relative_scales = o.scales;
      const auto res = restyle::cmd_relative(cfg, cfg.relative_adapter,
                                             cfg.relative_scales);
      fmt::print("scale,slope,intercept,r2\n");
      for (const auto& f : res.fits) {
        fmt::print("{:g},{:.6f},{:.6f},{:.6f}\n", f.scale, f.fit.slope,
                   f.fit.intercept, f.fit.r2);
      }
    } else if (ablate->parsed()) {
      const auto rows = restyle::cmd_ablate(cfg);
      fmt::print("setting,lambda_t,lambda_a,attr_shift,ref_correlation,"
                 "condition_fidelity,timbre_similarity\n");
      for (const auto& r : rows) {
        fmt::print("{},{:g},{:g},{:.6f},{:.4f},{:.4f},{:.4f}\n", r.setting,
                   r.lambda_t, r.lambda_a, r.attr_shift, r.ref_correlation,
                   r.fidelity, r.timbre);
      }
    } else if (contradict->parsed()) {
      if (!o.scales.empty()) cfg.contradict_scales = o.scales;
      const auto rows = restyle::cmd_contradict(cfg);
      fmt::print("scale,success_rate,attribute\n");
      for (const auto& r : rows) {
        fmt::print("{:g},{:.4f},{:.6f}\n", r.scale, r.success_rate,
                   r.attribute);
      }
    }
  } catch (const restyle::NumericError& e) {
    fmt::print(stderr, "numeric error: {}\n", e.what());
    return kExitNumeric;
  } catch (const restyle::IoError& e) {
    fmt::print(stderr, "i/o error: {}\n", e.what());
    return kExitIo;
  } catch (const restyle::Error& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return kExitConfig;
  } catch (const std::exception& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return kExitConfig;
  }
  return kExitOk;
}
