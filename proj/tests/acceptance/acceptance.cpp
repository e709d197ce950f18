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

// End-to-end acceptance run. Prints one PASS/FAIL line per criterion A1..A10
// plus INFO lines with the measured values. Exits nonzero on an exception,
// or with --strict when any criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <map>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include <fmt/format.h>
#include <fmt/ranges.h>

#include "restyle/error.hpp"
#include "restyle/experiment.hpp"
#include "restyle/flow_model.hpp"
#include "restyle/fusion.hpp"
#include "restyle/guidance.hpp"
#include "restyle/linalg.hpp"
#include "restyle/tco.hpp"
#include "restyle/trainer.hpp"

namespace fs = std::filesystem;
using namespace restyle;

namespace {

struct Report {
  int failures = 0;

  void criterion(const std::string& id, bool pass, const std::string& detail) {
    fmt::print("{} {}: {}\n", id, pass ? "PASS" : "FAIL", detail);
    std::fflush(stdout);
    if (!pass) ++failures;
  }
  static void info(const std::string& id, const std::string& detail) {
    fmt::print("INFO {}: {}\n", id, detail);
    std::fflush(stdout);
  }
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
      .count();
}

DenseVector normal_vector(std::size_t n, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, 1.0);
  DenseVector v(n);
  for (double& x : v) x = dist(rng);
  return v;
}

// ---------------------------------------------------------------- A1..A5

void check_a1(Report& rep) {
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 rng(101);
  double worst = 0.0;
  for (double l : {-0.5, 0.0, 0.5, 2.0}) {
    const GuidanceWeights w = cfg_equivalent_weights(l);
    for (int trial = 0; trial < 1000; ++trial) {
      const DenseVector fu = normal_vector(16, rng);
      const DenseVector ft = normal_vector(16, rng);
      const DenseVector ff = normal_vector(16, rng);
      const DenseVector a = dcfg_combine(fu, ft, ff, w);
      const DenseVector b = cfg_combine(ff, fu, l);
      for (std::size_t i = 0; i < a.size(); ++i) {
        worst = std::max(worst, std::abs(a[i] - b[i]));
      }
    }
  }
  const double secs = seconds_since(t0);
  rep.criterion("A1", worst < 1e-12 && secs < 1.0,
                fmt::format("max |DCFG - CFG| = {:.3g} over 4000 triples in "
                            "{:.3f} s",
                            worst, secs));
}

std::vector<DenseMatrix> random_deltas(std::size_t n, std::size_t d,
                                       std::mt19937_64& rng) {
  std::vector<DenseMatrix> out;
  for (std::size_t i = 0; i < n; ++i) {
    out.emplace_back(1, d, normal_vector(d, rng));
  }
  return out;
}

void check_a2(Report& rep) {
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 rng(202);
  std::uniform_int_distribution<std::size_t> pick_n(2, 8);
  double worst_inner = 0.0;
  double worst_perm = 0.0;
  double worst_idem = 0.0;
  double worst_fixed = 0.0;
  for (int set = 0; set < 50; ++set) {
    const std::size_t n = pick_n(rng);
    const std::size_t d = set % 2 == 0 ? 1024 : 4096;
    const auto in = random_deltas(n, d, rng);
    const OrthogonalizedSet out = orthogonalize_set(in);
    for (std::size_t i = 0; i < n; ++i) {
      const double ni = norm(out.deltas[i].values());
      for (std::size_t j = 0; j < n; ++j) {
        if (i == j) continue;
        const double c = std::abs(dot(out.deltas[i].values(), in[j].values())) /
                         (ni * norm(in[j].values()));
        worst_inner = std::max(worst_inner, c);
      }
    }
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<DenseMatrix> shuffled;
    for (std::size_t p : perm) shuffled.push_back(in[p]);
    const OrthogonalizedSet sh = orthogonalize_set(shuffled);
    for (std::size_t k = 0; k < n; ++k) {
      worst_perm = std::max(
          worst_perm,
          max_abs(subtract(sh.deltas[k], out.deltas[perm[k]]).values()));
    }
    // Idempotence on an already mutually orthogonal set.
    DenseMatrix cols(d, n);
    for (std::size_t j = 0; j < n; ++j) {
      for (std::size_t r = 0; r < d; ++r) cols(r, j) = in[j](0, r);
    }
    const ThinSvd svd = thin_svd(cols);
    std::vector<DenseMatrix> ortho;
    for (std::size_t j = 0; j < n; ++j) {
      DenseMatrix m(1, d);
      for (std::size_t r = 0; r < d; ++r) m(0, r) = svd.u(r, j) * (1.0 + j);
      ortho.push_back(std::move(m));
    }
    const OrthogonalizedSet again = orthogonalize_set(ortho);
    for (std::size_t j = 0; j < n; ++j) {
      worst_idem = std::max(
          worst_idem, max_abs(subtract(again.deltas[j], ortho[j]).values()));
    }
    const OrthogonalizedSet twice = orthogonalize_set(out.deltas);
    for (std::size_t j = 0; j < n; ++j) {
      worst_fixed = std::max(
          worst_fixed,
          max_abs(subtract(twice.deltas[j], out.deltas[j]).values()));
    }
  }
  const double secs = seconds_since(t0);
  rep.criterion(
      "A2",
      worst_inner < 1e-8 && worst_perm < 1e-10 && worst_idem < 1e-10 &&
          secs < 30.0,
      fmt::format("max normalized <v~_i, v_j> = {:.3g}, permutation change = "
                  "{:.3g}, idempotence change = {:.3g}, {:.2f} s",
                  worst_inner, worst_perm, worst_idem, secs));
  Report::info("A2", fmt::format("re-orthogonalizing the outputs moves them by "
                                 "up to {:.3g} (outputs are not mutually "
                                 "orthogonal for N >= 2)",
                                 worst_fixed));
}

void check_a3(Report& rep) {
  const std::vector<DenseMatrix> in{DenseMatrix(1, 2, {1.0, 0.0}),
                                    DenseMatrix(1, 2, {1.0, 1.0})};
  const OrthogonalizedSet out = orthogonalize_set(in);
  const DenseVector want0{0.5, -0.5};
  const DenseVector want1{0.0, 1.0};
  double err = 0.0;
  for (std::size_t k = 0; k < 2; ++k) {
    err = std::max(err, std::abs(out.deltas[0](0, k) - want0[k]));
    err = std::max(err, std::abs(out.deltas[1](0, k) - want1[k]));
  }
  rep.criterion("A3", err < 1e-14,
                fmt::format("(1,0)/(1,1) -> ({:g},{:g})/({:g},{:g}), max error "
                            "{:.3g}",
                            out.deltas[0](0, 0), out.deltas[0](0, 1),
                            out.deltas[1](0, 0), out.deltas[1](0, 1), err));
}

void check_a4(Report& rep) {
  TcoConfig cfg;
  cfg.lambda = 0.2;
  cfg.beta = 5.0;
  const TcoState at_zero{0.0, 1, true};
  bool bounded = true;
  double worst_sym = 0.0;
  for (int i = 0; i <= 20000; ++i) {
    const double a = -10.0 + 1e-3 * i;
    const double w = loss_weight(a, at_zero, cfg);
    bounded = bounded && w > 1.0 - cfg.lambda && w < 1.0 + cfg.lambda;
    worst_sym = std::max(
        worst_sym, std::abs(w + loss_weight(-a, at_zero, cfg) - 2.0));
  }
  // Constant reward r against baseline b0: b_t - r = mu^t (b0 - r).
  const double r = 0.8;
  const double b0 = 0.1;
  TcoState s{b0, 0, true};
  double worst_law = 0.0;
  for (int t = 1; t <= 100; ++t) {
    s = update_baseline(s, r, cfg);
    const double want = std::pow(cfg.mu, t) * (b0 - r);
    worst_law = std::max(worst_law, std::abs((s.baseline - r) - want));
  }
  rep.criterion("A4", bounded && worst_sym <= 1e-15 && worst_law <= 1e-15,
                fmt::format("strict bounds hold: {}, max |w(A)+w(-A)-2| = "
                            "{:.3g}, max baseline-law error = {:.3g}",
                            bounded, worst_sym, worst_law));
}

void check_a5(Report& rep) {
  const auto t0 = std::chrono::steady_clock::now();
  ModelConfig mc;
  mc.data_dim = 3;
  mc.text_dim = 2;
  mc.ref_dim = 4;
  mc.time_dim = 4;
  mc.hidden = {12};
  mc.init_seed = 55;
  const FlowModel model(mc);
  std::mt19937_64 rng(505);
  FlowBatch batch;
  batch.inputs = DenseMatrix(8, mc.input_dim(), normal_vector(8 * mc.input_dim(), rng));
  batch.targets = DenseMatrix(8, mc.data_dim, normal_vector(8 * mc.data_dim, rng));
  batch.dropout.resize(8);
  const LossAndGrad lg = flow_matching_loss(model, batch);
  const double h = 1e-5;
  double worst = 0.0;
  std::size_t checked = 0;
  const auto rel = [](double g, double fd) {
    return std::abs(g - fd) / std::max(1.0, std::max(std::abs(g), std::abs(fd)));
  };
  const auto loss_with = [&](const std::function<void(FlowModel&)>& edit) {
    FlowModel m = model;
    edit(m);
    return flow_matching_loss(m, batch).loss;
  };
  for (std::size_t l = 0; l < model.layers().size(); ++l) {
    const auto& w = model.layers()[l].weight;
    for (std::size_t i = 0; i < w.rows(); ++i) {
      for (std::size_t j = 0; j < w.cols(); ++j) {
        const double fd =
            (loss_with([&](FlowModel& m) { m.layers()[l].weight(i, j) += h; }) -
             loss_with([&](FlowModel& m) { m.layers()[l].weight(i, j) -= h; })) /
            (2.0 * h);
        worst = std::max(worst, rel(lg.grads.weights[l](i, j), fd));
        ++checked;
      }
    }
    for (std::size_t i = 0; i < model.layers()[l].bias.size(); ++i) {
      const double fd =
          (loss_with([&](FlowModel& m) { m.layers()[l].bias[i] += h; }) -
           loss_with([&](FlowModel& m) { m.layers()[l].bias[i] -= h; })) /
          (2.0 * h);
      worst = std::max(worst, rel(lg.grads.biases[l][i], fd));
      ++checked;
    }
  }
  const double secs = seconds_since(t0);
  rep.criterion("A5", worst < 1e-4 && secs < 10.0,
                fmt::format("{} parameters of a 2-layer model, max relative "
                            "error {:.3g}, {:.2f} s",
                            checked, worst, secs));
}

// ---------------------------------------------------------------- A6..A10

ExperimentConfig acceptance_config(const fs::path& work) {
  ExperimentConfig cfg;
  cfg.seed = 1;
  cfg.output_dir = work / "main";
  cfg.base_checkpoint = cfg.output_dir / "base.flow.json";
  cfg.adapter_dir = cfg.output_dir / "adapters";
  cfg.base_train.steps = 12000;
  cfg.base_train.learning_rate = 0.01;
  cfg.base_train.batch_size = 256;
  cfg.lora_train.train.steps = 1500;
  cfg.lora_train.train.learning_rate = 0.01;
  cfg.eval.n_refs = 32;
  cfg.eval.samples_per_ref = 64;
  cfg.generation.lora_all_branches = true;
  cfg.grid_adapters = {"high_pitch", "high_energy"};
  cfg.ablate_adapter = "high_pitch";
  cfg.ablate_lambda_a = {3.0, 1.5, 0.5};
  cfg.relative_scales = {0.0, 1.0, 2.0};
  // A8 only reads the lambda_a rows; the TCO comparison is A9.
  cfg.no_tco_checkpoint = cfg.base_checkpoint;
  return cfg;
}

bool strictly_monotone(const std::vector<double>& v) {
  bool up = true;
  bool down = true;
  for (std::size_t i = 1; i < v.size(); ++i) {
    up = up && v[i] > v[i - 1];
    down = down && v[i] < v[i - 1];
  }
  return up || down;
}

struct SweepOutcome {
  bool pass = false;
  std::string detail;
};

SweepOutcome judge_sweep(const std::vector<SweepRow>& rows) {
  std::vector<double> scales;
  std::vector<double> attr;
  double timbre0 = 0.0;
  double attr0 = 0.0;
  for (const auto& r : rows) {
    scales.push_back(r.scale);
    attr.push_back(r.attribute);
    if (r.scale == 0.0) {
      timbre0 = r.timbre;
      attr0 = r.attribute;
    }
  }
  const double rho = spearman_correlation(scales, attr);
  double min_fid = 1.0;
  double max_drop = -1e300;
  bool opposite = true;
  for (const auto& r : rows) {
    min_fid = std::min(min_fid, r.fidelity);
    max_drop = std::max(max_drop, timbre0 - r.timbre);
    for (const auto& q : rows) {
      if (r.scale > 0.0 && q.scale == -r.scale) {
        opposite = opposite &&
                   (r.attribute - attr0) * (q.attribute - attr0) < 0.0;
      }
    }
  }
  const bool mono = strictly_monotone(attr);
  SweepOutcome out;
  out.pass = mono && rho >= 0.9 && min_fid >= 0.9 && max_drop <= 0.1 &&
             opposite;
  out.detail = fmt::format(
      "pitch over scales {} = [{:.3f}], strictly monotone: {}, Spearman "
      "{:.3f}, min fidelity {:.3f}, max timbre drop {:.4f}, opposite signs: {}",
      scales, fmt::join(attr, ", "), mono, rho, min_fid, max_drop, opposite);
  return out;
}

DenseMatrix run_grid(const ExperimentConfig& cfg,
                     const std::vector<std::string>& adapters) {
  const std::vector<std::vector<double>> scales{cfg.scales, cfg.scales_b};
  const auto rows = cmd_grid(cfg, adapters, scales);
  return grid_crosstalk(rows, scales);
}

ExperimentConfig variant(const ExperimentConfig& cfg, const fs::path& dir) {
  ExperimentConfig v = cfg;
  v.output_dir = dir;
  return v;
}

struct AblateOutcome {
  bool corr_ok = false;
  bool shift_ok = false;
  std::string detail;
};

AblateOutcome judge_ablate(const std::vector<AblateRow>& rows) {
  std::map<double, AblateRow> by_la;
  double cfg_gap = 0.0;
  std::map<std::string, AblateRow> named;
  for (const auto& r : rows) {
    named[r.setting] = r;
    if (r.setting.rfind("lambda_a_", 0) == 0) by_la[r.lambda_a] = r;
  }
  for (const auto& [name, r] : named) {
    if (name.rfind("cfg_", 0) != 0) continue;
    const auto it = named.find("dcfg_equiv_" + name);
    if (it == named.end()) continue;
    cfg_gap = std::max({cfg_gap, std::abs(r.attr_shift - it->second.attr_shift),
                        std::abs(r.timbre - it->second.timbre)});
  }
  AblateOutcome out;
  const double c3 = by_la.at(3.0).ref_correlation;
  const double c15 = by_la.at(1.5).ref_correlation;
  const double c05 = by_la.at(0.5).ref_correlation;
  out.corr_ok = c15 <= c3 && c05 <= c15;
  const double s3 = by_la.at(3.0).attr_shift;
  const double s05 = by_la.at(0.5).attr_shift;
  out.shift_ok = s05 > s3;
  out.detail = fmt::format(
      "ref correlation at l_a = 3, 1.5, 0.5: {:.4f}, {:.4f}, {:.4f} "
      "(non-increasing: {}); adapter pitch shift at l_a = 0.5: {:+.4f}, at "
      "l_a = 3: {:+.4f} (larger: {}); CFG vs DCFG-equivalent rows differ by "
      "{:.3g}",
      c3, c15, c05, out.corr_ok, s05, s3, out.shift_ok, cfg_gap);
  return out;
}

struct RelativeOutcome {
  bool pass = false;
  std::string detail;
  std::string baseline_detail;
};

RelativeOutcome judge_relative(const RelativeResult& res) {
  RelativeOutcome out;
  out.pass = true;
  std::vector<std::string> parts;
  std::vector<std::string> base_parts;
  for (std::size_t i = 0; i < res.fits.size(); ++i) {
    const auto& f = res.fits[i];
    const bool ok = f.fit.r2 >= 0.8 && f.fit.slope > 0.3 && f.fit.slope < 2.0;
    out.pass = out.pass && ok;
    parts.push_back(fmt::format("scale {:g}: slope {:.3f}, r2 {:.3f}",
                                f.scale, f.fit.slope, f.fit.r2));
    const RegressionFit b =
        relative_regression(res.gen_attribute.front(), res.gen_attribute[i]);
    base_parts.push_back(fmt::format("scale {:g}: slope {:.3f}, r2 {:.3f}",
                                     f.scale, b.slope, b.r2));
  }
  out.detail = fmt::format("{}", fmt::join(parts, "; "));
  out.baseline_detail = fmt::format(
      "against the scale-0 generation instead of the reference: {}",
      fmt::join(base_parts, "; "));
  return out;
}

void run_end_to_end(Report& rep, const fs::path& work) {
  ExperimentConfig cfg = acceptance_config(work);
  fs::create_directories(cfg.output_dir);

  auto t0 = std::chrono::steady_clock::now();
  cmd_train_base(cfg);
  const double base_secs = seconds_since(t0);
  t0 = std::chrono::steady_clock::now();
  cmd_train_lora(cfg, "high_pitch");
  const double lora_secs = seconds_since(t0);
  for (const char* s : {"high_energy", "high_pitch_corr", "high_energy_corr"}) {
    cmd_train_lora(cfg, s);
  }
  Report::info("setup", fmt::format("base training {:.1f} s ({} steps, reward "
                                    "weighting on), high_pitch adapter {:.1f} s "
                                    "({} steps); adapters act on all guidance "
                                    "branches",
                                    base_secs, cfg.base_train.steps, lora_secs,
                                    cfg.lora_train.train.steps));

  // A6
  {
    const auto rows = cmd_sweep(cfg, "high_pitch", cfg.scales);
    const SweepOutcome s = judge_sweep(rows);
    const bool budget = base_secs <= 300.0 && lora_secs <= 120.0;
    rep.criterion("A6", s.pass && budget,
                  fmt::format("{}; training within budget: {}", s.detail,
                              budget));
  }

  // A7
  double orth_corr_sum = 0.0;
  double raw_corr_sum = 0.0;
  {
    const DenseMatrix clean = run_grid(cfg, cfg.grid_adapters);
    const std::vector<std::string> corr{"high_pitch_corr", "high_energy_corr"};
    const DenseMatrix orth = run_grid(variant(cfg, work / "a7_corr_orth"), corr);
    ExperimentConfig raw_cfg = variant(cfg, work / "a7_corr_raw");
    raw_cfg.orthogonalize = false;
    const DenseMatrix raw = run_grid(raw_cfg, corr);
    orth_corr_sum = orth(0, 1) + orth(1, 0);
    raw_corr_sum = raw(0, 1) + raw(1, 0);
    const bool bound = clean(0, 1) <= 0.3 && clean(1, 0) <= 0.3;
    const bool ordering = raw_corr_sum > orth_corr_sum;
    rep.criterion(
        "A7", bound && ordering,
        fmt::format("orthogonal fusion crosstalk pitch->energy {:.3f}, "
                    "energy->pitch {:.3f} (<= 0.3: {}); correlated adapters "
                    "crosstalk sum without orthogonalization {:.3f} vs with "
                    "{:.3f} (entangled larger: {}); unorthogonalized run "
                    "exceeds 0.3: {}",
                    clean(0, 1), clean(1, 0), bound, raw_corr_sum,
                    orth_corr_sum, ordering,
                    std::max(raw(0, 1), raw(1, 0)) > 0.3));
  }

  // A8
  {
    const AblateOutcome a = judge_ablate(cmd_ablate(variant(cfg, work / "a8")));
    rep.criterion("A8", a.corr_ok && a.shift_ok, a.detail);
  }

  // A9
  {
    const StyleSpace space(cfg.style);
    std::vector<double> with_tco;
    std::vector<double> without_tco;
    std::vector<std::string> parts;
    const auto t9 = std::chrono::steady_clock::now();
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
      ExperimentConfig c = cfg;
      c.seed = seed;
      c.base_train.steps = 3000;
      const auto refs = eval_references(space, c.eval);
      GenerationSettings gen = c.generation;
      gen.weights = {2.0, 0.5};
      const auto timbre_of = [&](bool tco) {
        const FlowModel m = train_base_model(c, tco);
        return evaluate(m, space, refs, c.eval.samples_per_ref, gen, nullptr,
                        c.eval.euler_steps, c.eval.seed)
            .timbre;
      };
      with_tco.push_back(timbre_of(true));
      without_tco.push_back(timbre_of(false));
      parts.push_back(fmt::format("seed {}: {:.5f} vs {:.5f}", seed,
                                  with_tco.back(), without_tco.back()));
    }
    const double mean_tco =
        std::accumulate(with_tco.begin(), with_tco.end(), 0.0) / 5.0;
    const double mean_no =
        std::accumulate(without_tco.begin(), without_tco.end(), 0.0) / 5.0;
    rep.criterion("A9", mean_tco >= mean_no,
                  fmt::format("mean timbre_reward at l_a = 0.5 over 5 seeds "
                              "(3000 base steps each): with reward weighting "
                              "{:.5f}, without {:.5f} ({:.2f} s)",
                              mean_tco, mean_no, seconds_since(t9)));
    Report::info("A9", fmt::format("{}", fmt::join(parts, "; ")));
  }

  // A10
  {
    const RelativeOutcome r = judge_relative(
        cmd_relative(variant(cfg, work / "a10"), "high_pitch",
                     cfg.relative_scales));
    rep.criterion("A10", r.pass, r.detail);
    Report::info("A10", r.baseline_detail);
  }

  // The same checks with the adapter on the full branch only.
  {
    ExperimentConfig d = variant(cfg, work / "full_branch_only");
    d.generation.lora_all_branches = false;
    const SweepOutcome s = judge_sweep(cmd_sweep(d, "high_pitch", d.scales));
    Report::info("A6 full-branch-only",
                 fmt::format("{}: {}", s.pass ? "holds" : "fails", s.detail));
    const DenseMatrix clean = run_grid(d, d.grid_adapters);
    Report::info("A7 full-branch-only",
                 fmt::format("crosstalk pitch->energy {:.3f}, energy->pitch "
                             "{:.3f}",
                             clean(0, 1), clean(1, 0)));
    const AblateOutcome a = judge_ablate(cmd_ablate(d));
    Report::info("A8 full-branch-only",
                 fmt::format("{}: {}", a.corr_ok && a.shift_ok ? "holds" : "fails",
                             a.detail));
    const RelativeOutcome r =
        judge_relative(cmd_relative(d, "high_pitch", d.relative_scales));
    Report::info("A10 full-branch-only",
                 fmt::format("{}: {}", r.pass ? "holds" : "fails", r.detail));
  }
}

}  // namespace

int main(int argc, char** argv) {
  fs::path work = fs::temp_directory_path() / "restyle_acceptance";
  bool strict = false;
  bool math_only = false;
  for (int i = 1; i < argc; ++i) {
    const std::string arg = argv[i];
    if (arg == "--work-dir" && i + 1 < argc) {
      work = argv[++i];
    } else if (arg == "--strict") {
      strict = true;
    } else if (arg == "--math-only") {
      math_only = true;
    } else {
      fmt::print(stderr,
                 "usage: restyle_acceptance [--work-dir DIR] [--strict] "
                 "[--math-only]\n");
      return 2;
    }
  }
  Report rep;
  try {
    check_a1(rep);
    check_a2(rep);
    check_a3(rep);
    check_a4(rep);
    check_a5(rep);
    if (!math_only) {
      fs::remove_all(work);
      fs::create_directories(work);
      run_end_to_end(rep, work);
    }
  } catch (const std::exception& e) {
    fmt::print(stderr, "acceptance run aborted: {}\n", e.what());
    return 1;
  }
  fmt::print("{} criteria failed\n", rep.failures);
  return strict && rep.failures > 0 ? 1 : 0;
}
