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

#include <cmath>
#include <optional>
#include <random>
#include <vector>

#include <gtest/gtest.h>

#include "restyle/error.hpp"
#include "restyle/flow_model.hpp"
#include "restyle/guidance.hpp"
#include "restyle/lora.hpp"
#include "restyle/sampler.hpp"
#include "restyle/styledata.hpp"
#include "restyle/trainer.hpp"
#include "test_util.hpp"

namespace restyle {
namespace {

using testing::bitwise_equal;

ModelConfig tiny_config() {
  ModelConfig cfg;
  cfg.data_dim = 2;
  cfg.text_dim = 2;
  cfg.ref_dim = 3;
  cfg.time_dim = 2;
  cfg.hidden = {5, 4};
  cfg.init_seed = 3;
  return cfg;
}

FlowBatch random_batch(const ModelConfig& cfg, std::size_t n,
                       std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return {testing::random_matrix(n, cfg.input_dim(), rng),
          testing::random_matrix(n, cfg.data_dim, rng),
          std::vector<DropoutDecision>(n)};
}

TrainingSet random_set(const ModelConfig& cfg, std::size_t n,
                       std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return {testing::random_matrix(n, cfg.data_dim, rng),
          testing::random_matrix(n, cfg.text_dim, rng),
          testing::random_matrix(n, cfg.ref_dim, rng)};
}

FusedDelta random_delta(const FlowModel& model, std::uint64_t seed,
                        double scale) {
  std::mt19937_64 rng(seed);
  FusedDelta d;
  for (const auto& l : model.layers()) {
    d.layers.emplace(l.name, testing::random_matrix(l.weight.rows(),
                                                    l.weight.cols(), rng,
                                                    scale));
  }
  return d;
}

TEST(Model, LayersAreNamedInOrder) {
  const FlowModel m(tiny_config());
  ASSERT_EQ(m.layers().size(), 3u);
  EXPECT_EQ(m.layers()[0].name, "layer0");
  EXPECT_EQ(m.layers()[2].name, "layer2");
  EXPECT_EQ(m.layers()[0].weight.cols(), tiny_config().input_dim());
  EXPECT_EQ(m.layers()[2].weight.rows(), 2u);
  EXPECT_EQ(m.layer_index("layer1"), 1u);
  EXPECT_THROW(m.layer_index("head"), ValidationError);
  EXPECT_EQ(FlowModel(tiny_config()), m);
}

TEST(Model, InputAssemblyMarksDroppedConditions) {
  const ModelConfig cfg = tiny_config();
  DenseVector out(cfg.input_dim());
  const DenseVector x{0.5, -0.5};
  const DenseVector text{1.0, 0.0};
  const DenseVector ref{0.1, 0.2, 0.3};
  assemble_input(cfg, x, 0.25, text, ref, out);
  DenseVector dropped(cfg.input_dim());
  assemble_input(cfg, x, 0.25, {}, {}, dropped);
  EXPECT_NE(out, dropped);
  // Both conditions absent must differ from a present all-zero condition.
  DenseVector zeros(cfg.input_dim());
  assemble_input(cfg, x, 0.25, DenseVector{0.0, 0.0},
                 DenseVector{0.0, 0.0, 0.0}, zeros);
  EXPECT_NE(zeros, dropped);
}

TEST(Gradients, MatchCentralDifferences) {
  const ModelConfig cfg = tiny_config();
  const FlowModel model(cfg);
  const FlowBatch batch = random_batch(cfg, 6, 21);
  const LossAndGrad lg = flow_matching_loss(model, batch);
  const double h = 1e-5;
  for (std::size_t l = 0; l < model.layers().size(); ++l) {
    const auto& w = model.layers()[l].weight;
    for (std::size_t i = 0; i < w.rows(); ++i) {
      for (std::size_t j = 0; j < w.cols(); ++j) {
        FlowModel plus = model;
        FlowModel minus = model;
        plus.layers()[l].weight(i, j) += h;
        minus.layers()[l].weight(i, j) -= h;
        const double fd = (flow_matching_loss(plus, batch).loss -
                           flow_matching_loss(minus, batch).loss) /
                          (2.0 * h);
        const double g = lg.grads.weights[l](i, j);
        EXPECT_LE(std::abs(g - fd), 1e-4 * std::max(1.0, std::abs(g)))
            << "layer " << l << " (" << i << "," << j << ")";
      }
    }
    for (std::size_t i = 0; i < model.layers()[l].bias.size(); ++i) {
      FlowModel plus = model;
      FlowModel minus = model;
      plus.layers()[l].bias[i] += h;
      minus.layers()[l].bias[i] -= h;
      const double fd = (flow_matching_loss(plus, batch).loss -
                         flow_matching_loss(minus, batch).loss) /
                        (2.0 * h);
      const double g = lg.grads.biases[l][i];
      EXPECT_LE(std::abs(g - fd), 1e-4 * std::max(1.0, std::abs(g)))
          << "bias " << l << " [" << i << "]";
    }
  }
}

TEST(Gradients, ParallelMatchesSerialBitwise) {
  ModelConfig cfg = tiny_config();
  cfg.hidden = {32, 32};
  const FlowModel model(cfg);
  const FlowBatch batch = random_batch(cfg, 1000, 22);
  const LossAndGrad a = flow_matching_loss(model, batch);
  const LossAndGrad b = serial::flow_matching_loss(model, batch);
  EXPECT_TRUE(bitwise_equal(DenseVector{a.loss}, DenseVector{b.loss}));
  for (std::size_t l = 0; l < a.grads.weights.size(); ++l) {
    EXPECT_TRUE(bitwise_equal(a.grads.weights[l], b.grads.weights[l]));
    EXPECT_TRUE(bitwise_equal(a.grads.biases[l], b.grads.biases[l]));
  }
}

TEST(Delta, ZeroDeltaIsBitwiseIdentity) {
  const FlowModel model(tiny_config());
  const FusedDelta zero = random_delta(model, 1, 0.0);
  const DenseVector x{0.3, -0.2};
  const DenseVector text{0.0, 1.0};
  const DenseVector ref{1.0, 2.0, 3.0};
  EXPECT_TRUE(bitwise_equal(forward(model, x, 0.4, text, ref, &zero),
                            forward(model, x, 0.4, text, ref)));
}

TEST(Delta, MatchesMergedWeights) {
  const FlowModel model(tiny_config());
  const FusedDelta d = random_delta(model, 2, 0.1);
  FlowModel merged = model;
  for (auto& l : merged.layers()) {
    l.weight = apply_fused(l.weight, *d.find(l.name));
  }
  const DenseVector x{0.3, -0.2};
  const DenseVector ref{1.0, 2.0, 3.0};
  EXPECT_LT(testing::max_abs_diff(forward(model, x, 0.7, {}, ref, &d),
                                  forward(merged, x, 0.7, {}, ref)),
            1e-13);
  FusedDelta wrong;
  wrong.layers.emplace("layer0", DenseMatrix(2, 2));
  EXPECT_THROW(forward(model, x, 0.7, {}, ref, &wrong), DimensionError);
}

TEST(Delta, EvalParallelMatchesSerialBitwise) {
  ModelConfig cfg = tiny_config();
  cfg.hidden = {16, 16};
  const FlowModel model(cfg);
  const FusedDelta d = random_delta(model, 3, 0.05);
  std::mt19937_64 rng(23);
  const DenseMatrix inputs = testing::random_matrix(3001, cfg.input_dim(), rng);
  const VelocityField field(model, &d);
  EXPECT_TRUE(bitwise_equal(field.eval(inputs), field.eval_serial(inputs)));
}

TEST(Flow, PairFollowsTheStraightPath) {
  const FlowPair p = make_flow_pair(DenseVector{1.0, -1.0},
                                    DenseVector{3.0, 1.0}, 0.25);
  EXPECT_EQ(p.x_t, (DenseVector{1.5, -0.5}));
  EXPECT_EQ(p.v_target, (DenseVector{2.0, 2.0}));
}

TEST(Dropout, DecisionRule) {
  TrainConfig cfg;
  cfg.drop_ref_rate = 0.3;
  cfg.drop_both_rate = 0.2;
  const auto keep = decide_dropout(0.9, 0.9, cfg);
  EXPECT_TRUE(keep.keep_text && keep.keep_ref);
  const auto ref_only = decide_dropout(0.1, 0.9, cfg);
  EXPECT_TRUE(ref_only.keep_text);
  EXPECT_FALSE(ref_only.keep_ref);
  const auto both = decide_dropout(0.9, 0.1, cfg);
  EXPECT_FALSE(both.keep_text || both.keep_ref);
}

TEST(Dropout, RatesMatchWithinThreeSigma) {
  const ModelConfig cfg = tiny_config();
  const TrainingSet data = random_set(cfg, 50, 24);
  TrainConfig tc;
  tc.batch_size = 100000;
  std::mt19937_64 rng(25);
  const FlowBatch batch = draw_batch(data, cfg, tc, rng);
  std::size_t no_ref = 0, no_text = 0;
  for (const auto& d : batch.dropout) {
    no_ref += d.keep_ref ? 0 : 1;
    no_text += d.keep_text ? 0 : 1;
  }
  const double n = static_cast<double>(tc.batch_size);
  const auto within = [n](std::size_t count, double p) {
    return std::abs(static_cast<double>(count) / n - p) <=
           3.0 * std::sqrt(p * (1.0 - p) / n);
  };
  EXPECT_TRUE(within(no_ref, 1.0 - 0.7 * 0.8)) << no_ref;
  EXPECT_TRUE(within(no_text, 0.2)) << no_text;
}

TEST(Dropout, ExtremeRates) {
  const ModelConfig cfg = tiny_config();
  const TrainingSet data = random_set(cfg, 10, 26);
  TrainConfig tc;
  tc.batch_size = 500;
  std::mt19937_64 rng(27);
  tc.drop_ref_rate = 0.0;
  tc.drop_both_rate = 0.0;
  for (const auto& d : draw_batch(data, cfg, tc, rng).dropout) {
    EXPECT_TRUE(d.keep_ref && d.keep_text);
  }
  tc.drop_ref_rate = 1.0;
  for (const auto& d : draw_batch(data, cfg, tc, rng).dropout) {
    EXPECT_FALSE(d.keep_ref);
    EXPECT_TRUE(d.keep_text);
  }
  tc.drop_ref_rate = 1.5;
  EXPECT_THROW(tc.validate(), ValidationError);
}

TEST(Training, DeterministicAndLeavesTheInputCopyAlone) {
  const ModelConfig cfg = tiny_config();
  const TrainingSet data = random_set(cfg, 64, 28);
  TrainConfig tc;
  tc.batch_size = 32;
  tc.steps = 20;
  const FlowModel init(cfg);
  FlowModel a = init;
  FlowModel b = init;
  const auto log_a = train(a, data, tc);
  const auto log_b = train(b, data, tc);
  EXPECT_EQ(a, b);
  EXPECT_NE(a, init);
  ASSERT_EQ(log_a.size(), 20u);
  for (std::size_t i = 0; i < log_a.size(); ++i) {
    EXPECT_EQ(log_a[i].loss, log_b[i].loss);
  }
}

TEST(Training, ConstantRewardLeavesUpdatesUnchanged) {
  const ModelConfig cfg = tiny_config();
  const TrainingSet data = random_set(cfg, 64, 29);
  TrainConfig tc;
  tc.batch_size = 16;
  tc.steps = 10;
  FlowModel plain(cfg);
  FlowModel weighted(cfg);
  train(plain, data, tc);
  const TcoHook hook{TcoConfig{},
                     [](const FlowModel&, std::size_t) { return 0.73; }};
  const auto log = train(weighted, data, tc, hook);
  EXPECT_EQ(plain, weighted);
  for (const auto& row : log) {
    EXPECT_TRUE(row.has_reward);
    EXPECT_EQ(row.weight, 1.0);
  }
}

TEST(Training, RewardAboveBaselineScalesTheStep) {
  const ModelConfig cfg = tiny_config();
  const TrainingSet data = random_set(cfg, 64, 30);
  TrainConfig tc;
  tc.batch_size = 16;
  const FlowModel init(cfg);
  const TcoConfig tco;
  // Seeded at 0.2, the second reward 0.6 gives weight 1 + 0.2 tanh(2).
  std::vector<double> rewards{0.2, 0.6};
  const TcoHook hook{tco, [&](const FlowModel&, std::size_t step) {
                       return rewards[step];
                     }};
  FlowModel m = init;
  std::mt19937_64 rng(tc.seed);
  TcoState state;
  train_step(m, data, tc, rng, 0, &hook, &state);
  const FlowModel before = m;
  std::mt19937_64 rng_copy = rng;
  const TrainLogRow row = train_step(m, data, tc, rng, 1, &hook, &state);
  const double w = 1.0 + 0.2 * std::tanh(2.0);
  EXPECT_NEAR(row.weight, w, 1e-15);
  EXPECT_NEAR(row.weighted_loss, w * row.loss, 1e-14);

  FlowModel manual = before;
  const FlowBatch batch = draw_batch(data, cfg, tc, rng_copy);
  const LossAndGrad lg = flow_matching_loss(manual, batch);
  for (std::size_t l = 0; l < manual.layers().size(); ++l) {
    axpy(-tc.learning_rate * w, lg.grads.weights[l],
         manual.layers()[l].weight);
    axpy(-tc.learning_rate * w, lg.grads.biases[l], manual.layers()[l].bias);
  }
  for (std::size_t l = 0; l < manual.layers().size(); ++l) {
    EXPECT_LT(testing::max_abs_diff(manual.layers()[l].weight,
                                    m.layers()[l].weight),
              1e-15);
  }
}

TEST(Lora, ZeroStepsGiveZeroDeltaAndBaseStaysFrozen) {
  const ModelConfig cfg = tiny_config();
  const TrainingSet data = random_set(cfg, 64, 31);
  const FlowModel base(cfg);
  const FlowModel copy = base;
  LoraTrainConfig lc;
  lc.rank = 2;
  lc.alpha = 4.0;
  lc.train.batch_size = 16;
  lc.train.steps = 0;
  const AdapterSet zero = train_lora(base, data, "s", lc);
  ASSERT_EQ(zero.size(), base.layers().size());
  for (const auto& a : zero.adapters()) {
    EXPECT_EQ(frobenius_norm(delta(a)), 0.0);
  }
  lc.train.steps = 30;
  const AdapterSet trained = train_lora(base, data, "s", lc);
  EXPECT_EQ(base, copy);
  double total = 0.0;
  for (const auto& a : trained.adapters()) total += frobenius_norm(delta(a));
  EXPECT_GT(total, 0.0);
}

TEST(Lora, AdapterFitsAShiftedSubsetBetterThanItsOwnData) {
  // A base trained on one subset needs a larger correction to fit a shifted
  // subset than to refit its own data.
  const StyleSpace space(StyleSpec::defaults());
  ModelConfig cfg;
  cfg.data_dim = space.dim();
  cfg.text_dim = space.spec().n_classes;
  cfg.ref_dim = space.ref_dim();
  cfg.hidden = {32, 32};
  const auto base_samples = generate(space, "base", 2048, 40);
  const TrainingSet base_set = make_training_set(space, base_samples);
  FlowModel base(cfg);
  TrainConfig tc;
  tc.steps = 400;
  tc.batch_size = 128;
  train(base, base_set, tc);

  LoraTrainConfig lc;
  lc.train.steps = 200;
  lc.train.batch_size = 128;
  const auto norm_of = [&](const std::string& subset) {
    const auto s = generate(space, subset, 1024, 41);
    const AdapterSet set = train_lora(base, make_training_set(space, s),
                                      subset, lc);
    double total = 0.0;
    for (const auto& a : set.adapters()) total += frobenius_norm(delta(a));
    return total;
  };
  EXPECT_LT(norm_of("base"), norm_of("high_pitch"));
}

TEST(Checkpoint, RoundTripIsBitwise) {
  FlowModel m(tiny_config());
  std::mt19937_64 rng(32);
  for (auto& l : m.layers()) {
    for (double& b : l.bias) b = std::normal_distribution<double>()(rng);
  }
  const auto path = testing::scratch_dir("flowlab") / "m.flow.json";
  save_model(m, path);
  EXPECT_EQ(load_model(path), m);
  EXPECT_THROW(load_model(path.parent_path() / "missing.json"), IoError);
}

SampleRequest request_for(const ModelConfig& cfg, std::size_t n) {
  SampleRequest r;
  r.text = repeat_rows(DenseVector{1.0, 0.0}, n);
  r.ref = repeat_rows(DenseVector{0.5, -0.5, 1.0}, n);
  r.euler_steps = 8;
  r.seed = 5;
  (void)cfg;
  return r;
}

TEST(Sampler, CfgEquivalentDcfgReproducesCfg) {
  const FlowModel model(tiny_config());
  SampleRequest cfg_req = request_for(model.config(), 40);
  cfg_req.mode = GuidanceMode::kCfg;
  cfg_req.lambda_cfg = 1.5;
  SampleRequest dcfg_req = request_for(model.config(), 40);
  dcfg_req.weights = cfg_equivalent_weights(1.5);
  EXPECT_LT(testing::max_abs_diff(sample(model, cfg_req),
                                  sample(model, dcfg_req)),
            1e-12);
}

TEST(Sampler, DeterministicAndSeedSensitive) {
  const FlowModel model(tiny_config());
  SampleRequest r = request_for(model.config(), 10);
  const DenseMatrix a = sample(model, r);
  EXPECT_TRUE(bitwise_equal(a, sample(model, r)));
  r.seed = 6;
  EXPECT_FALSE(bitwise_equal(a, sample(model, r)));
}

TEST(Sampler, DeltaReachesOnlyTheFullBranchByDefault) {
  // With l_a = 0 the full branch has weight zero, so a full-branch-only delta
  // cannot change the output.
  const FlowModel model(tiny_config());
  const FusedDelta d = random_delta(model, 4, 0.3);
  SampleRequest r = request_for(model.config(), 10);
  r.weights = {2.0, 0.0};
  const DenseMatrix plain = sample(model, r);
  r.delta = &d;
  EXPECT_LT(testing::max_abs_diff(plain, sample(model, r)), 1e-12);
  r.lora_all_branches = true;
  EXPECT_GT(testing::max_abs_diff(plain, sample(model, r)), 1e-6);
}

TEST(Sampler, OverflowRaisesNumericError) {
  FlowModel model(tiny_config());
  auto& last = model.layers().back();
  for (double& w : last.weight.values()) w = 1e308;
  for (double& b : last.bias) b = 1e308;
  EXPECT_THROW(sample(model, request_for(model.config(), 3)), NumericError);
}

}  // namespace
}  // namespace restyle
