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
#include <random>

#include <gtest/gtest.h>

#include "restyle/error.hpp"
#include "restyle/tco.hpp"

namespace restyle {
namespace {

TEST(Config, PaperDefaultsAndValidation) {
  const TcoConfig cfg;
  EXPECT_EQ(cfg.lambda, 0.2);
  EXPECT_EQ(cfg.beta, 5.0);
  EXPECT_EQ(cfg.mu, 0.9);
  EXPECT_NO_THROW(cfg.validate());
  for (auto bad : {TcoConfig{1.0, 5.0, 0.9, 1}, TcoConfig{-0.1, 5.0, 0.9, 1},
                   TcoConfig{0.2, 0.0, 0.9, 1}, TcoConfig{0.2, 5.0, 1.0, 1},
                   TcoConfig{0.2, 5.0, 0.9, 0}}) {
    EXPECT_THROW(bad.validate(), ValidationError);
  }
}

TEST(Baseline, Examples) {
  const TcoConfig cfg;
  const TcoState s1 = update_baseline({0.0, 0, true}, 1.0, cfg);
  EXPECT_NEAR(s1.baseline, 0.1, 1e-16);
  EXPECT_EQ(s1.step, 1u);
  TcoConfig instant = cfg;
  instant.mu = 0.0;
  EXPECT_EQ(update_baseline({0.3, 0, true}, 0.8, instant).baseline, 0.8);
  EXPECT_THROW(update_baseline({}, NAN, cfg), NumericError);
}

TEST(Baseline, ConstantRewardFollowsGeometricLaw) {
  for (double mu : {0.0, 0.5, 0.9, 0.99}) {
    TcoConfig cfg;
    cfg.mu = mu;
    const double b0 = -0.4, r = 0.75;
    TcoState s{b0, 0, true};
    for (int t = 1; t <= 100; ++t) {
      s = update_baseline(s, r, cfg);
      const double want = std::pow(mu, t) * std::abs(b0 - r);
      EXPECT_NEAR(std::abs(s.baseline - r), want, 1e-15 * t);
      EXPECT_LE(std::abs(s.baseline - r), want + 1e-15 * t);
    }
  }
}

TEST(Baseline, StaysInConvexHullOfObservedRewards) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(-3.0, 3.0);
  const TcoConfig cfg;
  TcoState s;
  double lo = 0.0, hi = 0.0;
  for (int t = 0; t < 1000; ++t) {
    const double r = u(rng);
    const bool first = !s.seeded;
    tco_observe(s, r, cfg);
    lo = first ? r : std::min(lo, r);
    hi = first ? r : std::max(hi, r);
    EXPECT_GE(s.baseline, lo - 1e-15);
    EXPECT_LE(s.baseline, hi + 1e-15);
  }
}

TEST(Weight, Examples) {
  const TcoConfig cfg;
  EXPECT_EQ(loss_weight(0.42, {0.42, 3, true}, cfg), 1.0);
  // 1 + 0.2 tanh(0.5), tanh(0.5) = 0.46211715726000975850...
  EXPECT_NEAR(loss_weight(0.6, {0.5, 1, true}, cfg), 1.0924234314520019517,
              1e-15);
  EXPECT_NEAR(loss_weight(1e6, {0.0, 1, true}, cfg), 1.2, 1e-15);
  EXPECT_NEAR(loss_weight(-1e6, {0.0, 1, true}, cfg), 0.8, 1e-15);
}

TEST(Weight, BoundedMonotoneAndSymmetric) {
  const TcoConfig cfg;
  double prev = 0.0;
  for (int i = 0; i <= 20000; ++i) {
    const double a = -10.0 + 1e-3 * i;
    const double w = loss_weight(a, {0.0, 1, true}, cfg);
    EXPECT_GT(w, 1.0 - cfg.lambda);
    EXPECT_LT(w, 1.0 + cfg.lambda);
    if (i > 0 && std::abs(a) < 3.0) EXPECT_GT(w, prev);
    if (i > 0) EXPECT_GE(w, prev);
    prev = w;
    const double sym = w + loss_weight(-a, {0.0, 1, true}, cfg);
    EXPECT_NEAR(sym, 2.0, 1e-15);
  }
}

TEST(WeightedLoss, Examples) {
  EXPECT_EQ(weighted_loss(3.25, 1.0), 3.25);
  EXPECT_EQ(weighted_loss(0.0, 1.17), 0.0);
  EXPECT_NEAR(weighted_loss(2.0, 1.1), 2.2, 1e-15);
  EXPECT_THROW(weighted_loss(-1e-9, 1.0), ValidationError);
}

TEST(Observe, FirstRewardSeedsBaselineAndUsesPriorBaseline) {
  const TcoConfig cfg;
  TcoState s;
  const TcoStep first = tco_observe(s, 0.6, cfg);
  EXPECT_EQ(first.advantage, 0.0);
  EXPECT_EQ(first.weight, 1.0);
  EXPECT_EQ(s.baseline, 0.6);
  const TcoStep second = tco_observe(s, 0.8, cfg);
  EXPECT_EQ(second.baseline, 0.6);
  EXPECT_NEAR(second.advantage, 0.2, 1e-15);
  EXPECT_NEAR(second.weight, 1.0 + 0.2 * std::tanh(1.0), 1e-15);
  EXPECT_NEAR(s.baseline, 0.9 * 0.6 + 0.1 * 0.8, 1e-15);
  EXPECT_EQ(s.step, 2u);
}

TEST(TimbreReward, CosineExamples) {
  const DenseVector centroid{1.0, 1.0, 0.0};
  const DenseVector descriptor{0.0, 2.0, 1.0};
  DenseMatrix same(3, 3);
  for (std::size_t r = 0; r < 3; ++r)
    for (std::size_t j = 0; j < 3; ++j)
      same(r, j) = centroid[j] + descriptor[j] + (r == 1 ? 0.5 : -0.25) *
                                                     (j == 0 ? 1.0 : 0.0);
  // Row noise along x0 cancels: 0.5 - 0.25 - 0.25 = 0.
  EXPECT_NEAR(timbre_reward(same, centroid, descriptor), 1.0, 1e-15);
  DenseMatrix opposite(1, 3);
  for (std::size_t j = 0; j < 3; ++j)
    opposite(0, j) = centroid[j] - 3.0 * descriptor[j];
  EXPECT_NEAR(timbre_reward(opposite, centroid, descriptor), 0.0, 1e-15);
  DenseMatrix orthogonal(1, 3);
  orthogonal(0, 0) = centroid[0] + 5.0;
  orthogonal(0, 1) = centroid[1];
  EXPECT_NEAR(timbre_reward(orthogonal, centroid, descriptor), 0.5, 1e-15);
}

TEST(TimbreReward, SubspaceProjectionDropsOutOfSubspaceOffsets) {
  const DenseVector centroid{0.0, 0.0, 0.0};
  const DenseVector descriptor{0.0, 1.0, 1.0};
  const DenseMatrix basis = DenseMatrix::from_rows({{0, 1, 0}, {0, 0, 1}});
  const DenseMatrix gen = DenseMatrix::from_rows({{10.0, 1.0, 1.0}});
  EXPECT_LT(timbre_reward(gen, centroid, descriptor), 0.99);
  EXPECT_NEAR(timbre_reward(gen, centroid, descriptor, &basis), 1.0, 1e-15);
}

TEST(TimbreReward, Errors) {
  const DenseVector c{0.0, 0.0};
  EXPECT_THROW(timbre_reward(DenseMatrix(0, 2), c, DenseVector{1, 0}),
               ValidationError);
  EXPECT_THROW(timbre_reward(DenseMatrix(1, 2, 1.0), c, DenseVector{0, 0}),
               NumericError);
  EXPECT_THROW(timbre_reward(DenseMatrix(1, 3), c, DenseVector{1, 0}),
               DimensionError);
  EXPECT_EQ(timbre_reward(DenseMatrix(2, 2), c, DenseVector{1, 0}), 0.5);
}

}  // namespace
}  // namespace restyle
