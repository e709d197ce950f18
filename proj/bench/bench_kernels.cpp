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

// Serial versus OpenMP timings of the parallel kernels. The thread count comes
// from OMP_NUM_THREADS.

#include <random>
#include <vector>

#include <benchmark/benchmark.h>

#include "restyle/flow_model.hpp"
#include "restyle/fusion.hpp"
#include "restyle/linalg.hpp"
#include "restyle/trainer.hpp"

namespace {

using namespace restyle;

DenseMatrix random_matrix(std::size_t rows, std::size_t cols,
                          std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist(0.0, 1.0);
  DenseMatrix m(rows, cols);
  for (double& v : m.values()) v = dist(rng);
  return m;
}

void BM_Matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const DenseMatrix a = random_matrix(n, n, 1);
  const DenseMatrix b = random_matrix(n, n, 2);
  for (auto _ : state) benchmark::DoNotOptimize(matmul(a, b));
}

void BM_MatmulSerial(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const DenseMatrix a = random_matrix(n, n, 1);
  const DenseMatrix b = random_matrix(n, n, 2);
  for (auto _ : state) benchmark::DoNotOptimize(serial::matmul(a, b));
}

std::vector<DenseMatrix> delta_set(std::size_t n) {
  std::vector<DenseMatrix> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(random_matrix(256, 256, 10 + i));
  return out;
}

void BM_Orthogonalize(benchmark::State& state) {
  const auto set = delta_set(static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(orthogonalize_set(set));
}

void BM_OrthogonalizeSerial(benchmark::State& state) {
  const auto set = delta_set(static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(serial::orthogonalize_set(set));
}

struct LossFixture {
  FlowModel model;
  FlowBatch batch;

  explicit LossFixture(std::size_t rows) : model(ModelConfig{}) {
    const std::size_t in = model.config().input_dim();
    batch.inputs = random_matrix(rows, in, 3);
    batch.targets = random_matrix(rows, model.config().data_dim, 4);
    batch.dropout.resize(rows);
  }
};

void BM_LossAndGrad(benchmark::State& state) {
  const LossFixture f(static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) {
    benchmark::DoNotOptimize(flow_matching_loss(f.model, f.batch));
  }
}

void BM_LossAndGradSerial(benchmark::State& state) {
  const LossFixture f(static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) {
    benchmark::DoNotOptimize(serial::flow_matching_loss(f.model, f.batch));
  }
}

void BM_Eval(benchmark::State& state) {
  const LossFixture f(static_cast<std::size_t>(state.range(0)));
  const VelocityField field(f.model, nullptr);
  for (auto _ : state) benchmark::DoNotOptimize(field.eval(f.batch.inputs));
}

void BM_EvalSerial(benchmark::State& state) {
  const LossFixture f(static_cast<std::size_t>(state.range(0)));
  const VelocityField field(f.model, nullptr);
  for (auto _ : state) {
    benchmark::DoNotOptimize(field.eval_serial(f.batch.inputs));
  }
}

BENCHMARK(BM_Matmul)->Arg(128)->Arg(512);
BENCHMARK(BM_MatmulSerial)->Arg(128)->Arg(512);
BENCHMARK(BM_Orthogonalize)->Arg(4)->Arg(8);
BENCHMARK(BM_OrthogonalizeSerial)->Arg(4)->Arg(8);
BENCHMARK(BM_LossAndGrad)->Arg(1024)->Arg(8192);
BENCHMARK(BM_LossAndGradSerial)->Arg(1024)->Arg(8192);
BENCHMARK(BM_Eval)->Arg(1024)->Arg(8192);
BENCHMARK(BM_EvalSerial)->Arg(1024)->Arg(8192);

}  // namespace

BENCHMARK_MAIN();
