// Copyright 2026 The Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// OpenMP kernels against their serial references.

#include <numeric>
#include <vector>

#include <benchmark/benchmark.h>

#include "lba/graph.hpp"
#include "lba/pss.hpp"
#include "lba/solver.hpp"
#include "lba/synthetic.hpp"

namespace {

using namespace lba;

struct Scene {
  synth::SyntheticDataset data;
  graph::RelationGraph graph;
  pss::FactorSet factors;
  solver::BlockMap map;
};

const Scene& scene() {
  static const Scene s = [] {
    Scene out;
    synth::SceneSpec spec;
    spec.frames = 20;
    out.data = synth::generate(spec);
    out.graph = graph::build_relation_graph(out.data.frames, out.data.initial, 3.0);
    pss::SmoothingConfig cfg;
    const auto kernels = pss::build_kernels(out.data.frames, out.data.initial, cfg);
    pss::EdgeList pairs;
    for (const auto& e : out.graph.edges) pairs.emplace_back(e.i, e.j);
    out.factors = pss::extract_factors(kernels, out.data.frames, pairs, cfg);
    std::vector<int> free(out.data.frames.size() - 1);
    std::iota(free.begin(), free.end(), 1);
    out.map = solver::BlockMap::PerFrame(static_cast<int>(out.data.frames.size()), free);
    return out;
  }();
  return s;
}

void BM_KernelPassParallel(benchmark::State& state) {
  const auto& s = scene();
  pss::SmoothingConfig cfg;
  for (auto _ : state) {
    benchmark::DoNotOptimize(pss::build_kernels(s.data.frames, s.data.initial, cfg));
  }
}

void BM_KernelPassSerial(benchmark::State& state) {
  const auto& s = scene();
  pss::SmoothingConfig cfg;
  for (auto _ : state) {
    benchmark::DoNotOptimize(
        pss::serial::build_kernels(s.data.frames, s.data.initial, cfg));
  }
}

graph::SparsifyConfig sparsify_config(const graph::RelationGraph& g) {
  graph::SparsifyConfig cfg;
  cfg.target_edges = graph::target_edge_count(g.edges.size(), 0.2);
  return cfg;
}

void BM_SparsifyParallel(benchmark::State& state) {
  const auto& s = scene();
  const auto cfg = sparsify_config(s.graph);
  for (auto _ : state) {
    benchmark::DoNotOptimize(graph::sparsify(s.graph, s.data.initial, cfg));
  }
}

void BM_SparsifySerial(benchmark::State& state) {
  const auto& s = scene();
  const auto cfg = sparsify_config(s.graph);
  for (auto _ : state) {
    benchmark::DoNotOptimize(graph::serial::sparsify(s.graph, s.data.initial, cfg));
  }
}

void BM_AssembleParallel(benchmark::State& state) {
  const auto& s = scene();
  const auto subset = solver::all_factors(s.factors);
  for (auto _ : state) {
    benchmark::DoNotOptimize(
        solver::assemble(s.factors, subset, {}, s.data.initial, s.map));
  }
}

void BM_AssembleSerial(benchmark::State& state) {
  const auto& s = scene();
  const auto subset = solver::all_factors(s.factors);
  for (auto _ : state) {
    benchmark::DoNotOptimize(
        solver::serial::assemble(s.factors, subset, {}, s.data.initial, s.map));
  }
}

}  // namespace

BENCHMARK(BM_KernelPassParallel)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_KernelPassSerial)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_SparsifyParallel)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_SparsifySerial)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_AssembleParallel)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_AssembleSerial)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
