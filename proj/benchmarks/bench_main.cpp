// Copyright 2026 The shortcut Authors
// SPDX-License-Identifier: Apache-2.0

#include <benchmark/benchmark.h>

#include <random>

#include "shortcut/earlyexit.hpp"
#include "shortcut/eval.hpp"
#include "shortcut/linalg.hpp"
#include "shortcut/mappings.hpp"
#include "shortcut/model.hpp"
#include "shortcut/traces.hpp"

namespace shortcut {
namespace {

Matrix gaussian(std::size_t rows, std::size_t cols, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  Matrix m(rows, cols);
  for (double& v : m.values()) v = normal(rng);
  return m;
}

struct DeskTraces {
  ModelWeights weights;
  TraceSet train;
  TraceSet validation;
  MapGrid grid;
};

const DeskTraces& desk_traces() {
  static const DeskTraces data = [] {
    DeskTraces d;
    d.weights = init_random(preset("desk"));
    SyntheticCorpusOptions corpus;
    corpus.n_sequences = 2000;
    corpus.vocab_size = d.weights.config.vocab_size;
    corpus.seed = 1;
    const auto samples = sample_corpus(synthetic_corpus(corpus), 1000, SamplingOptions{.seed = 2});
    const std::span<const Sample> all(samples);
    d.train = collect_traces(d.weights, all.first(800), CollectOptions{});
    d.validation = collect_traces(d.weights, all.subspan(800), CollectOptions{.split = Split::kValidation});
    d.grid = fit_all_pairs(d.train);
    return d;
  }();
  return data;
}

void BM_SolveLeastSquares(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto d = static_cast<std::size_t>(state.range(1));
  const Matrix x = gaussian(n, d, 1);
  const Matrix y = gaussian(n, d, 2);
  for (auto _ : state) benchmark::DoNotOptimize(solve_least_squares(x, y));
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * n));
}
BENCHMARK(BM_SolveLeastSquares)
    ->Args({500, 64})
    ->Args({9000, 64})
    ->Args({9000, 256})
    ->Unit(benchmark::kMillisecond);

void BM_ForwardWithTaps(benchmark::State& state) {
  const ModelWeights w = init_random(preset("desk"));
  const auto len = static_cast<std::size_t>(state.range(0));
  std::vector<TokenId> tokens(len);
  for (std::size_t i = 0; i < len; ++i) tokens[i] = static_cast<TokenId>((7 * i) % 255);
  const std::size_t position = len - 1;
  for (auto _ : state) {
    benchmark::DoNotOptimize(
        forward_with_taps(w, tokens, std::span(&position, 1), state.range(1) != 0));
  }
}
BENCHMARK(BM_ForwardWithTaps)->Args({16, 0})->Args({64, 0})->Args({64, 1});

void BM_FitAllPairs(benchmark::State& state) {
  const auto& d = desk_traces();
  for (auto _ : state) benchmark::DoNotOptimize(fit_all_pairs(d.train));
}
BENCHMARK(BM_FitAllPairs)->Unit(benchmark::kMillisecond);

void BM_EvalLmPerLayer(benchmark::State& state) {
  const auto& d = desk_traces();
  for (auto _ : state) {
    benchmark::DoNotOptimize(eval_lm_per_layer(d.validation, d.grid, d.weights, LmEvalOptions{}));
  }
}
BENCHMARK(BM_EvalLmPerLayer)->Unit(benchmark::kMillisecond);

void BM_EarlyExitSweep(benchmark::State& state) {
  const auto& d = desk_traces();
  for (auto _ : state) {
    benchmark::DoNotOptimize(
        sweep_early_exit(d.validation, d.grid, d.weights, {Caster::kMat, Caster::kId}, {}, {}));
  }
}
BENCHMARK(BM_EarlyExitSweep)->Unit(benchmark::kMillisecond);

}  // namespace
}  // namespace shortcut

BENCHMARK_MAIN();
