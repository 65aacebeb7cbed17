// Serial reference against the OpenMP kernels.
#include <benchmark/benchmark.h>
#include <omp.h>

#include "expertgen/config.hpp"
#include "expertgen/evalharness.hpp"

using namespace expertgen;

namespace {

const Experiment& attribute() {
  static const Experiment ex = build_experiment(load_config(EXPERTGEN_CONFIG_DIR "/attribute16d.toml"));
  return ex;
}

void BM_GuidedBatchSerial(benchmark::State& state) {
  const auto& ex = attribute();
  const auto setup = ex.guided_setup();
  for (auto _ : state) {
    benchmark::DoNotOptimize(sample_guided_batch_serial(setup, ex.config.guidance, static_cast<int>(state.range(0))));
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

void BM_GuidedBatchParallel(benchmark::State& state) {
  const auto& ex = attribute();
  const auto setup = ex.guided_setup();
  for (auto _ : state) {
    benchmark::DoNotOptimize(sample_guided_batch(setup, ex.config.guidance, static_cast<int>(state.range(0))));
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
  state.counters["threads"] = omp_get_max_threads();
}

Mat batch(int n, std::uint64_t seed) { return attribute().oracle->sample(Conditioning::unrestricted(), seed, n); }

void BM_SlicedWassersteinSerial(benchmark::State& state) {
  const Mat a = batch(static_cast<int>(state.range(0)), 1);
  const Mat b = batch(static_cast<int>(state.range(0)), 2);
  for (auto _ : state) benchmark::DoNotOptimize(sliced_wasserstein_serial(a, b, 256, 3));
}

void BM_SlicedWassersteinParallel(benchmark::State& state) {
  const Mat a = batch(static_cast<int>(state.range(0)), 1);
  const Mat b = batch(static_cast<int>(state.range(0)), 2);
  for (auto _ : state) benchmark::DoNotOptimize(sliced_wasserstein(a, b, 256, 3));
  state.counters["threads"] = omp_get_max_threads();
}

}  // namespace

BENCHMARK(BM_GuidedBatchSerial)->Arg(16)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_GuidedBatchParallel)->Arg(16)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_SlicedWassersteinSerial)->Arg(1000)->Arg(4000)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_SlicedWassersteinParallel)->Arg(1000)->Arg(4000)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
