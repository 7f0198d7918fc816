#include <benchmark/benchmark.h>

#include <omp.h>

#include <vector>

#include "salience/datasets.hpp"
#include "salience/engine.hpp"
#include "salience/model.hpp"
#include "salience/network.hpp"
#include "salience/window_store.hpp"

using namespace salience;

namespace {

struct Fixture {
  NetworkConfig config;
  NetworkState state;
  std::vector<LabeledWindow> windows;
};

// Benchmark-sized network on three synthetic sensors at 100 Hz, 2 s windows.
const Fixture& fixture() {
  static const Fixture f = [] {
    SynthConfig sc;
    sc.n_users = 2;
    sc.channel_counts = {9, 9, 9};
    sc.sampling_rate_hz = 100.0;
    sc.seconds_per_user = 80.0;
    Fixture out;
    const auto geometry = WindowGeometry::from_seconds(2.0, 1.0, sc.sampling_rate_hz);
    out.windows = build_window_store(generate_synthetic(sc, 1), synthetic_preset(sc), geometry).windows;
    out.config.channel_counts = sc.channel_counts;
    out.config.window_length = geometry.length;
    out.config.n_classes = sc.n_classes;
    out.state = init_state(out.config, Variant::Full, 1);
    return out;
  }();
  return f;
}

std::span<const LabeledWindow> batch_of(const Fixture& f, benchmark::State& st) {
  return std::span<const LabeledWindow>(f.windows).first(static_cast<std::size_t>(st.range(0)));
}

void BM_ReferenceForward(benchmark::State& st) {
  const Fixture& f = fixture();
  const auto batch = batch_of(f, st);
  for (auto _ : st) benchmark::DoNotOptimize(forward(batch, f.state, f.config));
  st.SetItemsProcessed(st.iterations() * st.range(0));
}

void BM_EngineForward(benchmark::State& st) {
  const Fixture& f = fixture();
  const auto batch = batch_of(f, st);
  engine::set_thread_count(static_cast<int>(st.range(1)));
  const engine::Engine eng(f.config);
  for (auto _ : st) benchmark::DoNotOptimize(eng.forward(f.state, engine::make_batch(batch, f.config)));
  st.SetItemsProcessed(st.iterations() * st.range(0));
}

void BM_EngineForwardBackward(benchmark::State& st) {
  const Fixture& f = fixture();
  const auto batch = batch_of(f, st);
  engine::set_thread_count(static_cast<int>(st.range(1)));
  const engine::Engine eng(f.config);
  NetworkState grad = f.state;
  for (auto _ : st) {
    const auto cache = eng.forward(f.state, engine::make_batch(batch, f.config));
    engine::OutputGradients seeds;
    seeds.classifier = cache.classifier.probs;
    seeds.global = cache.global->probs;
    for (const auto& head : cache.locals) seeds.local.push_back(head.probs);
    grad.set_zero();
    eng.backward(f.state, cache, seeds, {}, grad);
    benchmark::ClobberMemory();
  }
  st.SetItemsProcessed(st.iterations() * st.range(0));
}

void thread_args(benchmark::internal::Benchmark* b) {
  const int max_threads = omp_get_max_threads();
  for (long batch : {32, 128}) {
    b->Args({batch, 1});
    if (max_threads > 1) b->Args({batch, max_threads});
  }
}

}  // namespace

BENCHMARK(BM_ReferenceForward)->Arg(32)->Arg(128)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_EngineForward)->Apply(thread_args)->Unit(benchmark::kMillisecond)->UseRealTime();
BENCHMARK(BM_EngineForwardBackward)->Apply(thread_args)->Unit(benchmark::kMillisecond)->UseRealTime();

BENCHMARK_MAIN();
