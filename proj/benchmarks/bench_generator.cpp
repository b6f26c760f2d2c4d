#include "ensemble/generator.hpp"
#include "ensemble/sim.hpp"

#include <benchmark/benchmark.h>

using namespace ensemble;

static void BM_GenerateWindow(benchmark::State& state)
{
    const auto model = GeneratorModel::defaults(0);
    const auto prog = sim::default_progression(64);
    const auto seed = sim::default_seed_melody();
    const Temperature t(static_cast<double>(state.range(0)) / 10.0);
    std::uint64_t n = 0;
    for (auto _ : state)
        benchmark::DoNotOptimize(generate_continuation(model, seed, prog, 1, t, LatencyModel::fixed(0.0), ++n));
}
BENCHMARK(BM_GenerateWindow)->Arg(1)->Arg(10)->Arg(20);

static void BM_ApplyTemperature(benchmark::State& state)
{
    std::vector<double> dist(static_cast<std::size_t>(state.range(0)));
    for (std::size_t i = 0; i < dist.size(); ++i)
        dist[i] = 1.0 + static_cast<double>(i % 7);
    for (auto _ : state)
        benchmark::DoNotOptimize(apply_temperature(dist, Temperature(0.5)));
}
BENCHMARK(BM_ApplyTemperature)->Arg(14)->Arg(128);
