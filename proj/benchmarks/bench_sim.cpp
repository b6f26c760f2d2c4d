#include "ensemble/sim.hpp"

#include <benchmark/benchmark.h>

using namespace ensemble;

static void BM_Simulate(benchmark::State& state)
{
    sim::SimConfig c;
    c.n_performers = static_cast<int>(state.range(0));
    c.duration_bars = 120;
    for (auto _ : state)
        benchmark::DoNotOptimize(sim::run(c));
}
BENCHMARK(BM_Simulate)->Arg(2)->Arg(4)->Arg(8)->Unit(benchmark::kMillisecond);
