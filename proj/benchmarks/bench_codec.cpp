#include "ensemble/protocol.hpp"
#include "ensemble/sim.hpp"

#include <benchmark/benchmark.h>

using namespace ensemble;

static void BM_EncodeSeed(benchmark::State& state)
{
    const proto::Message m = proto::Seed{sim::default_progression(256), sim::default_seed_melody(), 120.0, kPpq};
    for (auto _ : state)
        benchmark::DoNotOptimize(proto::encode(m));
}
BENCHMARK(BM_EncodeSeed);

static void BM_RoundTripPing(benchmark::State& state)
{
    const proto::Message m = proto::ClockPing{12345.678};
    for (auto _ : state)
        benchmark::DoNotOptimize(proto::decode(proto::encode(m)));
}
BENCHMARK(BM_RoundTripPing);
