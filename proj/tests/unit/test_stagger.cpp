#include "ensemble/errors.hpp"
#include "ensemble/stagger.hpp"

#include "oracles.hpp"

#include <doctest.h>

#include <random>

using namespace ensemble;

TEST_CASE("even schedules")
{
    CHECK(build_schedule(1).offsets() == std::vector<int>{0});
    CHECK(build_schedule(4).offsets() == std::vector<int>{0, 4, 8, 12});
    CHECK(build_schedule(3).offsets() == std::vector<int>{0, 5, 10});
    CHECK(build_schedule(6).offsets() == std::vector<int>{0, 2, 5, 8, 10, 13});
    CHECK(build_schedule(16).min_gap_bars() == 1);
    CHECK(build_schedule(4).min_gap_bars() == 4);
    CHECK(build_schedule(3).min_gap_bars() == 5);
    CHECK(build_schedule(1).min_gap_bars() == 16);
    CHECK_THROWS_AS(build_schedule(0), ConfigError);
    CHECK_THROWS_AS(build_schedule(17), ConfigError);
    CHECK_THROWS(StaggerSchedule({0, 16}));
    CHECK(StaggerSchedule({3, 3}).min_gap_bars() == 0);
}

TEST_CASE("next deadline")
{
    const auto s = build_schedule(4);
    CHECK(next_deadline(s, 1, 0) == 4);
    CHECK(next_deadline(s, 1, 4) == 20);
    CHECK(next_deadline(s, 0, 0) == 16);
    CHECK(next_deadline(s, 3, 13) == 28);
    CHECK(next_deadline(s, 2, -1) == 8);
}

TEST_CASE("reinsertion at 120 BPM")
{
    const auto clock = make_clock(120.0);
    CHECK(reinsertion_tick(1000, 2300.0, clock) == 3240);
    CHECK(oracle::reinsertion_scan(1000, 23000, 120) == 3240);
    CHECK(reinsertion_tick(1920, 0.0, clock) == 1920);
    CHECK(reinsertion_tick(1921, 0.0, clock) == 2040);
    CHECK_THROWS(reinsertion_tick(-1, 10.0, clock));
}

TEST_CASE("reinsertion agrees with a grid scan")
{
    std::mt19937_64 rng(2024);
    std::uniform_int_distribution<std::int64_t> start(0, 400000);
    std::uniform_int_distribution<std::int64_t> tenths(0, 80000);
    std::uniform_int_distribution<std::int64_t> bpm(40, 240);
    for (int i = 0; i < 1000; ++i) {
        const auto s = start(rng);
        const auto f = tenths(rng);
        const auto b = bpm(rng);
        const auto got = reinsertion_tick(s, static_cast<double>(f) / 10.0, make_clock(static_cast<double>(b)));
        REQUIRE_MESSAGE(got == oracle::reinsertion_scan(s, f, b), "start=" << s << " tenths=" << f << " bpm=" << b);
    }
}

TEST_CASE("pruning the frozen span")
{
    const NoteSequence seq(2, {{60, 0, 960, 90}, {62, 960, 240, 90}, {64, 1200, 1200, 90}, {65, 2400, 480, 90}});
    const auto r = prune_frozen_span(seq, 480, 1440);
    // 60 sounds across the freeze start and is cut; 62 and 64 never start.
    CHECK(r.forced_offs == std::vector<int>{60});
    REQUIRE(r.sequence.size() == 2);
    CHECK(r.sequence.events()[0] == NoteEvent{60, 0, 480, 90});
    CHECK(r.sequence.events()[1].pitch == 65);
    CHECK(prune_frozen_span(seq, 100, 100).sequence == seq);
    CHECK_THROWS(prune_frozen_span(seq, 200, 100));
}

TEST_CASE("latency predictor is an EMA with alpha 0.5")
{
    LatencyPredictor p;
    CHECK(p.predict() == 2000.0);
    p.observe(1000.0);
    CHECK(p.predict() == 1500.0);
    p.observe(1000.0);
    CHECK(p.predict() == 1250.0);
}

TEST_CASE("generation start pulls earlier only when needed")
{
    const TempoMap map(make_clock(120.0));
    // Deadline bar 4, hand-off at bar 16 (24 s later): no need to move.
    CHECK(generation_start_tick(map, 4, 16, 0, 2000.0) == bar_to_tick(4));
    // Deadline bar 15 leaves 2 s; 3 s of work must start a bar earlier or more.
    const Tick t = generation_start_tick(map, 15, 16, 0, 3000.0);
    CHECK(t < bar_to_tick(15));
    CHECK(map.tick_to_ms(bar_to_tick(16)) - map.tick_to_ms(t) >= 3000.0);
    // Never before the earliest bar.
    CHECK(generation_start_tick(map, 15, 16, 14, 60000.0) == bar_to_tick(14));
}
