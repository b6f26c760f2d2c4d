#include "ensemble/errors.hpp"
#include "ensemble/music.hpp"

#include <doctest.h>

#include <random>

using namespace ensemble;

TEST_CASE("grid constants")
{
    CHECK(kTicksPerBar == 1920);
    CHECK(kSixteenthTicks == 120);
    CHECK(kWindowTicks == 30720);
    CHECK(tick_to_bar(1919) == 0);
    CHECK(tick_to_bar(1920) == 1);
    CHECK(tick_to_bar(-1) == -1);
    CHECK(tick_to_bar(-1920) == -1);
    CHECK(tick_to_bar(-1921) == -2);
    CHECK(ceil_to_grid(3208, 120) == 3240);
    CHECK(ceil_to_grid(3240, 120) == 3240);
    CHECK(ceil_to_grid(-1, 120) == 0);
    CHECK(ceil_to_grid(-121, 120) == -120);
}

TEST_CASE("chord symbols")
{
    CHECK(parse_chord("Cmaj") == Chord{0, ChordQuality::Major});
    CHECK(parse_chord("F#min") == Chord{6, ChordQuality::Minor});
    CHECK(parse_chord("Bbmaj") == Chord{10, ChordQuality::Major});
    CHECK(chord_name(parse_chord("Amin")) == "Amin");
    CHECK_THROWS_AS(parse_chord("H"), std::invalid_argument);
    CHECK_THROWS_AS(parse_chord(""), std::invalid_argument);

    CHECK(chord_tones({0, ChordQuality::Major}) == std::array<int, 3>{0, 4, 7});
    CHECK(chord_tones({9, ChordQuality::Minor}) == std::array<int, 3>{9, 0, 4});
    CHECK(diatonic_scale({0, ChordQuality::Major}) == std::array<int, 7>{0, 2, 4, 5, 7, 9, 11});
    CHECK(diatonic_scale({9, ChordQuality::Minor}) == std::array<int, 7>{9, 11, 0, 2, 4, 5, 7});
    CHECK(in_scale({7, ChordQuality::Major}, 6));
    CHECK_FALSE(in_scale({0, ChordQuality::Major}, 6));
}

TEST_CASE("chord_at picks the entry in force")
{
    const ChordProgression prog({{0, parse_chord("Cmaj")}, {8, parse_chord("Gmaj")}});
    CHECK(chord_name(chord_at(prog, 0)) == "Cmaj");
    CHECK(chord_name(chord_at(prog, 7)) == "Cmaj");
    CHECK(chord_name(chord_at(prog, 9)) == "Gmaj");
    CHECK(chord_name(chord_at(prog, 1000)) == "Gmaj");
    CHECK_THROWS(ChordProgression({{1, parse_chord("Cmaj")}}));
    CHECK_THROWS(ChordProgression({{0, parse_chord("Cmaj")}, {0, parse_chord("Gmaj")}}));
}

TEST_CASE("sequences stay sorted and bounded")
{
    const NoteSequence seq(1, {{64, 480, 480, 90}, {60, 0, 480, 90}});
    CHECK(seq.events()[0].pitch == 60);
    CHECK_THROWS(NoteSequence(1, {{60, 1800, 240, 90}}));
    CHECK_THROWS(NoteSequence(0));
    CHECK_THROWS(NoteSequence(1, {{128, 0, 10, 90}}));
    CHECK_THROWS(NoteSequence(1, {{60, 0, 0, 90}}));
}

TEST_CASE("transpose shifts every pitch and clamps to the MIDI range")
{
    const NoteSequence seq(1, {{60, 0, 480, 90}, {67, 480, 480, 90}});
    const auto up = transpose(seq, 12);
    CHECK(up.events()[0].pitch == 72);
    CHECK(up.events()[1].pitch == 79);
    CHECK(transpose(up, -12) == seq);
    CHECK(transpose(seq, 70).events()[0].pitch == 127);
    CHECK(transpose(seq, -70).events()[1].pitch == 0);
}

TEST_CASE("quantize snaps onsets to the grid")
{
    const NoteSequence seq(1, {{60, 55, 100, 90}, {62, 70, 10, 90}});
    const auto q = quantize(seq, 120);
    for (const auto& ev : q.events()) {
        CHECK(ev.onset % 120 == 0);
        CHECK(ev.duration % 120 == 0);
        CHECK(ev.duration >= 120);
    }
    CHECK_THROWS_AS(quantize(seq, 7), InvalidGrid);
}

TEST_CASE("transport clock conversions")
{
    const auto clock = make_clock(120.0, 1000.0);
    CHECK(clock.ms_per_tick() == doctest::Approx(60000.0 / (120.0 * 480.0)));
    CHECK(tick_to_ms(clock, 1920) == doctest::Approx(3000.0));
    CHECK(ms_to_tick(clock, 3000.0) == 1920);
    CHECK(ms_to_tick(clock, 2999.0) == 1919);
    CHECK(ms_to_tick(clock, 0.0) < 0);
    CHECK(ms_to_tick_delta(clock, 2300.0) == 2208);
    CHECK(ms_to_tick_delta(clock, 0.0) == 0);
    CHECK(ms_to_tick_delta(clock, 0.1) == 1);
    CHECK_THROWS(make_clock(0.0));
}

TEST_CASE("tempo map steps on bar lines")
{
    TempoMap map(make_clock(120.0, 0.0));
    map.add_change(4, 60.0);
    CHECK(map.tick_to_ms(bar_to_tick(4)) == doctest::Approx(8000.0));
    CHECK(map.tick_to_ms(bar_to_tick(5)) == doctest::Approx(12000.0));
    CHECK(map.ms_to_tick(12000.0) == bar_to_tick(5));
    CHECK(map.tempo_at(bar_to_tick(3)) == 120.0);
    CHECK(map.tempo_at(bar_to_tick(4)) == 60.0);
    CHECK(map.tick_to_ms(-480) == doctest::Approx(-500.0));

    std::mt19937 rng(3);
    std::uniform_real_distribution<double> ms(-5000.0, 60000.0);
    for (int i = 0; i < 2000; ++i) {
        const double t = ms(rng);
        const Tick k = map.ms_to_tick(t);
        CHECK(map.tick_to_ms(k) <= t + 1e-9);
        CHECK(map.tick_to_ms(k + 1) > t);
    }
}

TEST_CASE("slice_last_bars rebases the tail")
{
    const NoteSequence seq(4, {{60, 0, 1920, 90}, {62, 3840, 2400, 90}, {64, 6000, 100, 90}});
    const auto tail = slice_last_bars(seq, 2, 4);
    REQUIRE(tail.length_bars() == 2);
    REQUIRE(tail.size() == 2);
    CHECK(tail.events()[0].onset == 0);
    CHECK(tail.events()[1].onset == 6000 - 3840);
}

TEST_CASE("text formats round-trip")
{
    const ChordProgression prog({{0, parse_chord("Cmaj")}, {1, parse_chord("Gmaj")}, {2, parse_chord("Amin")}});
    CHECK(parse_progression(format_progression(prog)) == prog);
    CHECK(parse_progression("# comment\n0:Cmaj\n\n4:Fmaj\n") ==
          ChordProgression({{0, parse_chord("Cmaj")}, {4, parse_chord("Fmaj")}}));
    CHECK_THROWS_AS(parse_progression("0 Cmaj\n"), ParseError);

    const NoteSequence seq(2, {{60, 0, 480, 96}, {64, 480, 960, 80}});
    CHECK(parse_sequence(format_sequence(seq)) == seq);
    CHECK_THROWS_AS(parse_sequence("0,1,60,90\n"), ParseError);
    CHECK_THROWS_AS(parse_sequence("bars=1 ppq=96\n"), ParseError);
    try {
        parse_sequence("bars=1 ppq=480\n0,120,200,90\n");
        FAIL("expected a parse error");
    } catch (const ParseError& e) {
        CHECK(e.line() == 2);
    }
}
