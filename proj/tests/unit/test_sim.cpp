#include "ensemble/errors.hpp"
#include "ensemble/sim.hpp"

#include "oracles.hpp"

#include <doctest.h>

#include <algorithm>

using namespace ensemble;
using namespace ensemble::sim;

namespace {

int count(const std::vector<Violation>& vs, const std::string& name)
{
    return static_cast<int>(std::count_if(vs.begin(), vs.end(), [&](const Violation& v) { return v.name == name; }));
}

SimConfig small(int n = 2, int bars = 48)
{
    SimConfig c;
    c.n_performers = n;
    c.duration_bars = bars;
    return c;
}

} // namespace

TEST_CASE("config validation")
{
    SimConfig c;
    CHECK_NOTHROW(c.validate());
    c.duration_bars = 15;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = {};
    c.drop = 1.5;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = {};
    c.n_performers = 0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = {};
    c.stagger_offsets = {0, 0};
    CHECK_THROWS_AS(c.validate(), ConfigError);
    CHECK(parse_scenario("performance1-dropout") == Scenario::Performance1Dropout);
    CHECK_FALSE(parse_scenario("gig").has_value());
}

TEST_CASE("nominal run is clean")
{
    const auto report = run(small(3));
    CHECK(report.violations.empty());
    CHECK(report.start_messages == 1);
    CHECK(report.summary.note_ons == report.summary.note_offs);
    CHECK(report.summary.max_desync_ms <= kDesyncToleranceMs);
    CHECK(report.summary.freezes > 0);
    CHECK(check(report).empty());
}

TEST_CASE("a planted unmatched note_on is one stuck-note")
{
    auto report = run(small());
    REQUIRE(report.violations.empty());
    LoggedEvent extra = report.events.back();
    extra.event.kind = NoteKind::NoteOn;
    extra.event.pitch = 61;
    extra.event.velocity = 80;
    report.events.push_back(extra);
    const auto vs = check(report);
    CHECK(count(vs, "stuck-note") == 1);
}

TEST_CASE("a planted orphan note_off is reported")
{
    auto report = run(small());
    LoggedEvent extra = report.events.back();
    extra.event.kind = NoteKind::NoteOff;
    extra.event.pitch = 1;
    report.events.push_back(extra);
    CHECK(count(check(report), "orphan-note-off") == 1);
}

TEST_CASE("identical offsets with long freezes overlap")
{
    SimConfig c = small(2, 64);
    c.freeze_ms = 4000.0;
    c.stagger_offsets = {3, 3};
    const auto report = run(c);
    CHECK(count(report.violations, "overlapping-freeze") >= 1);

    c.stagger_offsets.clear();
    CHECK(count(run(c).violations, "overlapping-freeze") == 0);
}

TEST_CASE("a planted off-grid resume is caught")
{
    SimConfig c = small();
    c.sink_mode = SinkMode::Blocking;
    auto report = run(c);
    REQUIRE(!report.freezes.empty());
    report.freezes.front().resume_tick += 7;
    CHECK(count(check(report), "reinsertion-grid") == 1);
}

TEST_CASE("one performer matches the standalone engine")
{
    SimConfig c = small(1, 40);
    c.latency_ms = 0.0;
    c.jitter_ms = 0.0;
    c.freeze_ms = 0.0;
    const auto report = run(c);
    CHECK(report.violations.empty());
    std::vector<SinkEvent> from_sim;
    for (const auto& e : report.events)
        from_sim.push_back(e.event);
    const auto alone = run_standalone(c);
    REQUIRE(!alone.empty());
    CHECK(from_sim == alone);
}

TEST_CASE("reports are deterministic and seed-sensitive")
{
    SimConfig c = small(3, 40);
    c.jitter_ms = 10.0;
    c.freeze_spread_ms = 500.0;
    const auto a = format_report(run(c));
    CHECK(a == format_report(run(c)));
    c.seed = 43;
    CHECK(a != format_report(run(c)));
}

TEST_CASE("report layout")
{
    const auto text = format_report(run(small()));
    CHECK(text.rfind("config ", 0) == 0);
    CHECK(text.find("\nevents performer,tick,kind,pitch,velocity,origin,emitted_ms\n") != std::string::npos);
    CHECK(text.find("\nsummary") != std::string::npos);
    CHECK(text.find("\nresult PASS\n") != std::string::npos);
}

TEST_CASE("blocking run pairs every note across freezes")
{
    SimConfig c = small(4, 80);
    c.sink_mode = SinkMode::Blocking;
    const auto report = run(c);
    CHECK(report.violations.empty());
    CHECK(report.summary.forced_offs > 0);
    const auto left = oracle::unpaired(
        report.events, [](const LoggedEvent& e) { return e.event.kind == NoteKind::NoteOn; },
        [](const LoggedEvent& e) { return std::pair{e.performer, e.event.pitch}; });
    CHECK(left.empty());
}

TEST_CASE("dropout scenario halts and resumes")
{
    SimConfig c;
    c.scenario = Scenario::Performance1Dropout;
    const auto report = run(c);
    CHECK(report.violations.empty());
    CHECK(report.outages.size() == 4);
    CHECK(report.resumes.size() >= 4);
    CHECK(report.start_messages == 1);
}

TEST_CASE("performance2 scenario exercises controls")
{
    SimConfig c;
    c.scenario = Scenario::Performance2;
    const auto report = run(c);
    CHECK(report.violations.empty());
    bool manual = false;
    for (const auto& e : report.events)
        manual = manual || e.event.origin == NoteOrigin::Manual;
    CHECK(manual);
    CHECK(report.volume_ramps > 0);
    CHECK(report.tempo.segments().size() == 2);
}

TEST_CASE("lossy links still end with paired notes")
{
    SimConfig c = small(3, 64);
    c.drop = 0.002;
    const auto report = run(c);
    CHECK(count(report.violations, "stuck-note") == 0);
    CHECK(count(report.violations, "orphan-note-off") == 0);
}
