// Prints one PASS or FAIL line per acceptance criterion; exits nonzero on any FAIL.

#include "ensemble/generator.hpp"
#include "ensemble/protocol.hpp"
#include "ensemble/sim.hpp"
#include "ensemble/stagger.hpp"

#include "oracles.hpp"
#include "random_messages.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <map>
#include <queue>
#include <random>
#include <set>
#include <string>
#include <vector>

using namespace ensemble;

namespace {

int failures = 0;

void verdict(const char* name, bool ok, const std::string& detail)
{
    std::printf("%s %s: %s\n", ok ? "PASS" : "FAIL", name, detail.c_str());
    std::fflush(stdout);
    if (!ok)
        ++failures;
}

std::string str(double v, int digits = 3)
{
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", digits, v);
    return buf;
}

double bar_ms(double bpm)
{
    return 4.0 * 60000.0 / bpm;
}

/// Pairs of freezes from different performers whose nominal wall intervals intersect.
int overlapping_freezes(const sim::SimReport& r)
{
    int n = 0;
    const auto& fr = r.freezes;
    for (std::size_t a = 0; a < fr.size(); ++a) {
        const double a0 = r.tempo.tick_to_ms(fr[a].freeze_start_tick);
        for (std::size_t b = a + 1; b < fr.size(); ++b) {
            if (fr[a].performer_id == fr[b].performer_id)
                continue;
            const double b0 = r.tempo.tick_to_ms(fr[b].freeze_start_tick);
            if (a0 < b0 + fr[b].freeze_ms && b0 < a0 + fr[a].freeze_ms)
                ++n;
        }
    }
    return n;
}

int unpaired_notes(const sim::SimReport& r)
{
    const auto left = oracle::unpaired(
        r.events, [](const sim::LoggedEvent& e) { return e.event.kind == NoteKind::NoteOn; },
        [](const sim::LoggedEvent& e) { return std::pair{e.performer, e.event.pitch}; });
    int n = 0;
    for (const auto& [key, balance] : left)
        n += std::abs(balance);
    return n;
}

double worst_desync(const sim::SimReport& r)
{
    double worst = 0.0;
    for (const auto& e : r.events)
        worst = std::max(worst, std::abs(e.emitted_ms - r.tempo.tick_to_ms(e.event.at_tick)));
    return worst;
}

void nominal()
{
    sim::SimConfig c;
    c.n_performers = 4;
    c.duration_bars = 120;
    c.tempo_bpm = 120.0;
    c.freeze_ms = 2000.0;
    c.seed = 42;
    const auto t0 = std::chrono::steady_clock::now();
    const auto r = sim::run(c);
    const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const int stuck = unpaired_notes(r);
    const int overlaps = overlapping_freezes(r);
    const double desync = worst_desync(r);
    const bool ok = r.violations.empty() && stuck == 0 && overlaps == 0 && desync <= sim::kDesyncToleranceMs &&
                    wall < 10.0 && r.summary.note_ons > 0;
    verdict("nominal-4-performers", ok,
            "violations=" + std::to_string(r.violations.size()) + " unpaired=" + std::to_string(stuck) +
                " overlaps=" + std::to_string(overlaps) + " max_desync_ms=" + str(desync) + " wall_s=" + str(wall) +
                " notes=" + std::to_string(r.summary.note_ons));
}

void stagger_sweep()
{
    int configs = 0;
    int overlaps = 0;
    int freezes = 0;
    for (const int n : {2, 3, 4, 6, 8}) {
        for (const double tempo : {60.0, 120.0, 180.0}) {
            for (const double freeze : {500.0, 1000.0, 2000.0, 4000.0}) {
                if (freeze > (16.0 / n) * bar_ms(tempo))
                    continue;
                for (const auto mode : {SinkMode::NonBlocking, SinkMode::Blocking}) {
                    sim::SimConfig c;
                    c.n_performers = n;
                    c.duration_bars = 64;
                    c.tempo_bpm = tempo;
                    c.freeze_ms = freeze;
                    c.sink_mode = mode;
                    c.seed = static_cast<std::uint64_t>(configs + 1);
                    const auto r = sim::run(c);
                    ++configs;
                    freezes += static_cast<int>(r.freezes.size());
                    const int mine = overlapping_freezes(r);
                    const auto theirs = std::count_if(r.violations.begin(), r.violations.end(),
                                                      [](const sim::Violation& v) { return v.name == "overlapping-freeze"; });
                    overlaps += mine + static_cast<int>(theirs);
                }
            }
        }
    }
    verdict("stagger-sweep", overlaps == 0 && configs > 0 && freezes > 0,
            "runs=" + std::to_string(configs) + " freezes=" + std::to_string(freezes) +
                " overlapping=" + std::to_string(overlaps));
}

void reinsertion()
{
    const Tick example = reinsertion_tick(1000, 2300.0, make_clock(120.0));
    const auto scanned = oracle::reinsertion_scan(1000, 23000, 120);
    std::mt19937_64 rng(7);
    int mismatches = 0;
    for (int i = 0; i < 1000; ++i) {
        const auto start = std::uniform_int_distribution<std::int64_t>(0, 200'000)(rng);
        const auto tenths = std::uniform_int_distribution<std::int64_t>(0, 100'000)(rng);
        const auto bpm = std::uniform_int_distribution<std::int64_t>(20, 300)(rng);
        const Tick got = reinsertion_tick(start, static_cast<double>(tenths) / 10.0, make_clock(static_cast<double>(bpm)));
        if (got != oracle::reinsertion_scan(start, tenths, bpm))
            ++mismatches;
    }
    verdict("reinsertion-arithmetic", example == 3240 && scanned == 3240 && mismatches == 0,
            "example=" + std::to_string(example) + " scan=" + std::to_string(scanned) +
                " random_mismatches=" + std::to_string(mismatches) + "/1000");
}

void temperature()
{
    const std::vector<double> pair{0.8, 0.2};
    const auto ex = apply_temperature(pair, Temperature(0.5));
    const bool example = std::abs(ex[0] - 0.9412) <= 1e-4 && std::abs(ex[1] - 0.0588) <= 1e-4;

    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::uniform_real_distribution<double> temp(Temperature::kMin, Temperature::kMax);
    int order_breaks = 0;
    int oracle_breaks = 0;
    for (int i = 0; i < 10'000; ++i) {
        const std::size_t k = 2 + static_cast<std::size_t>(rng() % 13);
        std::vector<double> p(k);
        double total = 0.0;
        for (auto& v : p)
            total += (v = unit(rng) + 1e-3);
        for (auto& v : p)
            v /= total;
        const double t = temp(rng);
        const auto q = apply_temperature(p, Temperature(t));
        const auto ref = oracle::temperature_direct(p, t);
        const auto argmax = std::max_element(p.begin(), p.end()) - p.begin();
        bool ok = std::max_element(q.begin(), q.end()) - q.begin() == argmax;
        for (std::size_t a = 0; a < k && ok; ++a)
            for (std::size_t b = 0; b < k && ok; ++b)
                if (p[a] > p[b] && q[a] < q[b])
                    ok = false;
        order_breaks += ok ? 0 : 1;
        for (std::size_t a = 0; a < k; ++a)
            if (std::abs(q[a] - ref[a]) > 1e-9)
                ++oracle_breaks;
    }

    // Concentration at the floor; runners-up kept at most 0.8 of the maximum.
    int diffuse = 0;
    double least = 1.0;
    for (int i = 0; i < 1000; ++i) {
        const std::size_t k = 2 + static_cast<std::size_t>(rng() % 13);
        std::vector<double> p(k);
        p[0] = 1.0;
        for (std::size_t j = 1; j < k; ++j)
            p[j] = 0.8 * unit(rng) + 1e-6;
        std::shuffle(p.begin(), p.end(), rng);
        const auto argmax = std::max_element(p.begin(), p.end()) - p.begin();
        const auto q = apply_temperature(p, Temperature(0.01));
        least = std::min(least, q[static_cast<std::size_t>(argmax)]);
        if (q[static_cast<std::size_t>(argmax)] < 1.0 - 1e-6)
            ++diffuse;
    }
    const double pair_mass = apply_temperature(pair, Temperature(0.01))[0];

    verdict("temperature", example && order_breaks == 0 && oracle_breaks == 0 && diffuse == 0 && pair_mass >= 1.0 - 1e-6,
            "example=[" + str(ex[0], 4) + "," + str(ex[1], 4) + "] order_breaks=" + std::to_string(order_breaks) +
                "/10000 oracle_mismatches=" + std::to_string(oracle_breaks) + " min_argmax_mass_T0.01=" +
                str(std::min(least, pair_mass), 9));
}

/// Chord-local diatonic pitch classes: the major or natural minor scale on the chord root.
std::set<int> scale_of(const Chord& chord)
{
    static const int major[] = {0, 2, 4, 5, 7, 9, 11};
    static const int minor[] = {0, 2, 3, 5, 7, 8, 10};
    std::set<int> out;
    for (int step : chord.quality == ChordQuality::Major ? major : minor)
        out.insert((chord.root + step) % 12);
    return out;
}

void generator()
{
    const auto prog = sim::default_progression(64);
    const auto model = GeneratorModel::defaults(0);
    const auto seed_melody = sim::default_seed_melody();
    int foreign = 0;
    int off_grid = 0;
    int bad_length = 0;
    int notes = 0;
    std::vector<double> spread;
    for (const double t : {0.1, 1.0, 2.0}) {
        double distinct = 0.0;
        int bars = 0;
        for (std::uint64_t seed = 0; seed < 100; ++seed) {
            const auto out = generate_continuation(model, seed_melody, prog, 1, Temperature(t), LatencyModel::fixed(0.0),
                                                   seed);
            const auto& seq = out.sequence;
            if (seq.length_bars() != 16)
                ++bad_length;
            std::vector<std::set<int>> per_bar(16);
            for (const auto& ev : seq.events()) {
                ++notes;
                const int bar = static_cast<int>(ev.onset / kTicksPerBar);
                if (ev.onset % kSixteenthTicks != 0)
                    ++off_grid;
                if (ev.onset + ev.duration > bar_to_tick(16) || bar >= 16) {
                    ++bad_length;
                    continue;
                }
                // Chord in force when the note starts.
                static const Chord cycle[] = {{0, ChordQuality::Major}, {7, ChordQuality::Major},
                                              {9, ChordQuality::Minor}, {5, ChordQuality::Major}};
                if (!scale_of(cycle[(1 + bar) % 4]).count(ev.pitch % 12))
                    ++foreign;
                per_bar[static_cast<std::size_t>(bar)].insert(ev.pitch % 12);
            }
            for (const auto& s : per_bar)
                distinct += static_cast<double>(s.size());
            bars += 16;
        }
        spread.push_back(distinct / bars);
    }
    const bool monotone = spread[0] <= spread[1] && spread[1] <= spread[2];
    verdict("generator-musicality", foreign == 0 && off_grid == 0 && bad_length == 0 && notes > 0 && monotone,
            "notes=" + std::to_string(notes) + " non_diatonic=" + std::to_string(foreign) +
                " off_grid=" + std::to_string(off_grid) + " bad_length=" + std::to_string(bad_length) +
                " distinct_pc_per_bar=" + str(spread[0]) + "," + str(spread[1]) + "," + str(spread[2]));
}

void protocol()
{
    using namespace proto;
    testgen::MessageFactory factory(2024);
    int broken = 0;
    std::map<std::size_t, Message> by_type;
    for (int i = 0; i < 20'000; ++i) {
        const auto m = factory.next();
        by_type.emplace(m.index(), m);
        try {
            if (!(decode(encode(m)) == m))
                ++broken;
        } catch (const std::exception&) {
            ++broken;
        }
    }

    // Explore every state reachable from Connected under every message type and ModelLoaded.
    std::set<HandshakeState> seen{HandshakeState::Connected};
    std::queue<HandshakeState> todo;
    todo.push(HandshakeState::Connected);
    int bad_entries = 0;
    while (!todo.empty()) {
        const auto s = todo.front();
        todo.pop();
        std::vector<HandshakeStep> steps;
        for (const auto& [idx, m] : by_type)
            steps.push_back(handshake_step(s, m));
        steps.push_back(handshake_step(s, ModelLoaded{}));
        for (const auto& step : steps) {
            if (step.state == HandshakeState::Running && s != HandshakeState::Running && s != HandshakeState::ModelReady)
                ++bad_entries;
            if (seen.insert(step.state).second)
                todo.push(step.state);
        }
    }
    const bool running = seen.count(HandshakeState::Running) > 0;

    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> delay(0.0, 200.0);
    std::uniform_real_distribution<double> offset(-1e6, 1e6);
    double symmetric_err = 0.0;
    int asym_breaks = 0;
    for (int i = 0; i < 1000; ++i) {
        const double truth = std::round(offset(rng));
        const double d = std::round(delay(rng));
        const double a = std::round(delay(rng));
        std::vector<ClockSample> sym;
        std::vector<ClockSample> asym;
        for (int k = 0; k < 5; ++k) {
            const double now = 1000.0 * k;
            const auto s = oracle::ping(now, truth, d, d);
            sym.push_back({s.send, s.server, s.recv});
            const auto u = oracle::ping(now, truth, d, d + a);
            asym.push_back({u.send, u.server, u.recv});
        }
        symmetric_err = std::max(symmetric_err, std::abs(estimate_offset(sym).offset_ms - truth));
        if (std::abs(estimate_offset(asym).offset_ms - truth) > a / 2.0 + 1e-9)
            ++asym_breaks;
    }

    verdict("protocol", broken == 0 && by_type.size() == std::variant_size_v<Message> && running && bad_entries == 0 &&
                            symmetric_err == 0.0 && asym_breaks == 0,
            "round_trip_failures=" + std::to_string(broken) + "/20000 types=" + std::to_string(by_type.size()) +
                " states=" + std::to_string(seen.size()) + " running_not_via_model_ready=" +
                std::to_string(bad_entries) + " symmetric_err_ms=" + str(symmetric_err, 9) +
                " asymmetric_over_half=" + std::to_string(asym_breaks));
}

void dropout()
{
    int late = 0;
    int off_grid = 0;
    int post_desync = 0;
    int resumes = 0;
    int outages = 0;
    int violations = 0;
    for (const auto mode : {SinkMode::NonBlocking, SinkMode::Blocking}) {
        sim::SimConfig c;
        c.scenario = sim::Scenario::Performance1Dropout;
        c.sink_mode = mode;
        const auto r = sim::run(c);
        violations += static_cast<int>(r.violations.size());
        const double sixteenth_ms = 60000.0 / (c.tempo_bpm * 4.0);
        for (const auto& o : r.outages) {
            ++outages;
            if (!o.resumed_ms) {
                ++late;
                continue;
            }
            for (const auto& e : r.events) {
                if (e.performer != o.performer)
                    continue;
                if (e.emitted_ms > o.severed_ms + sixteenth_ms && e.emitted_ms < *o.resumed_ms)
                    ++late;
                if (e.emitted_ms >= *o.resumed_ms &&
                    std::abs(e.emitted_ms - r.tempo.tick_to_ms(e.event.at_tick)) > sim::kDesyncToleranceMs)
                    ++post_desync;
            }
        }
        for (const auto& res : r.resumes) {
            ++resumes;
            if (res.record.resume_tick % kSixteenthTicks != 0)
                ++off_grid;
        }
    }
    verdict("connection-loss-rejoin", outages == 8 && resumes >= 8 && late == 0 && off_grid == 0 && post_desync == 0 &&
                                          violations == 0,
            "outages=" + std::to_string(outages) + " resumes=" + std::to_string(resumes) + " emitted_while_down=" +
                std::to_string(late) + " off_grid_resumes=" + std::to_string(off_grid) +
                " post_rejoin_desync=" + std::to_string(post_desync) + " violations=" + std::to_string(violations));
}

void stuck_notes()
{
    int forced = 0;
    int unpaired = 0;
    int runs = 0;
    for (const std::uint64_t seed : {42u, 7u, 99u}) {
        sim::SimConfig c;
        c.sink_mode = SinkMode::Blocking;
        c.seed = seed;
        c.freeze_spread_ms = 1000.0;
        const auto r = sim::run(c);
        ++runs;
        for (const auto& f : r.freezes)
            forced += f.forced_offs;
        unpaired += unpaired_notes(r);
    }
    verdict("blocking-stuck-notes", forced > 0 && unpaired == 0,
            "runs=" + std::to_string(runs) + " notes_cut_by_freezes=" + std::to_string(forced) +
                " unpaired=" + std::to_string(unpaired));
}

void determinism()
{
    std::vector<sim::SimConfig> configs(5);
    configs[1].sink_mode = SinkMode::Blocking;
    configs[1].jitter_ms = 15.0;
    configs[2].scenario = sim::Scenario::Performance1Dropout;
    configs[3].scenario = sim::Scenario::Performance2;
    configs[4].n_performers = 6;
    configs[4].drop = 0.001;
    configs[4].freeze_spread_ms = 800.0;
    configs[4].seed = 1234;
    int differ = 0;
    std::size_t bytes = 0;
    for (const auto& c : configs) {
        const auto a = sim::format_report(sim::run(c));
        const auto b = sim::format_report(sim::run(c));
        bytes += a.size();
        if (a != b)
            ++differ;
    }
    verdict("determinism", differ == 0, "configs=" + std::to_string(configs.size()) + " differing=" +
                                            std::to_string(differ) + " report_bytes=" + std::to_string(bytes));
}

} // namespace

int main()
{
    spdlog::set_level(spdlog::level::err);
    nominal();
    stagger_sweep();
    reinsertion();
    temperature();
    generator();
    protocol();
    dropout();
    stuck_notes();
    determinism();
    return failures == 0 ? 0 : 1;
}
