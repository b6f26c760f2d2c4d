#pragma once

#include "ensemble/conductor.hpp"
#include "ensemble/performer.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace ensemble::sim {

enum class Scenario : std::uint8_t { Nominal, Performance1Dropout, Performance2 };

const char* scenario_name(Scenario s) noexcept;
std::optional<Scenario> parse_scenario(std::string_view text) noexcept;

struct SimConfig {
    int n_performers = 4;
    int duration_bars = 120;
    double tempo_bpm = 120.0;
    /// Generation latency; drawn uniformly from [freeze_ms, freeze_ms + freeze_spread_ms].
    double freeze_ms = 2000.0;
    double freeze_spread_ms = 0.0;
    /// One-way link latency, uniform jitter on top, and per-message probability
    /// that a send severs the link.
    double latency_ms = 20.0;
    double jitter_ms = 5.0;
    double drop = 0.0;
    std::uint64_t seed = 42;
    Scenario scenario = Scenario::Nominal;
    SinkMode sink_mode = SinkMode::NonBlocking;
    bool auto_fade = false;
    /// Upper bound on the per-engine clock skew, drawn in [-skew, +skew].
    double clock_skew_ms = 250.0;
    /// performance1-dropout: the outage starts at this bar and lasts this long.
    int outage_bar = 64;
    double outage_ms = 4000.0;
    double reconnect_ms = 500.0;
    /// Fault injection: forced stagger offsets for every engine.
    std::vector<int> stagger_offsets;
    /// Unset: default_progression(), default_seed_melody(), and the
    /// scenario's own plan.
    std::optional<ChordProgression> progression;
    std::optional<NoteSequence> seed_melody;
    std::optional<proto::Plan> plan;

    /// Throws ConfigError.
    void validate() const;
};

/// C-G-Am-F, one chord per bar, repeated to cover `bars`.
ChordProgression default_progression(int bars = 256);
/// One bar of quarter notes on the C major triad.
NoteSequence default_seed_melody();
/// The scripted plan of the performance2 scenario.
proto::Plan performance2_plan();
/// RNG seed of engine `index` in a simulation seeded with `seed`.
std::uint64_t engine_seed(std::uint64_t seed, int index) noexcept;

struct LoggedEvent {
    int performer = 0;
    SinkEvent event;
    double emitted_ms = 0.0; ///< true (server) time of emission
};

struct PerformerResume {
    int performer = 0;
    ResumeRecord record;
    double at_ms = 0.0;
    Tick true_tick = 0; ///< server tick at at_ms
};

struct PerformerUnderrun {
    int performer = 0;
    Underrun underrun;
};

struct Outage {
    int performer = 0;
    double severed_ms = 0.0;
    std::optional<double> noticed_ms;
    std::optional<double> resumed_ms;
};

struct Violation {
    std::string name;
    int performer = -1;
    Tick tick = 0;
    std::string detail;
};

struct SimSummary {
    std::size_t events = 0;
    std::size_t note_ons = 0;
    std::size_t note_offs = 0;
    double max_desync_ms = 0.0;
    int stuck_notes = 0;
    int overlapping_freezes = 0;
    int underruns = 0;
    int freezes = 0;
    int forced_offs = 0;
    int resumes = 0;
    int outages = 0;
    int start_messages = 0;
    int volume_ramps = 0;
};

struct SimReport {
    SimConfig config;
    double start_epoch_ms = 0.0;
    TempoMap tempo;
    std::vector<double> engine_epochs;
    int start_messages = 0;
    Tick stop_tick = 0;
    std::vector<LoggedEvent> events;
    std::vector<FreezeRecord> freezes;
    std::vector<PerformerResume> resumes;
    std::vector<PerformerUnderrun> underruns;
    std::vector<Outage> outages;
    std::vector<std::string> server_log;
    int volume_ramps = 0;
    std::vector<Violation> violations;
    SimSummary summary;
};

inline constexpr double kDesyncToleranceMs = 30.0;

/// Runs the whole ensemble on a virtual clock. Throws ConfigError on a bad config.
SimReport run(const SimConfig& config);

/// Re-evaluates every invariant over a finished report.
std::vector<Violation> check(const SimReport& report);
SimSummary summarize(const SimReport& report);

/// Deterministic text: config, server log, event log, records, violations, summary.
std::string format_report(const SimReport& report);

/// A lone engine driven directly on a zero-latency loopback, for comparison
/// with the ensemble log of a one-performer simulation.
std::vector<SinkEvent> run_standalone(const SimConfig& config);

} // namespace ensemble::sim
