#pragma once

#include "ensemble/music.hpp"

#include <vector>

namespace ensemble {

inline constexpr int kMaxPerformers = 16;

/// Per-performer generation offsets within the 16-bar cycle. Performer i
/// starts generating at bars offset_i + 16k.
class StaggerSchedule {
public:
    /// Arbitrary offsets, each in [0, 16). Used for misconfiguration tests.
    explicit StaggerSchedule(std::vector<int> offsets);

    int n_performers() const noexcept { return static_cast<int>(offsets_.size()); }
    int window_bars() const noexcept { return kWindowBars; }
    const std::vector<int>& offsets() const noexcept { return offsets_; }
    int offset(int performer) const { return offsets_.at(static_cast<std::size_t>(performer)); }

    /// Smallest gap in bars between consecutive offsets, wrapping around the cycle.
    int min_gap_bars() const noexcept;

    friend bool operator==(const StaggerSchedule&, const StaggerSchedule&) = default;

private:
    std::vector<int> offsets_;
};

/// Evenly spaced offsets floor(i * 16 / n). Throws ConfigError unless 1 <= n <= 16.
StaggerSchedule build_schedule(int n_performers);

/// Smallest offset_i + 16k strictly greater than current_bar.
int next_deadline(const StaggerSchedule& s, int performer, int current_bar);

struct FreezeRecord {
    int performer_id = 0;
    Tick freeze_start_tick = 0;
    double freeze_ms = 0.0;
    Tick resume_tick = 0;
    int forced_offs = 0;

    friend bool operator==(const FreezeRecord&, const FreezeRecord&) = default;
};

/// First sixteenth-grid tick at or after the position the transport reaches
/// once `freeze_ms` has elapsed from `freeze_start_tick`.
Tick reinsertion_tick(Tick freeze_start_tick, double freeze_ms, const TransportClock& clock);

struct PruneResult {
    NoteSequence sequence;
    std::vector<int> forced_offs;
};

/// Drops notes starting in [freeze_start, resume) and cuts notes sounding at
/// freeze_start, returning their pitches so the player can release them.
/// Ticks are in the sequence's own time base.
PruneResult prune_frozen_span(const NoteSequence& seq, Tick freeze_start_tick, Tick resume_tick);

/// Running estimate of a performer's generation latency: an exponential
/// moving average with alpha = 0.5 over measured freezes.
class LatencyPredictor {
public:
    explicit LatencyPredictor(double initial_ms = 2000.0, double alpha = 0.5);

    double predict() const noexcept { return estimate_; }
    void observe(double measured_ms);

private:
    double estimate_;
    double alpha_;
};

/// Tick at which a generation for the window starting at `need_bar` should
/// begin: the stagger deadline, pulled earlier when the predicted latency
/// would miss the hand-off, but never before `earliest_bar`.
Tick generation_start_tick(const TempoMap& tempo, int deadline_bar, int need_bar, int earliest_bar,
                           double predicted_latency_ms);

} // namespace ensemble
