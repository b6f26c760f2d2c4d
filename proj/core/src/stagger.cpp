#include "ensemble/stagger.hpp"

#include "ensemble/errors.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace ensemble {

StaggerSchedule::StaggerSchedule(std::vector<int> offsets)
    : offsets_(std::move(offsets))
{
    if (offsets_.empty() || static_cast<int>(offsets_.size()) > kMaxPerformers)
        throw ConfigError("stagger schedule needs 1..16 performers");
    for (int o : offsets_) {
        if (o < 0 || o >= kWindowBars)
            throw ConfigError("stagger offset must lie in [0, 16)");
    }
}

int StaggerSchedule::min_gap_bars() const noexcept
{
    std::vector<int> sorted = offsets_;
    std::sort(sorted.begin(), sorted.end());
    int gap = kWindowBars - sorted.back() + sorted.front();
    for (std::size_t i = 1; i < sorted.size(); ++i)
        gap = std::min(gap, sorted[i] - sorted[i - 1]);
    return gap;
}

StaggerSchedule build_schedule(int n_performers)
{
    if (n_performers < 1 || n_performers > kMaxPerformers)
        throw ConfigError("performer count must be within 1..16, got " + std::to_string(n_performers));
    std::vector<int> offsets;
    offsets.reserve(static_cast<std::size_t>(n_performers));
    for (int i = 0; i < n_performers; ++i)
        offsets.push_back(i * kWindowBars / n_performers);
    return StaggerSchedule(std::move(offsets));
}

int next_deadline(const StaggerSchedule& s, int performer, int current_bar)
{
    const int offset = s.offset(performer);
    if (current_bar < offset)
        return offset;
    const int k = (current_bar - offset) / kWindowBars + 1;
    return offset + k * kWindowBars;
}

Tick reinsertion_tick(Tick freeze_start_tick, double freeze_ms, const TransportClock& clock)
{
    if (freeze_start_tick < 0 || freeze_ms < 0.0)
        throw std::invalid_argument("reinsertion inputs must be non-negative");
    return ceil_to_grid(freeze_start_tick + ms_to_tick_delta(clock, freeze_ms), kSixteenthTicks);
}

PruneResult prune_frozen_span(const NoteSequence& seq, Tick freeze_start_tick, Tick resume_tick)
{
    if (resume_tick < freeze_start_tick)
        throw std::invalid_argument("resume tick precedes freeze start");
    PruneResult result{seq, {}};
    if (resume_tick == freeze_start_tick)
        return result;

    std::vector<NoteEvent> kept;
    kept.reserve(seq.size());
    for (NoteEvent ev : seq.events()) {
        if (ev.onset >= freeze_start_tick && ev.onset < resume_tick)
            continue;
        if (ev.onset < freeze_start_tick && ev.onset + ev.duration > freeze_start_tick) {
            ev.duration = freeze_start_tick - ev.onset;
            result.forced_offs.push_back(ev.pitch);
        }
        kept.push_back(ev);
    }
    result.sequence = NoteSequence(seq.length_bars(), std::move(kept));
    return result;
}

LatencyPredictor::LatencyPredictor(double initial_ms, double alpha)
    : estimate_(initial_ms)
    , alpha_(alpha)
{
    if (!(alpha > 0.0 && alpha <= 1.0))
        throw ConfigError("EMA alpha must be in (0, 1]");
}

void LatencyPredictor::observe(double measured_ms)
{
    estimate_ = alpha_ * measured_ms + (1.0 - alpha_) * estimate_;
}

Tick generation_start_tick(const TempoMap& tempo, int deadline_bar, int need_bar, int earliest_bar,
                           double predicted_latency_ms)
{
    const Tick deadline = bar_to_tick(deadline_bar);
    const double need_ms = tempo.tick_to_ms(bar_to_tick(need_bar));
    // First tick whose time leaves the predicted latency before the hand-off.
    const Tick pre_start = tempo.ms_to_tick(need_ms - std::max(predicted_latency_ms, 0.0));
    return std::max(std::min(deadline, pre_start), bar_to_tick(earliest_bar));
}

} // namespace ensemble
