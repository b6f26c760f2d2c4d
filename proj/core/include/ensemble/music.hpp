#pragma once

#include <array>
#include <compare>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace ensemble {

using Tick = std::int64_t;

inline constexpr int kPpq = 480;
inline constexpr int kBeatsPerBar = 4;
inline constexpr Tick kTicksPerBar = Tick{kPpq} * kBeatsPerBar;
inline constexpr Tick kSixteenthTicks = kPpq / 4;
inline constexpr int kWindowBars = 16;
inline constexpr Tick kWindowTicks = kTicksPerBar * kWindowBars;

constexpr Tick bar_to_tick(std::int64_t bar) noexcept { return bar * kTicksPerBar; }

/// Floor division of a (possibly negative) tick by the bar length.
constexpr std::int64_t tick_to_bar(Tick tick) noexcept
{
    return tick >= 0 ? tick / kTicksPerBar : -((-tick + kTicksPerBar - 1) / kTicksPerBar);
}

/// Smallest multiple of `grid` that is >= tick.
constexpr Tick ceil_to_grid(Tick tick, Tick grid) noexcept
{
    const Tick r = ((tick % grid) + grid) % grid;
    return r == 0 ? tick : tick + (grid - r);
}

struct NoteEvent {
    int pitch = 60;
    Tick onset = 0;
    Tick duration = 1;
    int velocity = 96;

    friend auto operator<=>(const NoteEvent&, const NoteEvent&) = default;
};

/// Throws std::invalid_argument if a field is out of range.
void validate(const NoteEvent& ev);

/// Melody on the tick grid. Events are kept sorted by onset, then pitch,
/// and never extend past the end of the sequence.
class NoteSequence {
public:
    NoteSequence() = default;
    explicit NoteSequence(int length_bars, std::vector<NoteEvent> events = {});

    int length_bars() const noexcept { return length_bars_; }
    Tick length_ticks() const noexcept { return bar_to_tick(length_bars_); }
    std::span<const NoteEvent> events() const noexcept { return events_; }
    bool empty() const noexcept { return events_.empty(); }
    std::size_t size() const noexcept { return events_.size(); }

    friend bool operator==(const NoteSequence&, const NoteSequence&) = default;

private:
    int length_bars_ = 1;
    std::vector<NoteEvent> events_;
};

enum class ChordQuality : std::uint8_t { Major, Minor };

struct Chord {
    int root = 0; ///< pitch class 0..11
    ChordQuality quality = ChordQuality::Major;

    friend bool operator==(const Chord&, const Chord&) = default;
};

/// Parses "Cmaj", "F#min", "Bbmaj".
Chord parse_chord(std::string_view text);
std::string chord_name(const Chord& chord);

/// Pitch classes of the triad (root, third, fifth).
std::array<int, 3> chord_tones(const Chord& chord);
/// Seven pitch classes of the diatonic scale on the chord root
/// (major scale for major chords, natural minor for minor chords).
std::array<int, 7> diatonic_scale(const Chord& chord);
bool in_scale(const Chord& chord, int pitch_class);

struct ProgressionEntry {
    int start_bar = 0;
    Chord chord;

    friend bool operator==(const ProgressionEntry&, const ProgressionEntry&) = default;
};

class ChordProgression {
public:
    ChordProgression();
    explicit ChordProgression(std::vector<ProgressionEntry> entries);

    std::span<const ProgressionEntry> entries() const noexcept { return entries_; }

    friend bool operator==(const ChordProgression&, const ChordProgression&) = default;

private:
    std::vector<ProgressionEntry> entries_;
};

/// Maps wall-clock milliseconds on the server clock to ticks at a single tempo.
struct TransportClock {
    double tempo_bpm = 120.0;
    double epoch_ms = 0.0;

    double ms_per_tick() const noexcept { return 60000.0 / (tempo_bpm * kPpq); }

    friend bool operator==(const TransportClock&, const TransportClock&) = default;
};

TransportClock make_clock(double tempo_bpm, double epoch_ms = 0.0);

/// Piecewise-constant tempo: a base clock plus step changes on bar lines.
class TempoMap {
public:
    struct Segment {
        Tick start_tick;
        double start_ms;
        double tempo_bpm;
    };

    TempoMap() : TempoMap(TransportClock{}) {}
    explicit TempoMap(TransportClock base);

    /// Adds a step change taking effect at `bar`. Changes must be added in
    /// non-decreasing bar order; a change at the same bar as the last one replaces it.
    void add_change(int bar, double tempo_bpm);

    double tick_to_ms(Tick tick) const;
    /// Largest tick whose time is <= ms. Negative before the epoch.
    Tick ms_to_tick(double ms) const;
    double tempo_at(Tick tick) const noexcept;
    /// Single-tempo clock in effect at `tick` (epoch is the map epoch).
    TransportClock clock_at(Tick tick) const noexcept { return {tempo_at(tick), epoch_ms()}; }
    double epoch_ms() const noexcept { return segments_.front().start_ms; }
    double base_tempo() const noexcept { return segments_.front().tempo_bpm; }
    std::span<const Segment> segments() const noexcept { return segments_; }

private:
    const Segment& segment_for_tick(Tick tick) const noexcept;
    std::vector<Segment> segments_;
};

NoteSequence transpose(const NoteSequence& seq, int semitones);
NoteSequence quantize(const NoteSequence& seq, Tick grid_ticks);
Chord chord_at(const ChordProgression& prog, int bar);
double tick_to_ms(const TransportClock& clock, Tick tick);
Tick ms_to_tick(const TransportClock& clock, double ms);
/// Elapsed ticks covering `elapsed_ms` at the clock tempo, rounded up.
Tick ms_to_tick_delta(const TransportClock& clock, double elapsed_ms);
NoteSequence slice_last_bars(const NoteSequence& seq, int n_bars, int end_bar);

// Text formats.
ChordProgression parse_progression(std::string_view text);
std::string format_progression(const ChordProgression& prog);
NoteSequence parse_sequence(std::string_view text);
std::string format_sequence(const NoteSequence& seq);

std::string read_text_file(const std::string& path);

} // namespace ensemble
