#include "ensemble/music.hpp"

#include "ensemble/errors.hpp"
#include "text_util.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace ensemble {

namespace {

constexpr std::array<const char*, 12> kSharpNames = {"C", "C#", "D", "D#", "E", "F", "F#", "G", "G#", "A", "A#", "B"};
constexpr std::array<int, 7> kMajorSteps = {0, 2, 4, 5, 7, 9, 11};
constexpr std::array<int, 7> kMinorSteps = {0, 2, 3, 5, 7, 8, 10};

bool event_less(const NoteEvent& a, const NoteEvent& b)
{
    if (a.onset != b.onset)
        return a.onset < b.onset;
    if (a.pitch != b.pitch)
        return a.pitch < b.pitch;
    return a < b;
}

// Nearest multiple of grid; exact halves round up.
Tick round_to_grid(Tick value, Tick grid)
{
    const Tick base = (value / grid) * grid;
    const Tick rem = value - base;
    return rem * 2 >= grid ? base + grid : base;
}

} // namespace

void validate(const NoteEvent& ev)
{
    if (ev.pitch < 0 || ev.pitch > 127)
        throw std::invalid_argument("pitch out of range: " + std::to_string(ev.pitch));
    if (ev.velocity < 0 || ev.velocity > 127)
        throw std::invalid_argument("velocity out of range: " + std::to_string(ev.velocity));
    if (ev.onset < 0)
        throw std::invalid_argument("negative onset");
    if (ev.duration < 1)
        throw std::invalid_argument("duration must be >= 1 tick");
}

NoteSequence::NoteSequence(int length_bars, std::vector<NoteEvent> events)
    : length_bars_(length_bars)
    , events_(std::move(events))
{
    if (length_bars_ < 1)
        throw std::invalid_argument("sequence length must be at least one bar");
    const Tick end = length_ticks();
    for (const auto& ev : events_) {
        validate(ev);
        if (ev.onset + ev.duration > end)
            throw std::invalid_argument("note at tick " + std::to_string(ev.onset) + " extends past sequence end");
    }
    std::sort(events_.begin(), events_.end(), event_less);
}

Chord parse_chord(std::string_view text)
{
    text = detail::trim(text);
    if (text.empty())
        throw std::invalid_argument("empty chord symbol");
    static constexpr std::array<int, 7> letter_pc = {9, 11, 0, 2, 4, 5, 7}; // A..G
    const char letter = static_cast<char>(std::toupper(static_cast<unsigned char>(text[0])));
    if (letter < 'A' || letter > 'G')
        throw std::invalid_argument("bad chord root in '" + std::string(text) + "'");
    int root = letter_pc[static_cast<std::size_t>(letter - 'A')];
    std::size_t pos = 1;
    if (pos < text.size() && (text[pos] == '#' || text[pos] == 'b')) {
        root += text[pos] == '#' ? 1 : -1;
        ++pos;
    }
    root = (root + 12) % 12;
    const std::string_view quality = text.substr(pos);
    if (quality == "maj" || quality == "M" || quality.empty())
        return Chord{root, ChordQuality::Major};
    if (quality == "min" || quality == "m")
        return Chord{root, ChordQuality::Minor};
    throw std::invalid_argument("unsupported chord quality in '" + std::string(text) + "'");
}

std::string chord_name(const Chord& chord)
{
    return std::string(kSharpNames[static_cast<std::size_t>(chord.root)]) +
           (chord.quality == ChordQuality::Major ? "maj" : "min");
}

std::array<int, 3> chord_tones(const Chord& chord)
{
    const int third = chord.quality == ChordQuality::Major ? 4 : 3;
    return {chord.root, (chord.root + third) % 12, (chord.root + 7) % 12};
}

std::array<int, 7> diatonic_scale(const Chord& chord)
{
    const auto& steps = chord.quality == ChordQuality::Major ? kMajorSteps : kMinorSteps;
    std::array<int, 7> out{};
    for (std::size_t i = 0; i < steps.size(); ++i)
        out[i] = (chord.root + steps[i]) % 12;
    return out;
}

bool in_scale(const Chord& chord, int pitch_class)
{
    const auto scale = diatonic_scale(chord);
    return std::find(scale.begin(), scale.end(), ((pitch_class % 12) + 12) % 12) != scale.end();
}

ChordProgression::ChordProgression()
    : entries_{ProgressionEntry{0, Chord{}}}
{
}

ChordProgression::ChordProgression(std::vector<ProgressionEntry> entries)
    : entries_(std::move(entries))
{
    if (entries_.empty() || entries_.front().start_bar != 0)
        throw std::invalid_argument("chord progression must have an entry at bar 0");
    for (std::size_t i = 0; i < entries_.size(); ++i) {
        const auto& e = entries_[i];
        if (e.chord.root < 0 || e.chord.root > 11)
            throw std::invalid_argument("chord root out of range");
        if (i > 0 && e.start_bar <= entries_[i - 1].start_bar)
            throw std::invalid_argument("progression bars must be strictly increasing");
    }
}

TransportClock make_clock(double tempo_bpm, double epoch_ms)
{
    if (!(tempo_bpm > 0.0) || !std::isfinite(tempo_bpm))
        throw std::invalid_argument("tempo must be positive");
    return TransportClock{tempo_bpm, epoch_ms};
}

TempoMap::TempoMap(TransportClock base)
{
    make_clock(base.tempo_bpm, base.epoch_ms);
    segments_.push_back(Segment{0, base.epoch_ms, base.tempo_bpm});
}

void TempoMap::add_change(int bar, double tempo_bpm)
{
    make_clock(tempo_bpm);
    if (bar < 0)
        throw std::invalid_argument("tempo change before bar 0");
    const Tick at = bar_to_tick(bar);
    if (at < segments_.back().start_tick)
        throw std::invalid_argument("tempo changes must be added in bar order");
    if (at == segments_.back().start_tick) {
        segments_.back().tempo_bpm = tempo_bpm;
        return;
    }
    segments_.push_back(Segment{at, tick_to_ms(at), tempo_bpm});
}

const TempoMap::Segment& TempoMap::segment_for_tick(Tick tick) const noexcept
{
    auto it = std::upper_bound(segments_.begin(), segments_.end(), tick,
                               [](Tick t, const Segment& s) { return t < s.start_tick; });
    return it == segments_.begin() ? segments_.front() : *std::prev(it);
}

double TempoMap::tempo_at(Tick tick) const noexcept
{
    return segment_for_tick(tick).tempo_bpm;
}

double TempoMap::tick_to_ms(Tick tick) const
{
    const Segment& s = segment_for_tick(tick);
    return s.start_ms + static_cast<double>(tick - s.start_tick) * 60000.0 / (s.tempo_bpm * kPpq);
}

Tick TempoMap::ms_to_tick(double ms) const
{
    auto it = std::upper_bound(segments_.begin(), segments_.end(), ms,
                               [](double m, const Segment& s) { return m < s.start_ms; });
    const Segment& s = it == segments_.begin() ? segments_.front() : *std::prev(it);
    Tick t = s.start_tick + static_cast<Tick>(std::floor((ms - s.start_ms) * s.tempo_bpm * kPpq / 60000.0));
    // The floor above can land one tick off near exact tick times; settle on
    // the largest tick whose time does not exceed ms.
    while (tick_to_ms(t + 1) <= ms)
        ++t;
    while (tick_to_ms(t) > ms)
        --t;
    return t;
}

NoteSequence transpose(const NoteSequence& seq, int semitones)
{
    std::vector<NoteEvent> out(seq.events().begin(), seq.events().end());
    for (auto& ev : out)
        ev.pitch = std::clamp(ev.pitch + semitones, 0, 127);
    return NoteSequence(seq.length_bars(), std::move(out));
}

NoteSequence quantize(const NoteSequence& seq, Tick grid_ticks)
{
    if (grid_ticks < 1 || kTicksPerBar % grid_ticks != 0)
        throw InvalidGrid("grid of " + std::to_string(grid_ticks) + " ticks does not divide a bar");
    const Tick end = seq.length_ticks();
    std::vector<NoteEvent> out;
    out.reserve(seq.size());
    for (NoteEvent ev : seq.events()) {
        ev.onset = round_to_grid(ev.onset, grid_ticks);
        if (ev.onset >= end)
            continue; // rounded onto the end of the sequence
        ev.duration = std::max(round_to_grid(ev.duration, grid_ticks), grid_ticks);
        ev.duration = std::min(ev.duration, end - ev.onset);
        out.push_back(ev);
    }
    return NoteSequence(seq.length_bars(), std::move(out));
}

Chord chord_at(const ChordProgression& prog, int bar)
{
    const auto entries = prog.entries();
    auto it = std::upper_bound(entries.begin(), entries.end(), bar,
                               [](int b, const ProgressionEntry& e) { return b < e.start_bar; });
    return it == entries.begin() ? entries.front().chord : std::prev(it)->chord;
}

double tick_to_ms(const TransportClock& clock, Tick tick)
{
    if (tick < 0)
        throw std::domain_error("negative tick");
    return clock.epoch_ms + static_cast<double>(tick) * 60000.0 / (clock.tempo_bpm * kPpq);
}

Tick ms_to_tick(const TransportClock& clock, double ms)
{
    return TempoMap(clock).ms_to_tick(ms);
}

Tick ms_to_tick_delta(const TransportClock& clock, double elapsed_ms)
{
    if (elapsed_ms <= 0.0)
        return 0;
    const double ticks = elapsed_ms * clock.tempo_bpm * kPpq / 60000.0;
    return static_cast<Tick>(std::ceil(ticks - 1e-9));
}

NoteSequence slice_last_bars(const NoteSequence& seq, int n_bars, int end_bar)
{
    if (n_bars < 1)
        throw std::invalid_argument("slice needs at least one bar");
    if (end_bar < n_bars)
        throw std::invalid_argument("slice window starts before bar 0");
    const Tick lo = bar_to_tick(end_bar - n_bars);
    const Tick hi = bar_to_tick(end_bar);
    std::vector<NoteEvent> out;
    for (NoteEvent ev : seq.events()) {
        if (ev.onset < lo || ev.onset >= hi)
            continue;
        ev.duration = std::min(ev.duration, hi - ev.onset);
        ev.onset -= lo;
        out.push_back(ev);
    }
    return NoteSequence(n_bars, std::move(out));
}

ChordProgression parse_progression(std::string_view text)
{
    std::vector<ProgressionEntry> entries;
    int line_no = 0;
    for (std::string_view line : detail::split_lines(text)) {
        ++line_no;
        line = detail::strip_comment(line);
        if (line.empty())
            continue;
        const auto colon = line.find(':');
        if (colon == std::string_view::npos)
            throw ParseError("expected '<bar>:<chord>'", line_no);
        try {
            const int bar = detail::parse_int(line.substr(0, colon));
            entries.push_back(ProgressionEntry{bar, parse_chord(line.substr(colon + 1))});
        } catch (const std::invalid_argument& e) {
            throw ParseError(e.what(), line_no);
        }
    }
    try {
        return ChordProgression(std::move(entries));
    } catch (const std::invalid_argument& e) {
        throw ParseError(e.what(), 0);
    }
}

std::string format_progression(const ChordProgression& prog)
{
    std::string out;
    for (const auto& e : prog.entries())
        out += std::to_string(e.start_bar) + ":" + chord_name(e.chord) + "\n";
    return out;
}

NoteSequence parse_sequence(std::string_view text)
{
    int bars = -1;
    std::vector<NoteEvent> events;
    int line_no = 0;
    for (std::string_view line : detail::split_lines(text)) {
        ++line_no;
        line = detail::strip_comment(line);
        if (line.empty())
            continue;
        try {
            if (bars < 0) {
                // bars=<n> ppq=480
                int ppq = -1;
                for (auto field : detail::split(line, ' ')) {
                    field = detail::trim(field);
                    if (field.empty())
                        continue;
                    if (field.starts_with("bars="))
                        bars = detail::parse_int(field.substr(5));
                    else if (field.starts_with("ppq="))
                        ppq = detail::parse_int(field.substr(4));
                    else
                        throw std::invalid_argument("unexpected header field '" + std::string(field) + "'");
                }
                if (bars < 1)
                    throw std::invalid_argument("header needs bars=<n>");
                if (ppq != kPpq)
                    throw std::invalid_argument("only ppq=480 is supported");
                continue;
            }
            const auto parts = detail::split(line, ',');
            if (parts.size() != 4)
                throw std::invalid_argument("expected onset,duration,pitch,velocity");
            NoteEvent ev;
            ev.onset = detail::parse_int64(parts[0]);
            ev.duration = detail::parse_int64(parts[1]);
            ev.pitch = detail::parse_int(parts[2]);
            ev.velocity = detail::parse_int(parts[3]);
            validate(ev);
            events.push_back(ev);
        } catch (const std::invalid_argument& e) {
            throw ParseError(e.what(), line_no);
        }
    }
    if (bars < 0)
        throw ParseError("missing 'bars=<n> ppq=480' header", 0);
    try {
        return NoteSequence(bars, std::move(events));
    } catch (const std::invalid_argument& e) {
        throw ParseError(e.what(), 0);
    }
}

std::string format_sequence(const NoteSequence& seq)
{
    std::ostringstream os;
    os << "bars=" << seq.length_bars() << " ppq=" << kPpq << "\n";
    for (const auto& ev : seq.events())
        os << ev.onset << ',' << ev.duration << ',' << ev.pitch << ',' << ev.velocity << "\n";
    return os.str();
}

std::string read_text_file(const std::string& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw std::runtime_error("cannot open " + path);
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

} // namespace ensemble
