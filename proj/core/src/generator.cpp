#include "ensemble/generator.hpp"

#include "ensemble/errors.hpp"
#include "text_util.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <mutex>
#include <set>
#include <sstream>
#include <stdexcept>

namespace ensemble {

namespace {

void warn_fallback(ChordQuality quality, Symbol prev, const char* why)
{
    static std::mutex mu;
    static std::set<std::pair<int, int>> seen;
    std::lock_guard lock(mu);
    if (seen.insert({static_cast<int>(quality), prev}).second) {
        spdlog::warn("generator fallback quality={} prev={} reason={}",
                     quality == ChordQuality::Major ? "major" : "minor", symbol_name(prev), why);
    }
}

void validate_row(const WeightRow& row)
{
    bool positive = false;
    for (double w : row) {
        if (!std::isfinite(w) || w < 0.0)
            throw ConfigError("model weights must be finite and non-negative");
        positive = positive || w > 0.0;
    }
    if (!positive)
        throw ConfigError("model row has no positive weight");
}

// Pitch with the given class inside the octave band [center-6, center+5],
// shifted to stay within MIDI range.
int band_pitch(int pitch_class, int center)
{
    const int lo = std::clamp(center - 6, 0, 116);
    const int offset = ((pitch_class - lo) % 12 + 12) % 12;
    return lo + offset;
}

const char* quality_name(ChordQuality q) { return q == ChordQuality::Major ? "major" : "minor"; }

} // namespace

std::string symbol_name(Symbol s)
{
    if (s == kRestSymbol)
        return "rest";
    if (s == kHoldSymbol)
        return "hold";
    return std::to_string(s);
}

Symbol parse_symbol(std::string_view text)
{
    text = detail::trim(text);
    if (text == "rest")
        return kRestSymbol;
    if (text == "hold")
        return kHoldSymbol;
    const int v = detail::parse_int(text);
    if (v < 0 || v > 11)
        throw std::invalid_argument("symbol out of range: " + std::string(text));
    return v;
}

Temperature::Temperature(double value)
    : value_(value)
{
    if (!valid(value))
        throw std::out_of_range("temperature must lie in [0.01, 4.0]");
}

std::vector<double> apply_temperature(std::span<const double> dist, Temperature t)
{
    double max_p = 0.0;
    for (double p : dist) {
        if (!std::isfinite(p) || p < 0.0)
            throw DegenerateDistribution("probabilities must be finite and non-negative");
        max_p = std::max(max_p, p);
    }
    if (max_p <= 0.0)
        throw DegenerateDistribution("distribution has no positive mass");

    const double inv_t = 1.0 / t.value();
    const double log_max = std::log(max_p);
    std::vector<double> out(dist.size(), 0.0);
    double total = 0.0;
    for (std::size_t i = 0; i < dist.size(); ++i) {
        if (dist[i] > 0.0) {
            out[i] = std::exp((std::log(dist[i]) - log_max) * inv_t);
            total += out[i];
        }
    }
    for (double& v : out)
        v /= total;
    return out;
}

std::uint64_t splitmix64(std::uint64_t x) noexcept
{
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

std::size_t Rng::pick(std::span<const double> weights)
{
    double total = 0.0;
    for (double w : weights)
        total += w;
    if (!(total > 0.0))
        throw DegenerateDistribution("cannot sample from zero weights");
    const double u = uniform01() * total;
    double acc = 0.0;
    std::size_t last_positive = 0;
    for (std::size_t i = 0; i < weights.size(); ++i) {
        if (weights[i] <= 0.0)
            continue;
        acc += weights[i];
        last_positive = i;
        if (u < acc)
            return i;
    }
    return last_positive;
}

WeightRow GeneratorModel::default_row(ChordQuality quality)
{
    WeightRow row{};
    const Chord rooted{0, quality};
    const auto tones = chord_tones(rooted);
    for (int slot = 0; slot < 12; ++slot) {
        if (std::find(tones.begin(), tones.end(), slot) != tones.end())
            row[static_cast<std::size_t>(slot)] = 4.0;
        else if (in_scale(rooted, slot))
            row[static_cast<std::size_t>(slot)] = 2.0;
    }
    row[kRestSymbol] = 1.0;
    row[kHoldSymbol] = 3.0;
    return row;
}

GeneratorModel GeneratorModel::defaults(std::uint64_t rng_seed)
{
    std::map<RowKey, WeightRow> rows;
    for (ChordQuality q : {ChordQuality::Major, ChordQuality::Minor})
        for (Symbol prev = 0; prev <= kRestSymbol; ++prev)
            rows[RowKey{q, prev}] = default_row(q);
    return GeneratorModel(std::move(rows), rng_seed);
}

GeneratorModel::GeneratorModel(std::map<RowKey, WeightRow> rows, std::uint64_t rng_seed, int velocity)
    : rows_(std::move(rows))
    , rng_seed_(rng_seed)
    , velocity_(velocity)
{
    if (velocity_ < 1 || velocity_ > 127)
        throw ConfigError("model velocity must be in 1..127");
    for (const auto& [key, row] : rows_) {
        if (key.prev < 0 || key.prev > kRestSymbol)
            throw ConfigError("row key must be a degree 0..11 or rest");
        validate_row(row);
    }
}

const WeightRow* GeneratorModel::row(ChordQuality quality, Symbol prev) const
{
    auto it = rows_.find(RowKey{quality, prev});
    return it == rows_.end() ? nullptr : &it->second;
}

GeneratorModel parse_model(std::string_view text)
{
    GeneratorModel base = GeneratorModel::defaults();
    auto rows = base.rows();
    std::uint64_t seed = 0;
    int velocity = kDefaultVelocity;
    bool have_version = false;
    int line_no = 0;
    for (std::string_view line : detail::split_lines(text)) {
        ++line_no;
        line = detail::strip_comment(line);
        if (line.empty())
            continue;
        try {
            if (line.starts_with("version=")) {
                if (detail::parse_int(line.substr(8)) != 1)
                    throw std::invalid_argument("unsupported model version");
                have_version = true;
                continue;
            }
            if (!have_version)
                throw std::invalid_argument("model file must start with version=1");
            if (line.starts_with("seed=")) {
                seed = detail::parse_uint64(line.substr(5));
                continue;
            }
            if (line.starts_with("velocity=")) {
                velocity = detail::parse_int(line.substr(9));
                continue;
            }
            const auto colon = line.find(':');
            if (colon == std::string_view::npos)
                throw std::invalid_argument("expected '<quality>,<prev>:<weights>'");
            const auto key_parts = detail::split(line.substr(0, colon), ',');
            if (key_parts.size() != 2)
                throw std::invalid_argument("row key must be '<quality>,<prev>'");
            const auto qname = detail::trim(key_parts[0]);
            ChordQuality q;
            if (qname == "major")
                q = ChordQuality::Major;
            else if (qname == "minor")
                q = ChordQuality::Minor;
            else
                throw std::invalid_argument("unknown quality '" + std::string(qname) + "'");
            const Symbol prev = parse_symbol(key_parts[1]);
            if (prev == kHoldSymbol)
                throw std::invalid_argument("rows are keyed by degree or rest, not hold");
            const auto weights = detail::split(line.substr(colon + 1), ',');
            if (weights.size() != kSymbolCount)
                throw std::invalid_argument("row needs 14 weights");
            WeightRow row{};
            for (std::size_t i = 0; i < row.size(); ++i)
                row[i] = detail::parse_double(weights[i]);
            validate_row(row);
            rows[RowKey{q, prev}] = row;
        } catch (const std::invalid_argument& e) {
            throw ParseError(e.what(), line_no);
        }
    }
    if (!have_version)
        throw ParseError("missing version=1 header", 0);
    return GeneratorModel(std::move(rows), seed, velocity);
}

std::string format_model(const GeneratorModel& model)
{
    std::ostringstream os;
    os << "# <quality>,<prev>:w0..w11 (semitones above chord root),w_rest,w_hold\n";
    os << "version=1\n";
    os << "seed=" << model.rng_seed() << "\n";
    os << "velocity=" << model.velocity() << "\n";
    for (const auto& [key, row] : model.rows()) {
        os << quality_name(key.quality) << ',' << symbol_name(key.prev) << ':';
        for (std::size_t i = 0; i < row.size(); ++i)
            os << (i ? "," : "") << row[i];
        os << "\n";
    }
    return os.str();
}

Symbol sample_step(const GeneratorModel& model, const Chord& chord, Symbol prev, Temperature t, Rng& rng)
{
    if (prev < 0 || prev >= kSymbolCount)
        throw std::invalid_argument("symbol outside the sampler alphabet");

    const auto fallback = [&](const char* why) {
        warn_fallback(chord.quality, prev, why);
        const auto tones = chord_tones(Chord{0, chord.quality});
        return tones[static_cast<std::size_t>(rng.uniform01() * 3.0) % 3];
    };

    const WeightRow* row = model.row(chord.quality, prev);
    if (!row)
        return fallback("unknown row");

    WeightRow masked = *row;
    bool any = false;
    for (int slot = 0; slot < 12; ++slot) {
        auto& w = masked[static_cast<std::size_t>(slot)];
        if (!in_scale(chord, chord.root + slot))
            w = 0.0;
        any = any || w > 0.0;
    }
    any = any || masked[kRestSymbol] > 0.0 || masked[kHoldSymbol] > 0.0;
    if (!any)
        return fallback("no diatonic mass");

    const auto probs = apply_temperature(masked, t);
    return static_cast<Symbol>(rng.pick(probs));
}

LatencyModel LatencyModel::fixed(double ms)
{
    if (!(ms >= 0.0) || !std::isfinite(ms))
        throw ConfigError("latency must be >= 0 ms");
    return LatencyModel{Mode::Fixed, ms, ms};
}

LatencyModel LatencyModel::uniform(double lo_ms, double hi_ms)
{
    if (!(lo_ms >= 0.0) || !(hi_ms >= lo_ms) || !std::isfinite(hi_ms))
        throw ConfigError("uniform latency needs 0 <= lo <= hi");
    return LatencyModel{Mode::UniformRange, lo_ms, hi_ms};
}

LatencyModel LatencyModel::measured()
{
    return LatencyModel{Mode::Measured, 0.0, 0.0};
}

double LatencyModel::nominal_ms() const noexcept
{
    switch (mode) {
    case Mode::Fixed:
        return lo_ms;
    case Mode::UniformRange:
        return 0.5 * (lo_ms + hi_ms);
    case Mode::Measured:
        break;
    }
    return 0.0;
}

std::optional<double> LatencyModel::draw(Rng& rng) const
{
    switch (mode) {
    case Mode::Fixed:
        return lo_ms;
    case Mode::UniformRange:
        return lo_ms + (hi_ms - lo_ms) * rng.uniform01();
    case Mode::Measured:
        break;
    }
    return std::nullopt;
}

GenerationResult generate_continuation(const GeneratorModel& model, const NoteSequence& prev,
                                       const ChordProgression& prog, int start_bar, Temperature t,
                                       const LatencyModel& latency, std::uint64_t seed)
{
    if (prev.length_bars() > kWindowBars)
        throw std::invalid_argument("continuation input is longer than 16 bars");
    if (start_bar < 0)
        throw std::invalid_argument("negative start bar");

    const auto started = std::chrono::steady_clock::now();
    Rng rng(seed);
    Rng latency_rng(splitmix64(seed ^ 0x6c6174656e6379ULL));

    // Seed the sampler from the last note of the input.
    std::optional<int> state_pc;
    int center = kDefaultCenterPitch;
    if (!prev.empty()) {
        const NoteEvent& last = prev.events().back();
        state_pc = last.pitch % 12;
        center = last.pitch;
    }

    constexpr int kStepsPerBar = static_cast<int>(kTicksPerBar / kSixteenthTicks);
    constexpr int kSteps = kWindowBars * kStepsPerBar;

    std::vector<NoteEvent> out;
    std::optional<NoteEvent> open;
    const auto close_open = [&](int step) {
        if (open) {
            open->duration = Tick{step} * kSixteenthTicks - open->onset;
            out.push_back(*open);
            open.reset();
        }
    };

    for (int step = 0; step < kSteps; ++step) {
        const Chord chord = chord_at(prog, start_bar + step / kStepsPerBar);
        const Symbol prev_symbol = state_pc ? ((*state_pc - chord.root) % 12 + 12) % 12 : kRestSymbol;
        const Symbol next = sample_step(model, chord, prev_symbol, t, rng);
        if (next == kHoldSymbol)
            continue;
        close_open(step);
        if (next == kRestSymbol) {
            state_pc.reset();
            continue;
        }
        const int pc = (chord.root + next) % 12;
        open = NoteEvent{band_pitch(pc, center), Tick{step} * kSixteenthTicks, 0, model.velocity()};
        state_pc = pc;
    }
    close_open(kSteps);

    GenerationResult result{NoteSequence(kWindowBars, std::move(out)), 0.0};
    if (auto drawn = latency.draw(latency_rng)) {
        result.latency_ms = *drawn;
    } else {
        result.latency_ms =
            std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - started).count();
    }
    return result;
}

MarkovMelodyGenerator::MarkovMelodyGenerator(std::shared_ptr<const GeneratorModel> model, LatencyModel latency)
    : model_(std::move(model))
    , latency_(latency)
{
    if (!model_)
        throw ConfigError("generator needs a model");
}

GenerationResult MarkovMelodyGenerator::generate(const GenerationRequest& request) const
{
    return generate_continuation(*model_, request.prev, request.progression, request.start_bar,
                                 request.temperature, latency_, request.seed);
}

} // namespace ensemble
