#pragma once

#include "ensemble/music.hpp"

#include <array>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace ensemble {

/// Sampler alphabet: 0..11 are semitone intervals above the current chord
/// root, followed by rest and hold (extend the sounding note or rest).
using Symbol = int;
inline constexpr Symbol kRestSymbol = 12;
inline constexpr Symbol kHoldSymbol = 13;
inline constexpr int kSymbolCount = 14;
inline constexpr int kDefaultVelocity = 96;
inline constexpr int kDefaultCenterPitch = 72;

using WeightRow = std::array<double, kSymbolCount>;

std::string symbol_name(Symbol s);
/// Accepts "0".."11", "rest", "hold".
Symbol parse_symbol(std::string_view text);

/// Sampling temperature, kept within [0.01, 4.0].
class Temperature {
public:
    static constexpr double kMin = 0.01;
    static constexpr double kMax = 4.0;

    Temperature() = default;
    explicit Temperature(double value);

    double value() const noexcept { return value_; }
    static bool valid(double value) noexcept { return value >= kMin && value <= kMax; }

    friend bool operator==(const Temperature&, const Temperature&) = default;

private:
    double value_ = 1.0;
};

/// p_i^(1/T) / sum_j p_j^(1/T), evaluated in log space so small
/// temperatures do not underflow. Throws DegenerateDistribution on zero mass.
std::vector<double> apply_temperature(std::span<const double> dist, Temperature t);

std::uint64_t splitmix64(std::uint64_t x) noexcept;

/// Deterministic generator: mt19937_64 plus our own conversion to [0,1), so
/// draws are identical across standard library implementations.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next() { return engine_(); }
    double uniform01() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
    /// Index drawn from a (not necessarily normalised) non-negative weight vector.
    std::size_t pick(std::span<const double> weights);

private:
    std::mt19937_64 engine_;
};

struct RowKey {
    ChordQuality quality;
    Symbol prev; ///< 0..11 or kRestSymbol

    friend auto operator<=>(const RowKey&, const RowKey&) = default;
};

/// Order-1 transition weights over the sampler alphabet, keyed by chord
/// quality and the previous sounding degree (or rest). Immutable once built.
class GeneratorModel {
public:
    /// Chord tones 4, other diatonic degrees 2, rest 1, hold 3, chromatic 0.
    static GeneratorModel defaults(std::uint64_t rng_seed = 0);
    static WeightRow default_row(ChordQuality quality);

    GeneratorModel(std::map<RowKey, WeightRow> rows, std::uint64_t rng_seed, int velocity = kDefaultVelocity);

    /// nullptr when the model has no row for the key.
    const WeightRow* row(ChordQuality quality, Symbol prev) const;
    const std::map<RowKey, WeightRow>& rows() const noexcept { return rows_; }
    std::uint64_t rng_seed() const noexcept { return rng_seed_; }
    int velocity() const noexcept { return velocity_; }

private:
    std::map<RowKey, WeightRow> rows_;
    std::uint64_t rng_seed_ = 0;
    int velocity_ = kDefaultVelocity;
};

/// Model file: "version=1", optional "seed=<n>" and "velocity=<n>", then rows
/// "<major|minor>,<prev>:w0,...,w13". Rows not listed keep their default.
GeneratorModel parse_model(std::string_view text);
std::string format_model(const GeneratorModel& model);

/// Draws the next symbol for a chord given the previous state. Degrees outside
/// the chord's diatonic scale are never drawn. An unknown row, or a row with no
/// admissible mass, falls back to a uniform draw over the chord tones.
Symbol sample_step(const GeneratorModel& model, const Chord& chord, Symbol prev, Temperature t, Rng& rng);

struct LatencyModel {
    enum class Mode { Fixed, UniformRange, Measured };

    Mode mode = Mode::Fixed;
    double lo_ms = 2000.0;
    double hi_ms = 2000.0;

    static LatencyModel fixed(double ms);
    static LatencyModel uniform(double lo_ms, double hi_ms);
    static LatencyModel measured();

    /// Expected latency, used to seed latency prediction.
    double nominal_ms() const noexcept;
    /// Nullopt in measured mode; the caller times the work instead.
    std::optional<double> draw(Rng& rng) const;
};

struct GenerationResult {
    NoteSequence sequence;
    double latency_ms = 0.0;

    friend bool operator==(const GenerationResult&, const GenerationResult&) = default;
};

GenerationResult generate_continuation(const GeneratorModel& model, const NoteSequence& prev,
                                       const ChordProgression& prog, int start_bar, Temperature t,
                                       const LatencyModel& latency, std::uint64_t seed);

struct GenerationRequest {
    NoteSequence prev;
    ChordProgression progression;
    int start_bar = 0;
    Temperature temperature;
    std::uint64_t seed = 0;
};

/// Melody in, 16 quantised bars out. Implementations must be safe to call
/// from a worker thread; calls on one instance are never concurrent.
class MelodyGenerator {
public:
    virtual ~MelodyGenerator() = default;
    virtual GenerationResult generate(const GenerationRequest& request) const = 0;
};

class MarkovMelodyGenerator final : public MelodyGenerator {
public:
    MarkovMelodyGenerator(std::shared_ptr<const GeneratorModel> model, LatencyModel latency);

    GenerationResult generate(const GenerationRequest& request) const override;
    const LatencyModel& latency() const noexcept { return latency_; }

private:
    std::shared_ptr<const GeneratorModel> model_;
    LatencyModel latency_;
};

} // namespace ensemble
