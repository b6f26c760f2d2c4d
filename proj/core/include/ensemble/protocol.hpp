#pragma once

#include "ensemble/music.hpp"

#include <cstdint>
#include <deque>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

namespace ensemble {

enum class EngagementMode : std::uint8_t { Manual, Hybrid, Auto };

const char* mode_name(EngagementMode mode) noexcept;
std::optional<EngagementMode> parse_mode(std::string_view text) noexcept;

} // namespace ensemble

namespace ensemble::proto {

inline constexpr int kVersion = 1;
inline constexpr unsigned short kDefaultPort = 8765;

enum class Role : std::uint8_t { Performer, Conductor, Observer };

struct Hello {
    std::string client_name;
    Role role = Role::Performer;
    std::optional<int> performer_id; ///< set when rejoining
    friend bool operator==(const Hello&, const Hello&) = default;
};

struct Welcome {
    int performer_id = 0;
    int n_expected = 1;
    friend bool operator==(const Welcome&, const Welcome&) = default;
};

struct Seed {
    ChordProgression progression;
    NoteSequence seed_melody;
    double tempo_bpm = 120.0;
    int ppq = kPpq;
    friend bool operator==(const Seed&, const Seed&) = default;
};

struct Ready {
    int performer_id = 0;
    friend bool operator==(const Ready&, const Ready&) = default;
};

/// Server to performers: tick 0 happens at start_epoch_ms on the server clock.
/// Conductor to server: a start request (the epoch is ignored).
struct Start {
    double start_epoch_ms = 0.0;
    friend bool operator==(const Start&, const Start&) = default;
};

/// Playback ends at at_tick (a bar line); without it, immediately.
struct Stop {
    std::optional<Tick> at_tick;
    friend bool operator==(const Stop&, const Stop&) = default;
};

struct ClockPing {
    double client_send_ms = 0.0;
    friend bool operator==(const ClockPing&, const ClockPing&) = default;
};

struct ClockPong {
    double client_send_ms = 0.0;
    double server_ms = 0.0;
    friend bool operator==(const ClockPong&, const ClockPong&) = default;
};

struct GenStart {
    int performer_id = 0;
    Tick freeze_start_tick = 0;
    friend bool operator==(const GenStart&, const GenStart&) = default;
};

struct GenDone {
    int performer_id = 0;
    double latency_ms = 0.0;
    friend bool operator==(const GenDone&, const GenDone&) = default;
};

enum class ControlField : std::uint8_t { Temperature, Transpose, Volume, Mode, AutoFade };

const char* field_name(ControlField f) noexcept;
std::optional<ControlField> parse_field(std::string_view text) noexcept;

/// `value` holds the mode as static_cast<double>(EngagementMode) and the
/// auto-fade flag as 0/1; on the wire they travel as a string and a bool.
struct Control {
    int performer_id = 0;
    ControlField field = ControlField::Volume;
    double value = 0.0;
    friend bool operator==(const Control&, const Control&) = default;
};

struct TempoChange {
    double tempo_bpm = 120.0;
    int effective_bar = 0;
    friend bool operator==(const TempoChange&, const TempoChange&) = default;
};

struct PlanInstruction {
    int bar = 0;
    std::string text;
    friend bool operator==(const PlanInstruction&, const PlanInstruction&) = default;
};

struct Plan {
    std::vector<PlanInstruction> instructions;
    friend bool operator==(const Plan&, const Plan&) = default;
};

struct Bye {
    int performer_id = 0;
    friend bool operator==(const Bye&, const Bye&) = default;
};

/// Sent to a rejoining performer in place of Start: the full tempo map plus
/// the server position at send time.
struct Resync {
    double start_epoch_ms = 0.0;
    double base_tempo_bpm = 120.0;
    std::vector<TempoChange> tempo_changes;
    double server_ms = 0.0;
    Tick server_tick = 0;
    friend bool operator==(const Resync&, const Resync&) = default;
};

struct Reject {
    std::string reason;
    std::string ref; ///< type of the rejected message
    friend bool operator==(const Reject&, const Reject&) = default;
};

using Message = std::variant<Hello, Welcome, Seed, Ready, Start, Stop, ClockPing, ClockPong, GenStart, GenDone,
                             Control, TempoChange, Plan, Bye, Resync, Reject>;

std::string_view type_name(const Message& m) noexcept;

/// One JSON document per frame: {"v":1,"type":"<Tag>",...fields}.
std::string encode(const Message& m);
/// Throws DecodeError; unknown fields are ignored.
Message decode(std::string_view frame);

/// Plan text file: lines "@Bar <n>: <text>".
Plan parse_plan(std::string_view text);

// --- handshake -------------------------------------------------------------

enum class HandshakeState : std::uint8_t { Connected, Welcomed, Seeded, ModelReady, Running, Stopped };

const char* state_name(HandshakeState s) noexcept;

enum class HandshakeAction : std::uint8_t {
    BeginInitialGeneration,
    SendReady,
    StartPlayback,
    StopPlayback,
    ProtocolViolation,
};

/// Local event: both initial buffers exist and the clock estimate is usable.
struct ModelLoaded {};

struct HandshakeStep {
    HandshakeState state;
    std::vector<HandshakeAction> actions;
};

HandshakeStep handshake_step(HandshakeState state, const Message& m);
HandshakeStep handshake_step(HandshakeState state, ModelLoaded);

// --- clock offset ----------------------------------------------------------

struct ClockSample {
    double client_send_ms = 0.0;
    double server_ms = 0.0;
    double client_recv_ms = 0.0;
};

struct ClockEstimate {
    double offset_ms = 0.0; ///< server clock minus client clock
    std::vector<std::pair<double, double>> rtt_samples; ///< (rtt, offset) per input sample
    std::size_t used = 0;                                ///< samples surviving outlier rejection
};

/// Median of per-sample offsets after discarding samples whose round trip
/// exceeds three times the median round trip. Needs at least 3 samples.
ClockEstimate estimate_offset(std::span<const ClockSample> samples);

/// Keeps the most recent samples and the current estimate for one client.
class ClockSync {
public:
    explicit ClockSync(std::size_t keep = 10) : keep_(keep) {}

    void add(const ClockSample& s);
    void clear() { samples_.clear(); estimate_.reset(); }
    bool ready() const noexcept { return estimate_.has_value(); }
    /// Server ms for a local ms; requires ready().
    double to_server(double local_ms) const { return local_ms + estimate_->offset_ms; }
    double to_local(double server_ms) const { return server_ms - estimate_->offset_ms; }
    const std::optional<ClockEstimate>& estimate() const noexcept { return estimate_; }

private:
    std::size_t keep_;
    std::deque<ClockSample> samples_;
    std::optional<ClockEstimate> estimate_;
};

} // namespace ensemble::proto
