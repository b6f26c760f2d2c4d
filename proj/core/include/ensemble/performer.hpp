#pragma once

#include "ensemble/generator.hpp"
#include "ensemble/music.hpp"
#include "ensemble/protocol.hpp"
#include "ensemble/stagger.hpp"

#include <cstdint>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace ensemble {

/// Non-blocking: generation runs beside playback and the finished buffer is
/// handed over on a bar line. Blocking: generation stalls playback (the freeze)
/// and the player re-enters on the grid afterwards.
enum class SinkMode : std::uint8_t { NonBlocking, Blocking };

enum class NoteKind : std::uint8_t { NoteOn, NoteOff };
enum class NoteOrigin : std::uint8_t { Model, Manual };

struct SinkEvent {
    NoteKind kind = NoteKind::NoteOn;
    int pitch = 0;
    int velocity = 0;
    Tick at_tick = 0;
    NoteOrigin origin = NoteOrigin::Model;

    friend bool operator==(const SinkEvent&, const SinkEvent&) = default;
};

/// "tick,kind,pitch,velocity"
std::string format_event(const SinkEvent& ev);

/// Linear ramp of the output gain, starting at at_tick.
struct VolumeRamp {
    Tick at_tick = 0;
    double target = 1.0;
    double ramp_ms = 0.0;

    friend bool operator==(const VolumeRamp&, const VolumeRamp&) = default;
};

struct ControlState {
    Temperature temperature{1.0};
    int transpose_semitones = 0;
    double volume = 1.0;
    EngagementMode mode = EngagementMode::Auto;
    bool auto_fade_enabled = false;

    friend bool operator==(const ControlState&, const ControlState&) = default;
};

/// Applies one control change. Returns false, leaving `state` untouched, when
/// the value is out of range for the field.
bool apply_control(ControlState& state, proto::ControlField field, double value);

inline constexpr double kFadeMs = 500.0;

/// One gain command around a freeze. Ramp-down offsets are relative to the
/// predicted freeze start (negative = before it); ramp-up offsets are
/// relative to recovery.
struct FadeCommand {
    enum class Anchor : std::uint8_t { BeforeFreeze, AfterRecovery };
    Anchor anchor;
    double offset_ms;
    double target;
    double ramp_ms;

    friend bool operator==(const FadeCommand&, const FadeCommand&) = default;
};

/// Ramp to silence over min(500 ms, eta) before the freeze, back to
/// prior_volume over 500 ms after it. Empty when disabled.
std::vector<FadeCommand> auto_fade(bool enabled, double predicted_freeze_eta_ms, double prior_volume);

struct EngineConfig {
    std::string name = "performer";
    SinkMode sink_mode = SinkMode::NonBlocking;
    ControlState controls;
    std::uint64_t seed = 0;
    /// Starting point of the latency prediction used to pre-start generation.
    double initial_latency_ms = 2000.0;
    int ping_burst = 5;
    double ping_spacing_ms = 20.0;
    double ping_refresh_ms = 30000.0;
    /// Replaces the even stagger offsets; only for fault injection.
    std::vector<int> stagger_offsets;
};

struct GenerationJob {
    std::uint64_t id = 0;
    int window = 0; ///< 16-bar window index the result will fill
    bool initial = false;
    GenerationRequest request;
};

struct Underrun {
    int window = 0;
    Tick tick = 0;
};

struct ResumeRecord {
    Tick server_tick_estimate = 0;
    Tick resume_tick = 0;
};

struct WindowRecord {
    int window = 0;
    std::size_t events = 0;
    Tick installed_at = 0; ///< -1 for buffers generated before the start
};

/// Client-side session for one performer. Pure state machine: drivers feed it
/// transport events and local clock readings, run the generation jobs it asks
/// for, and drain its outputs. Not thread-safe; drivers serialise calls.
class PerformerEngine {
public:
    PerformerEngine(EngineConfig config, std::shared_ptr<const MelodyGenerator> generator);

    // Transport.
    void on_connected(double local_ms);
    void on_message(const proto::Message& m, double local_ms);
    void on_disconnected(double local_ms);

    /// playback_advance: emits every event up to the current server tick.
    std::vector<SinkEvent> advance(double local_ms);

    /// Next local time at which advance() has work, if any.
    std::optional<double> next_wakeup(double local_ms) const;

    // Generation.
    std::optional<GenerationJob> take_job();
    const MelodyGenerator& generator() const noexcept { return *generator_; }
    void on_generation_done(std::uint64_t job_id, const GenerationResult& result, double local_ms);

    // Local input.
    bool handle_control(proto::ControlField field, double value);
    void manual_note_on(int pitch, int velocity, double local_ms);
    void manual_note_off(int pitch, double local_ms);

    // Outputs accumulated since the last take.
    std::vector<proto::Message> take_outbox();
    std::vector<SinkEvent> take_events();
    std::vector<VolumeRamp> take_volume();

    // Introspection.
    proto::HandshakeState state() const noexcept { return state_; }
    std::optional<int> performer_id() const noexcept { return performer_id_; }
    const ControlState& controls() const noexcept { return controls_; }
    bool halted() const noexcept { return halted_; }
    bool frozen() const noexcept;
    bool generating() const noexcept { return gen_.has_value(); }
    bool rejected() const noexcept { return rejected_; }
    const std::optional<proto::Seed>& seed() const noexcept { return seed_; }
    const proto::Plan& plan() const noexcept { return plan_; }
    const TempoMap& tempo() const noexcept { return tempo_; }
    const proto::ClockSync& clock() const noexcept { return clock_; }
    std::optional<Tick> server_tick(double local_ms) const;
    const std::map<int, NoteSequence>& windows() const noexcept { return windows_; }
    const std::vector<FreezeRecord>& freezes() const noexcept { return freezes_; }
    const std::vector<Underrun>& underruns() const noexcept { return underruns_; }
    const std::vector<ResumeRecord>& resumes() const noexcept { return resumes_; }
    const std::vector<WindowRecord>& installed_windows() const noexcept { return installed_; }
    double predicted_latency_ms() const noexcept { return predictor_.predict(); }
    std::size_t sounding_count() const noexcept { return sounding_.size(); }
    std::size_t completed_regenerations() const noexcept { return regenerations_; }
    /// Notes that actually sounded, absolute ticks, model notes untransposed.
    NoteSequence played_between(int from_bar, int to_bar) const;

private:
    struct Sounding {
        int emitted_pitch;
        Tick end_tick;
        NoteOrigin origin;
        std::size_t played_index;
    };
    struct PlayedNote {
        Tick onset;
        Tick end; ///< kOpen while sounding
        int pitch;
        int velocity;
    };
    struct InFlight {
        std::uint64_t id;
        int window;
        bool initial;
        Tick start_tick;
        double start_local_ms;
        int released = 0;
    };
    struct PendingInstall {
        int window;
        NoteSequence sequence;
        Tick install_tick;
    };
    struct ModelCursor {
        Tick tick;
        int window;
        std::size_t index;
    };
    static constexpr Tick kOpen = std::numeric_limits<Tick>::max();

    void dispatch(const proto::Message& m, double local_ms);
    void apply_handshake(const proto::HandshakeStep& step, const proto::Message* m, double local_ms);
    void begin_initial_generation(double local_ms);
    void check_model_ready(double local_ms);
    void start_playback(const proto::Message& m, double local_ms);
    void stop_now(Tick at_tick);
    void pump_pings(double local_ms);
    void start_ping_burst(double local_ms);

    Tick now_tick(double local_ms) const;
    double tick_to_local(Tick tick) const;
    void emit_until(Tick now);
    std::optional<ModelCursor> next_model_event(Tick after) const;
    std::optional<Tick> next_off_tick() const;
    bool emit_note_on(int pitch, int velocity, Tick at, NoteOrigin origin, Tick end_tick);
    void emit_note_off(std::size_t sounding_index, Tick at);
    void release_all(Tick at);

    struct GenerationPlan {
        int window;
        Tick start_tick;
    };
    std::optional<GenerationPlan> plan_generation(Tick now) const;
    void maybe_start_generation(Tick now, double local_ms);
    void maybe_fade(Tick now, double local_ms);
    void queue_job(int window, bool initial, NoteSequence prev, Tick start_tick, double local_ms);

    EngineConfig config_;
    std::shared_ptr<const MelodyGenerator> generator_;
    proto::HandshakeState state_ = proto::HandshakeState::Connected;
    std::optional<int> performer_id_;
    int n_expected_ = 1;
    std::optional<StaggerSchedule> schedule_;
    std::optional<proto::Seed> seed_;
    proto::Plan plan_;
    TempoMap tempo_;
    std::vector<proto::TempoChange> pending_tempo_;
    proto::ClockSync clock_;
    ControlState controls_;
    LatencyPredictor predictor_;

    bool connected_ = false;
    bool halted_ = false;
    bool rejoining_ = false;
    bool rejected_ = false;
    std::optional<Tick> stop_at_;

    int pings_left_ = 0;
    double next_ping_ms_ = 0.0;
    std::optional<double> next_burst_ms_;

    std::map<int, NoteSequence> windows_;
    std::optional<InFlight> gen_;
    std::optional<GenerationJob> job_;
    std::optional<PendingInstall> pending_install_;
    std::uint64_t next_job_id_ = 1;
    std::uint64_t generation_counter_ = 0;
    std::size_t regenerations_ = 0;
    std::vector<std::pair<proto::Message, bool>> deferred_; ///< received while frozen
    std::optional<int> faded_for_window_;
    double volume_before_fade_ = 1.0;

    Tick last_tick_ = -1;
    std::optional<int> underrun_window_;
    std::vector<Sounding> sounding_;
    std::vector<PlayedNote> played_;

    std::vector<proto::Message> outbox_;
    std::vector<SinkEvent> events_;
    std::vector<VolumeRamp> volume_;
    std::vector<FreezeRecord> freezes_;
    std::vector<Underrun> underruns_;
    std::vector<ResumeRecord> resumes_;
    std::vector<WindowRecord> installed_;
};

} // namespace ensemble
