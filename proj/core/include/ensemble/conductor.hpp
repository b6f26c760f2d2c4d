#pragma once

#include "ensemble/music.hpp"
#include "ensemble/protocol.hpp"
#include "ensemble/stagger.hpp"

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace ensemble {

using ConnectionId = std::uint64_t;

struct ConductorConfig {
    int n_expected = 1;
    double tempo_bpm = 120.0;
    ChordProgression progression;
    NoteSequence seed_melody{1, {}};
    proto::Plan plan;
    double lead_in_ms = 1000.0;
    double grace_ms = 60000.0;
    /// Broadcast Start as soon as every expected performer is ready.
    bool auto_start = true;
};

struct Outgoing {
    ConnectionId to;
    proto::Message msg;
};

struct Session {
    int performer_id = 0;
    std::string name;
    proto::HandshakeState state = proto::HandshakeState::Connected;
    double last_seen_ms = 0.0;
    LatencyPredictor latency;
    std::optional<ConnectionId> connection;
    bool lost = false;
    double lost_at_ms = 0.0;
    bool rejoining = false;
};

enum class PerformanceState : std::uint8_t { Waiting, Running, Stopped };

const char* performance_state_name(PerformanceState s) noexcept;

/// The conductor's authority: registry, transport clock and broadcasts.
/// Transport-free; drivers hand in connection events with the current server
/// time and deliver take_outbox() in order. Not thread-safe.
class Conductor {
public:
    using LogSink = std::function<void(const std::string&)>;

    explicit Conductor(ConductorConfig config, LogSink log = {});

    void on_open(ConnectionId conn, double now_ms);
    void on_message(ConnectionId conn, const proto::Message& m, double now_ms);
    void on_close(ConnectionId conn, double now_ms);

    /// Returns false (with a warning) unless every expected performer is ready.
    bool start_when_ready(double now_ms);
    bool set_tempo(double bpm, int effective_bar, double now_ms);
    bool set_progression(ChordProgression prog, double now_ms);
    void set_plan(proto::Plan plan, double now_ms);
    /// Running: stops at the next bar line. Otherwise immediately.
    void stop(double now_ms);
    /// Relays a control change to a performer as if a conductor client sent it.
    bool send_control(int performer_id, proto::ControlField field, double value, double now_ms);

    std::vector<Outgoing> take_outbox();

    PerformanceState state() const noexcept { return state_; }
    const ConductorConfig& config() const noexcept { return config_; }
    const std::map<int, Session>& sessions() const noexcept { return sessions_; }
    const TempoMap& tempo() const noexcept { return tempo_; }
    std::optional<double> start_epoch_ms() const noexcept { return start_epoch_; }
    std::optional<Tick> stop_tick() const noexcept { return stop_tick_; }
    /// Server tick at now_ms; nullopt before Start.
    std::optional<Tick> current_tick(double now_ms) const;
    int start_count() const noexcept { return start_count_; }
    StaggerSchedule schedule() const { return build_schedule(config_.n_expected); }

private:
    struct Peer {
        proto::Role role = proto::Role::Performer;
        std::optional<int> performer_id;
        bool greeted = false;
    };

    void send(ConnectionId to, proto::Message m);
    void broadcast_performers(const proto::Message& m);
    void broadcast_watchers(const proto::Message& m);
    void log(double now_ms, std::string_view event, const std::string& fields = {});
    void handle_hello(ConnectionId conn, const proto::Hello& h, double now_ms);
    void reject(ConnectionId conn, std::string reason, std::string ref, double now_ms);
    void greet_performer(ConnectionId conn, Session& s, double now_ms);
    void maybe_auto_start(double now_ms);
    void send_resync(ConnectionId conn, double now_ms);
    Session* session_for(ConnectionId conn);

    ConductorConfig config_;
    LogSink log_;
    PerformanceState state_ = PerformanceState::Waiting;
    std::map<ConnectionId, Peer> peers_;
    std::map<int, Session> sessions_;
    int next_id_ = 0;
    TempoMap tempo_;
    std::vector<proto::TempoChange> changes_;
    std::optional<double> start_epoch_;
    std::optional<Tick> stop_tick_;
    int start_count_ = 0;
    std::vector<Outgoing> outbox_;
};

} // namespace ensemble
