#include "ensemble/conductor.hpp"

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <utility>

namespace ensemble {

namespace {

template <class... Ts>
struct overloaded : Ts... {
    using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

const char* role_name(proto::Role r)
{
    switch (r) {
    case proto::Role::Performer: return "performer";
    case proto::Role::Conductor: return "conductor";
    case proto::Role::Observer: return "observer";
    }
    return "?";
}

} // namespace

const char* performance_state_name(PerformanceState s) noexcept
{
    switch (s) {
    case PerformanceState::Waiting: return "waiting";
    case PerformanceState::Running: return "running";
    case PerformanceState::Stopped: return "stopped";
    }
    return "?";
}

Conductor::Conductor(ConductorConfig config, LogSink log)
    : config_(std::move(config))
    , log_(std::move(log))
    , tempo_(make_clock(config_.tempo_bpm))
{
    (void)build_schedule(config_.n_expected);
}

void Conductor::log(double now_ms, std::string_view event, const std::string& fields)
{
    std::string line = fmt::format("t={:.3f} event={}", now_ms, event);
    if (!fields.empty()) {
        line += ' ';
        line += fields;
    }
    if (log_)
        log_(line);
    else
        spdlog::info("{}", line);
}

void Conductor::send(ConnectionId to, proto::Message m)
{
    outbox_.push_back(Outgoing{to, std::move(m)});
}

void Conductor::broadcast_performers(const proto::Message& m)
{
    for (const auto& [id, s] : sessions_) {
        if (s.connection && !s.lost)
            send(*s.connection, m);
    }
}

void Conductor::broadcast_watchers(const proto::Message& m)
{
    for (const auto& [conn, peer] : peers_) {
        if (peer.greeted && peer.role != proto::Role::Performer)
            send(conn, m);
    }
}

Session* Conductor::session_for(ConnectionId conn)
{
    auto it = peers_.find(conn);
    if (it == peers_.end() || !it->second.performer_id)
        return nullptr;
    auto s = sessions_.find(*it->second.performer_id);
    if (s == sessions_.end() || s->second.connection != conn)
        return nullptr;
    return &s->second;
}

std::optional<Tick> Conductor::current_tick(double now_ms) const
{
    if (!start_epoch_)
        return std::nullopt;
    return tempo_.ms_to_tick(now_ms);
}

void Conductor::on_open(ConnectionId conn, double now_ms)
{
    peers_[conn] = Peer{};
    log(now_ms, "open", fmt::format("conn={}", conn));
}

void Conductor::on_close(ConnectionId conn, double now_ms)
{
    if (Session* s = session_for(conn)) {
        s->lost = true;
        s->lost_at_ms = now_ms;
        s->connection.reset();
        s->state = proto::HandshakeState::Connected;
        log(now_ms, "disconnect", fmt::format("performer={} state={}", s->performer_id, performance_state_name(state_)));
    }
    peers_.erase(conn);
}

void Conductor::reject(ConnectionId conn, std::string reason, std::string ref, double now_ms)
{
    log(now_ms, "reject", fmt::format("conn={} ref={} reason=\"{}\"", conn, ref, reason));
    send(conn, proto::Reject{std::move(reason), std::move(ref)});
}

void Conductor::on_message(ConnectionId conn, const proto::Message& m, double now_ms)
{
    auto peer_it = peers_.find(conn);
    if (peer_it == peers_.end())
        return;
    Peer& peer = peer_it->second;
    Session* session = session_for(conn);
    if (session)
        session->last_seen_ms = now_ms;

    // Clock pings are answered for anyone, before anything else.
    if (const auto* ping = std::get_if<proto::ClockPing>(&m)) {
        send(conn, proto::ClockPong{ping->client_send_ms, now_ms});
        return;
    }
    if (const auto* hello = std::get_if<proto::Hello>(&m)) {
        handle_hello(conn, *hello, now_ms);
        return;
    }
    if (!peer.greeted) {
        reject(conn, "Hello required first", std::string(proto::type_name(m)), now_ms);
        return;
    }

    const bool from_conductor = peer.role == proto::Role::Conductor;
    std::visit(
        overloaded{
            [&](const proto::Ready& r) {
                if (!session || r.performer_id != session->performer_id)
                    return;
                session->state = proto::HandshakeState::ModelReady;
                log(now_ms, "ready", fmt::format("performer={}", session->performer_id));
                if (session->rejoining && state_ == PerformanceState::Running) {
                    session->rejoining = false;
                    session->state = proto::HandshakeState::Running;
                    send_resync(conn, now_ms);
                    return;
                }
                session->rejoining = false;
                if (state_ == PerformanceState::Running) {
                    // Dropped before Start and came back after it.
                    session->state = proto::HandshakeState::Running;
                    send_resync(conn, now_ms);
                    return;
                }
                maybe_auto_start(now_ms);
            },
            [&](const proto::GenStart& g) {
                if (!session)
                    return;
                log(now_ms, "gen_start",
                    fmt::format("performer={} tick={}", session->performer_id, g.freeze_start_tick));
                broadcast_watchers(g);
            },
            [&](const proto::GenDone& g) {
                if (!session)
                    return;
                session->latency.observe(g.latency_ms);
                log(now_ms, "gen_done",
                    fmt::format("performer={} latency_ms={:.3f} predicted_ms={:.3f}", session->performer_id,
                                g.latency_ms, session->latency.predict()));
                broadcast_watchers(g);
            },
            [&](const proto::Control& c) {
                if (session) {
                    // The performer's echo of an applied change.
                    log(now_ms, "control_applied",
                        fmt::format("performer={} field={} value={}", c.performer_id, proto::field_name(c.field),
                                    c.value));
                    broadcast_watchers(c);
                } else if (from_conductor) {
                    send_control(c.performer_id, c.field, c.value, now_ms);
                } else {
                    reject(conn, "observers cannot send controls", "Control", now_ms);
                }
            },
            [&](const proto::Reject& r) {
                if (session) {
                    log(now_ms, "performer_reject",
                        fmt::format("performer={} ref={} reason=\"{}\"", session->performer_id, r.ref, r.reason));
                    broadcast_watchers(r);
                }
            },
            [&](const proto::Bye& b) {
                if (!session || b.performer_id != session->performer_id)
                    return;
                log(now_ms, "bye", fmt::format("performer={}", session->performer_id));
            },
            [&](const proto::Start&) {
                if (from_conductor)
                    start_when_ready(now_ms);
                else
                    reject(conn, "only the conductor starts", "Start", now_ms);
            },
            [&](const proto::Stop&) {
                if (from_conductor)
                    stop(now_ms);
                else
                    reject(conn, "only the conductor stops", "Stop", now_ms);
            },
            [&](const proto::TempoChange& t) {
                if (!from_conductor)
                    reject(conn, "only the conductor sets tempo", "TempoChange", now_ms);
                else if (!set_tempo(t.tempo_bpm, t.effective_bar, now_ms))
                    reject(conn, "tempo change refused", "TempoChange", now_ms);
            },
            [&](const proto::Seed& s) {
                if (!from_conductor)
                    reject(conn, "only the conductor seeds", "Seed", now_ms);
                else if (!set_progression(s.progression, now_ms))
                    reject(conn, "progression is fixed once running", "Seed", now_ms);
            },
            [&](const proto::Plan& p) {
                if (from_conductor)
                    set_plan(p, now_ms);
                else
                    reject(conn, "only the conductor edits the plan", "Plan", now_ms);
            },
            [&](const auto& other) {
                log(now_ms, "ignored", fmt::format("conn={} type={}", conn, proto::type_name(proto::Message(other))));
            },
        },
        m);
}

void Conductor::handle_hello(ConnectionId conn, const proto::Hello& h, double now_ms)
{
    Peer& peer = peers_[conn];
    if (peer.greeted) {
        reject(conn, "already greeted", "Hello", now_ms);
        return;
    }
    peer.role = h.role;

    if (h.role != proto::Role::Performer) {
        peer.greeted = true;
        log(now_ms, "watcher", fmt::format("conn={} role={} name=\"{}\"", conn, role_name(h.role), h.client_name));
        send(conn, proto::Seed{config_.progression, config_.seed_melody, tempo_.base_tempo(), kPpq});
        if (!config_.plan.instructions.empty())
            send(conn, config_.plan);
        if (state_ == PerformanceState::Running)
            send_resync(conn, now_ms);
        return;
    }

    if (h.performer_id) {
        auto it = sessions_.find(*h.performer_id);
        if (it == sessions_.end()) {
            reject(conn, "unknown performer id", "Hello", now_ms);
            return;
        }
        Session& s = it->second;
        if (!s.lost) {
            reject(conn, "performer already connected", "Hello", now_ms);
            return;
        }
        if (now_ms - s.lost_at_ms > config_.grace_ms) {
            reject(conn, "rejoin grace expired", "Hello", now_ms);
            return;
        }
        s.lost = false;
        s.connection = conn;
        s.rejoining = true;
        s.name = h.client_name;
        peer.greeted = true;
        peer.performer_id = s.performer_id;
        log(now_ms, "rejoin",
            fmt::format("performer={} conn={} away_ms={:.3f}", s.performer_id, conn, now_ms - s.lost_at_ms));
        greet_performer(conn, s, now_ms);
        return;
    }

    if (state_ != PerformanceState::Waiting) {
        reject(conn, "performance already running", "Hello", now_ms);
        return;
    }
    if (next_id_ >= config_.n_expected) {
        // Before the start a dropped seat is free for whoever asks next.
        auto lost = std::find_if(sessions_.begin(), sessions_.end(), [](const auto& kv) { return kv.second.lost; });
        if (lost == sessions_.end()) {
            reject(conn, "ensemble is full", "Hello", now_ms);
            return;
        }
        Session& seat = lost->second;
        seat.lost = false;
        seat.rejoining = false;
        seat.name = h.client_name;
        seat.connection = conn;
        seat.last_seen_ms = now_ms;
        peer.greeted = true;
        peer.performer_id = seat.performer_id;
        log(now_ms, "admit", fmt::format("performer={} conn={} name=\"{}\" reused=1", seat.performer_id, conn, seat.name));
        greet_performer(conn, seat, now_ms);
        return;
    }
    Session s;
    s.performer_id = next_id_++;
    s.name = h.client_name;
    s.connection = conn;
    s.last_seen_ms = now_ms;
    auto& stored = sessions_.emplace(s.performer_id, std::move(s)).first->second;
    peer.greeted = true;
    peer.performer_id = stored.performer_id;
    log(now_ms, "admit", fmt::format("performer={} conn={} name=\"{}\"", stored.performer_id, conn, stored.name));
    greet_performer(conn, stored, now_ms);
}

void Conductor::greet_performer(ConnectionId conn, Session& s, double now_ms)
{
    (void)now_ms;
    send(conn, proto::Welcome{s.performer_id, config_.n_expected});
    s.state = proto::HandshakeState::Welcomed;
    double seed_tempo = tempo_.base_tempo();
    send(conn, proto::Seed{config_.progression, config_.seed_melody, seed_tempo, kPpq});
    s.state = proto::HandshakeState::Seeded;
    if (!config_.plan.instructions.empty())
        send(conn, config_.plan);
    if (state_ == PerformanceState::Waiting) {
        for (const auto& c : changes_)
            send(conn, c);
    }
}

void Conductor::send_resync(ConnectionId conn, double now_ms)
{
    proto::Resync r;
    r.start_epoch_ms = *start_epoch_;
    r.base_tempo_bpm = tempo_.base_tempo();
    r.tempo_changes = changes_;
    r.server_ms = now_ms;
    r.server_tick = tempo_.ms_to_tick(now_ms);
    log(now_ms, "resync", fmt::format("conn={} server_tick={}", conn, r.server_tick));
    send(conn, std::move(r));
}

void Conductor::maybe_auto_start(double now_ms)
{
    if (!config_.auto_start || state_ != PerformanceState::Waiting)
        return;
    if (static_cast<int>(sessions_.size()) < config_.n_expected)
        return;
    for (const auto& [id, s] : sessions_) {
        if (s.lost || s.state != proto::HandshakeState::ModelReady)
            return;
    }
    start_when_ready(now_ms);
}

bool Conductor::start_when_ready(double now_ms)
{
    if (state_ != PerformanceState::Waiting) {
        log(now_ms, "warning", "reason=\"start after start\"");
        return false;
    }
    int ready = 0;
    for (const auto& [id, s] : sessions_) {
        if (!s.lost && s.state == proto::HandshakeState::ModelReady)
            ++ready;
    }
    if (ready < config_.n_expected) {
        log(now_ms, "warning", fmt::format("reason=\"not all ready\" ready={} expected={}", ready, config_.n_expected));
        return false;
    }
    start_epoch_ = now_ms + config_.lead_in_ms;
    TempoMap map(make_clock(tempo_.base_tempo(), *start_epoch_));
    changes_.clear();
    tempo_ = std::move(map);
    state_ = PerformanceState::Running;
    ++start_count_;
    for (auto& [id, s] : sessions_)
        s.state = proto::HandshakeState::Running;
    const proto::Start start{*start_epoch_};
    broadcast_performers(start);
    broadcast_watchers(start);
    log(now_ms, "start", fmt::format("epoch_ms={:.3f} tempo={} performers={}", *start_epoch_, tempo_.base_tempo(),
                                     config_.n_expected));
    return true;
}

bool Conductor::set_tempo(double bpm, int effective_bar, double now_ms)
{
    if (!(bpm >= 40.0 && bpm <= 240.0)) {
        log(now_ms, "tempo_rejected", fmt::format("bpm={} reason=range", bpm));
        return false;
    }
    if (state_ == PerformanceState::Stopped)
        return false;
    if (state_ == PerformanceState::Waiting) {
        tempo_ = TempoMap(make_clock(bpm));
        config_.tempo_bpm = bpm;
        const proto::TempoChange change{bpm, 0};
        broadcast_performers(change);
        broadcast_watchers(change);
        log(now_ms, "tempo", fmt::format("bpm={} bar=0", bpm));
        return true;
    }
    const Tick now = tempo_.ms_to_tick(now_ms);
    const int current_bar = static_cast<int>(tick_to_bar(std::max<Tick>(now, 0)));
    const int last_bar = changes_.empty() ? 0 : changes_.back().effective_bar;
    if (effective_bar <= current_bar || effective_bar < last_bar) {
        log(now_ms, "tempo_rejected", fmt::format("bpm={} bar={} current_bar={}", bpm, effective_bar, current_bar));
        return false;
    }
    tempo_.add_change(effective_bar, bpm);
    if (!changes_.empty() && changes_.back().effective_bar == effective_bar)
        changes_.back().tempo_bpm = bpm;
    else
        changes_.push_back(proto::TempoChange{bpm, effective_bar});
    const proto::TempoChange change{bpm, effective_bar};
    broadcast_performers(change);
    broadcast_watchers(change);
    log(now_ms, "tempo", fmt::format("bpm={} bar={}", bpm, effective_bar));
    return true;
}

bool Conductor::set_progression(ChordProgression prog, double now_ms)
{
    if (state_ != PerformanceState::Waiting) {
        log(now_ms, "progression_rejected", "reason=running");
        return false;
    }
    config_.progression = std::move(prog);
    const proto::Seed seed{config_.progression, config_.seed_melody, tempo_.base_tempo(), kPpq};
    for (auto& [id, s] : sessions_) {
        if (s.connection && !s.lost) {
            send(*s.connection, seed);
            s.state = proto::HandshakeState::Seeded;
        }
    }
    broadcast_watchers(seed);
    log(now_ms, "progression", fmt::format("entries={}", config_.progression.entries().size()));
    return true;
}

void Conductor::set_plan(proto::Plan plan, double now_ms)
{
    std::stable_sort(plan.instructions.begin(), plan.instructions.end(),
                     [](const auto& a, const auto& b) { return a.bar < b.bar; });
    config_.plan = std::move(plan);
    broadcast_performers(config_.plan);
    broadcast_watchers(config_.plan);
    log(now_ms, "plan", fmt::format("instructions={}", config_.plan.instructions.size()));
}

void Conductor::stop(double now_ms)
{
    if (state_ == PerformanceState::Stopped)
        return;
    proto::Stop msg;
    if (state_ == PerformanceState::Running) {
        const Tick now = std::max<Tick>(tempo_.ms_to_tick(now_ms), 0);
        stop_tick_ = bar_to_tick(static_cast<int>(tick_to_bar(now)) + 1);
        msg.at_tick = stop_tick_;
    }
    state_ = PerformanceState::Stopped;
    broadcast_performers(msg);
    broadcast_watchers(msg);
    log(now_ms, "stop", stop_tick_ ? fmt::format("at_tick={}", *stop_tick_) : std::string("at_tick=now"));
}

bool Conductor::send_control(int performer_id, proto::ControlField field, double value, double now_ms)
{
    auto it = sessions_.find(performer_id);
    if (it == sessions_.end() || !it->second.connection || it->second.lost) {
        log(now_ms, "control_dropped", fmt::format("performer={} field={}", performer_id, proto::field_name(field)));
        return false;
    }
    send(*it->second.connection, proto::Control{performer_id, field, value});
    log(now_ms, "control", fmt::format("performer={} field={} value={}", performer_id, proto::field_name(field), value));
    return true;
}

std::vector<Outgoing> Conductor::take_outbox() { return std::exchange(outbox_, {}); }

} // namespace ensemble
