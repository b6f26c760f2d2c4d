#include "ensemble/performer.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <utility>

namespace ensemble {

namespace {

template <class... Ts>
struct overloaded : Ts... {
    using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

bool is_integral(double v) { return std::isfinite(v) && std::floor(v) == v; }

} // namespace

std::string format_event(const SinkEvent& ev)
{
    return std::to_string(ev.at_tick) + (ev.kind == NoteKind::NoteOn ? ",note_on," : ",note_off,") +
           std::to_string(ev.pitch) + "," + std::to_string(ev.velocity);
}

bool apply_control(ControlState& state, proto::ControlField field, double value)
{
    using proto::ControlField;
    switch (field) {
    case ControlField::Temperature:
        if (!Temperature::valid(value))
            return false;
        state.temperature = Temperature(value);
        return true;
    case ControlField::Transpose:
        if (!is_integral(value) || value < -36.0 || value > 36.0)
            return false;
        state.transpose_semitones = static_cast<int>(value);
        return true;
    case ControlField::Volume:
        if (!(value >= 0.0 && value <= 1.0))
            return false;
        state.volume = value;
        return true;
    case ControlField::Mode:
        if (!is_integral(value) || value < 0.0 || value > 2.0)
            return false;
        state.mode = static_cast<EngagementMode>(static_cast<int>(value));
        return true;
    case ControlField::AutoFade:
        if (value != 0.0 && value != 1.0)
            return false;
        state.auto_fade_enabled = value == 1.0;
        return true;
    }
    return false;
}

std::vector<FadeCommand> auto_fade(bool enabled, double predicted_freeze_eta_ms, double prior_volume)
{
    if (!enabled)
        return {};
    const double down = std::clamp(predicted_freeze_eta_ms, 0.0, kFadeMs);
    return {
        FadeCommand{FadeCommand::Anchor::BeforeFreeze, -down, 0.0, down},
        FadeCommand{FadeCommand::Anchor::AfterRecovery, 0.0, prior_volume, kFadeMs},
    };
}

PerformerEngine::PerformerEngine(EngineConfig config, std::shared_ptr<const MelodyGenerator> generator)
    : config_(std::move(config))
    , generator_(std::move(generator))
    , controls_(config_.controls)
    , predictor_(config_.initial_latency_ms)
{
    if (!generator_)
        throw std::invalid_argument("performer engine needs a generator");
}

// --- transport -------------------------------------------------------------

void PerformerEngine::on_connected(double local_ms)
{
    (void)local_ms;
    connected_ = true;
    proto::Hello hello{config_.name, proto::Role::Performer, std::nullopt};
    if (rejoining_)
        hello.performer_id = performer_id_;
    outbox_.push_back(std::move(hello));
}

void PerformerEngine::on_message(const proto::Message& m, double local_ms)
{
    if (frozen()) {
        deferred_.emplace_back(m, true);
        return;
    }
    dispatch(m, local_ms);
}

void PerformerEngine::on_disconnected(double local_ms)
{
    connected_ = false;
    pings_left_ = 0;
    next_burst_ms_.reset();
    deferred_.clear();
    if (state_ == proto::HandshakeState::Stopped)
        return;
    if (state_ == proto::HandshakeState::Running) {
        const Tick now = std::max(now_tick(local_ms), last_tick_);
        release_all(now);
        halted_ = true;
        spdlog::info("performer={} event=halt tick={}", performer_id_.value_or(-1), now);
    }
    rejoining_ = performer_id_.has_value();
    state_ = proto::HandshakeState::Connected;
}

void PerformerEngine::dispatch(const proto::Message& m, double local_ms)
{
    using namespace proto;
    std::visit(
        overloaded{
            [&](const Welcome& w) {
                auto step = handshake_step(state_, m);
                if (step.state == state_) {
                    apply_handshake(step, &m, local_ms);
                    return;
                }
                state_ = step.state;
                if (performer_id_ && *performer_id_ != w.performer_id)
                    windows_.clear(); // a different slot; nothing we hold is ours
                performer_id_ = w.performer_id;
                n_expected_ = w.n_expected;
                schedule_ = config_.stagger_offsets.empty() ? build_schedule(n_expected_)
                                                            : StaggerSchedule(config_.stagger_offsets);
                start_ping_burst(local_ms);
            },
            [&](const Seed& s) {
                auto step = handshake_step(state_, m);
                if (step.state == state_ && state_ != HandshakeState::Seeded) {
                    apply_handshake(step, &m, local_ms);
                    return;
                }
                state_ = step.state;
                seed_ = s;
                begin_initial_generation(local_ms);
            },
            [&](const Start&) {
                auto step = handshake_step(state_, m);
                apply_handshake(step, &m, local_ms);
            },
            [&](const Resync&) {
                auto step = handshake_step(state_, m);
                apply_handshake(step, &m, local_ms);
            },
            [&](const Stop& s) {
                if (state_ == HandshakeState::Running && s.at_tick && clock_.ready() &&
                    *s.at_tick > now_tick(local_ms)) {
                    stop_at_ = *s.at_tick;
                    return;
                }
                auto step = handshake_step(state_, m);
                apply_handshake(step, &m, local_ms);
            },
            [&](const ClockPong& p) {
                clock_.add(ClockSample{p.client_send_ms, p.server_ms, local_ms});
                check_model_ready(local_ms);
            },
            [&](const TempoChange& t) {
                if (state_ == HandshakeState::Running) {
                    try {
                        tempo_.add_change(t.effective_bar, t.tempo_bpm);
                    } catch (const std::invalid_argument& e) {
                        spdlog::warn("performer={} event=tempo-change-ignored reason=\"{}\"",
                                     performer_id_.value_or(-1), e.what());
                    }
                } else if (t.effective_bar == 0 && seed_) {
                    seed_->tempo_bpm = t.tempo_bpm;
                } else {
                    pending_tempo_.push_back(t);
                }
            },
            [&](const Plan& p) { plan_ = p; },
            [&](const Control& c) {
                if (!performer_id_ || c.performer_id != *performer_id_)
                    return;
                if (handle_control(c.field, c.value))
                    outbox_.push_back(c);
                else
                    outbox_.push_back(Reject{std::string("out of range for ") + field_name(c.field), "Control"});
            },
            [&](const Reject& r) {
                spdlog::warn("performer={} event=rejected reason=\"{}\" ref={}", performer_id_.value_or(-1), r.reason,
                             r.ref);
                if (r.ref == "Hello") {
                    rejected_ = true;
                    halted_ = true;
                }
            },
            [&](const auto&) {},
        },
        m);
}

void PerformerEngine::apply_handshake(const proto::HandshakeStep& step, const proto::Message* m, double local_ms)
{
    using proto::HandshakeAction;
    const auto prev = state_;
    state_ = step.state;
    for (auto action : step.actions) {
        switch (action) {
        case HandshakeAction::ProtocolViolation:
            spdlog::warn("performer={} event=protocol-violation state={} message={}", performer_id_.value_or(-1),
                         proto::state_name(prev), m ? proto::type_name(*m) : "ModelLoaded");
            break;
        case HandshakeAction::SendReady:
            outbox_.push_back(proto::Ready{performer_id_.value_or(0)});
            break;
        case HandshakeAction::StartPlayback:
            start_playback(*m, local_ms);
            break;
        case HandshakeAction::StopPlayback: {
            const auto* stop = std::get_if<proto::Stop>(m);
            Tick at = last_tick_;
            if (prev == proto::HandshakeState::Running && clock_.ready())
                at = std::max(now_tick(local_ms), last_tick_);
            if (stop && stop->at_tick && *stop->at_tick >= last_tick_)
                at = std::min(at, *stop->at_tick);
            stop_now(std::max(at, Tick{0}));
            break;
        }
        case HandshakeAction::BeginInitialGeneration:
            begin_initial_generation(local_ms);
            break;
        }
    }
}

void PerformerEngine::begin_initial_generation(double local_ms)
{
    if (rejoining_ && !windows_.empty()) {
        check_model_ready(local_ms);
        return;
    }
    windows_.clear();
    installed_.clear();
    pending_install_.reset();
    gen_.reset();
    job_.reset();
    NoteSequence prev = seed_->seed_melody;
    if (prev.length_bars() > kWindowBars)
        prev = slice_last_bars(prev, kWindowBars, prev.length_bars());
    queue_job(0, true, std::move(prev), -1, local_ms);
}

void PerformerEngine::check_model_ready(double local_ms)
{
    (void)local_ms;
    if (state_ != proto::HandshakeState::Seeded || gen_)
        return;
    const bool buffers = (windows_.count(0) && windows_.count(1)) || (rejoining_ && !windows_.empty());
    if (!buffers || !clock_.ready())
        return;
    apply_handshake(proto::handshake_step(state_, proto::ModelLoaded{}), nullptr, local_ms);
}

void PerformerEngine::start_playback(const proto::Message& m, double local_ms)
{
    if (const auto* start = std::get_if<proto::Start>(&m)) {
        tempo_ = TempoMap(make_clock(seed_ ? seed_->tempo_bpm : 120.0, start->start_epoch_ms));
        for (const auto& t : pending_tempo_)
            tempo_.add_change(t.effective_bar, t.tempo_bpm);
        pending_tempo_.clear();
        last_tick_ = -1;
    } else if (const auto* resync = std::get_if<proto::Resync>(&m)) {
        tempo_ = TempoMap(make_clock(resync->base_tempo_bpm, resync->start_epoch_ms));
        for (const auto& t : resync->tempo_changes)
            tempo_.add_change(t.effective_bar, t.tempo_bpm);
        const Tick now = now_tick(local_ms);
        const Tick resume = ceil_to_grid(std::max<Tick>(now, 0), kSixteenthTicks);
        last_tick_ = std::max(last_tick_, resume - 1);
        const int cur = static_cast<int>(std::max<Tick>(now, 0) / kWindowTicks);
        std::erase_if(windows_, [&](const auto& kv) { return kv.first < cur; });
        if (pending_install_ && pending_install_->window < cur)
            pending_install_.reset();
        resumes_.push_back(ResumeRecord{now, resume});
        spdlog::info("performer={} event=resync server_tick={} resume_tick={}", performer_id_.value_or(-1), now,
                     resume);
    }
    halted_ = false;
    rejoining_ = false;
}

void PerformerEngine::stop_now(Tick at_tick)
{
    release_all(at_tick);
    stop_at_.reset();
    state_ = proto::HandshakeState::Stopped;
}

void PerformerEngine::start_ping_burst(double local_ms)
{
    pings_left_ = config_.ping_burst;
    next_ping_ms_ = local_ms;
    next_burst_ms_.reset();
    pump_pings(local_ms);
}

void PerformerEngine::pump_pings(double local_ms)
{
    if (!connected_ || !performer_id_ || frozen())
        return;
    if (pings_left_ == 0 && next_burst_ms_ && local_ms >= *next_burst_ms_) {
        pings_left_ = config_.ping_burst;
        next_ping_ms_ = *next_burst_ms_;
        next_burst_ms_.reset();
    }
    while (pings_left_ > 0 && local_ms >= next_ping_ms_) {
        outbox_.push_back(proto::ClockPing{local_ms});
        --pings_left_;
        next_ping_ms_ += config_.ping_spacing_ms;
        if (pings_left_ == 0)
            next_burst_ms_ = local_ms + config_.ping_refresh_ms;
    }
}

// --- playback ----------------------------------------------------------------

bool PerformerEngine::frozen() const noexcept
{
    return config_.sink_mode == SinkMode::Blocking && gen_.has_value();
}

Tick PerformerEngine::now_tick(double local_ms) const
{
    if (!clock_.ready())
        return last_tick_;
    return tempo_.ms_to_tick(clock_.to_server(local_ms));
}

double PerformerEngine::tick_to_local(Tick tick) const
{
    return clock_.to_local(tempo_.tick_to_ms(tick));
}

std::optional<Tick> PerformerEngine::server_tick(double local_ms) const
{
    if (state_ != proto::HandshakeState::Running || !clock_.ready())
        return std::nullopt;
    return now_tick(local_ms);
}

std::vector<SinkEvent> PerformerEngine::advance(double local_ms)
{
    pump_pings(local_ms);
    if (state_ != proto::HandshakeState::Running || halted_ || frozen())
        return take_events();

    const Tick now = now_tick(local_ms);
    if (stop_at_ && now >= *stop_at_) {
        emit_until(*stop_at_ - 1);
        stop_now(*stop_at_);
        return take_events();
    }
    emit_until(now);
    maybe_fade(now, local_ms);
    maybe_start_generation(now, local_ms);
    return take_events();
}

std::optional<PerformerEngine::ModelCursor> PerformerEngine::next_model_event(Tick after) const
{
    const int first = after < 0 ? 0 : static_cast<int>((after + 1) / kWindowTicks);
    for (auto it = windows_.lower_bound(first); it != windows_.end(); ++it) {
        const Tick base = Tick{it->first} * kWindowTicks;
        const auto events = it->second.events();
        auto pos = std::upper_bound(events.begin(), events.end(), after - base,
                                    [](Tick t, const NoteEvent& ev) { return t < ev.onset; });
        if (pos != events.end())
            return ModelCursor{base + pos->onset, it->first, static_cast<std::size_t>(pos - events.begin())};
    }
    return std::nullopt;
}

std::optional<Tick> PerformerEngine::next_off_tick() const
{
    std::optional<Tick> best;
    for (const auto& s : sounding_) {
        if (s.end_tick != kOpen && (!best || s.end_tick < *best))
            best = s.end_tick;
    }
    return best;
}

void PerformerEngine::emit_until(Tick now)
{
    for (;;) {
        const auto off = next_off_tick();
        const auto on = next_model_event(last_tick_);
        const Tick boundary = (last_tick_ < 0 ? 0 : (last_tick_ / kWindowTicks + 1) * kWindowTicks);

        Tick t = boundary;
        if (off)
            t = std::min(t, *off);
        if (on)
            t = std::min(t, on->tick);
        if (pending_install_)
            t = std::min(t, std::max(pending_install_->install_tick, last_tick_ + 1));
        if (t > now)
            break;

        // Releases first so a pitch can retrigger on the same tick.
        for (;;) {
            auto it = std::min_element(sounding_.begin(), sounding_.end(), [](const Sounding& a, const Sounding& b) {
                return std::pair(a.end_tick, a.emitted_pitch) < std::pair(b.end_tick, b.emitted_pitch);
            });
            if (it == sounding_.end() || it->end_tick > t)
                break;
            emit_note_off(static_cast<std::size_t>(it - sounding_.begin()), t);
        }

        if (pending_install_ && pending_install_->install_tick <= t) {
            const int w = pending_install_->window;
            installed_.push_back(WindowRecord{w, pending_install_->sequence.size(), t});
            windows_[w] = std::move(pending_install_->sequence);
            pending_install_.reset();
        }

        if (t == boundary) {
            const int w = static_cast<int>(boundary / kWindowTicks);
            std::erase_if(windows_, [&](const auto& kv) { return kv.first < w; });
            if (!windows_.count(w) && underrun_window_ != w) {
                underruns_.push_back(Underrun{w, boundary});
                underrun_window_ = w;
            }
        }

        const int w = static_cast<int>(t / kWindowTicks);
        if (auto it = windows_.find(w); it != windows_.end()) {
            const Tick base = Tick{w} * kWindowTicks;
            const auto events = it->second.events();
            auto [lo, hi] = std::equal_range(events.begin(), events.end(), NoteEvent{0, t - base, 1, 0},
                                             [](const NoteEvent& a, const NoteEvent& b) { return a.onset < b.onset; });
            for (auto ev = lo; ev != hi; ++ev) {
                if (controls_.mode == EngagementMode::Manual)
                    continue;
                const int pitch = std::clamp(ev->pitch + controls_.transpose_semitones, 0, 127);
                if (emit_note_on(pitch, ev->velocity, t, NoteOrigin::Model, t + ev->duration))
                    played_.back().pitch = ev->pitch;
            }
        }
        last_tick_ = t;
    }
    last_tick_ = std::max(last_tick_, now);
}

bool PerformerEngine::emit_note_on(int pitch, int velocity, Tick at, NoteOrigin origin, Tick end_tick)
{
    const int scaled = static_cast<int>(std::lround(velocity * controls_.volume));
    if (scaled <= 0)
        return false;
    events_.push_back(SinkEvent{NoteKind::NoteOn, pitch, std::min(scaled, 127), at, origin});
    played_.push_back(PlayedNote{at, kOpen, pitch, velocity});
    sounding_.push_back(Sounding{pitch, end_tick, origin, played_.size() - 1});
    return true;
}

void PerformerEngine::emit_note_off(std::size_t index, Tick at)
{
    const Sounding s = sounding_[index];
    sounding_.erase(sounding_.begin() + static_cast<std::ptrdiff_t>(index));
    events_.push_back(SinkEvent{NoteKind::NoteOff, s.emitted_pitch, 0, at, s.origin});
    played_[s.played_index].end = at;
}

void PerformerEngine::release_all(Tick at)
{
    while (!sounding_.empty())
        emit_note_off(0, at);
}

NoteSequence PerformerEngine::played_between(int from_bar, int to_bar) const
{
    const Tick lo = bar_to_tick(from_bar);
    const Tick hi = bar_to_tick(to_bar);
    std::vector<NoteEvent> out;
    for (const auto& p : played_) {
        if (p.onset < lo || p.onset >= hi)
            continue;
        const Tick end = std::min(p.end == kOpen ? hi : p.end, hi);
        if (end - p.onset < 1)
            continue;
        out.push_back(NoteEvent{p.pitch, p.onset - lo, end - p.onset, std::clamp(p.velocity, 0, 127)});
    }
    return NoteSequence(std::max(to_bar - from_bar, 1), std::move(out));
}

// --- generation ----------------------------------------------------------------

std::optional<PerformerEngine::GenerationPlan> PerformerEngine::plan_generation(Tick now) const
{
    if (!schedule_ || !performer_id_ || gen_ || job_ || pending_install_)
        return std::nullopt;
    const int cur = static_cast<int>(std::max<Tick>(now, 0) / kWindowTicks);
    if (stop_at_ && Tick{cur} * kWindowTicks >= *stop_at_)
        return std::nullopt;
    if (!windows_.count(cur))
        return GenerationPlan{cur, now};
    if (windows_.count(cur + 1))
        return std::nullopt;
    if (stop_at_ && Tick{cur + 1} * kWindowTicks >= *stop_at_)
        return std::nullopt;
    const int offset = schedule_->offset(*performer_id_ % schedule_->n_performers());
    const int deadline = kWindowBars * cur + offset;
    if (config_.sink_mode == SinkMode::Blocking)
        return GenerationPlan{cur + 1, bar_to_tick(deadline)};
    const Tick start = generation_start_tick(tempo_, deadline, kWindowBars * (cur + 1), kWindowBars * cur,
                                             predictor_.predict());
    return GenerationPlan{cur + 1, start};
}

void PerformerEngine::maybe_start_generation(Tick now, double local_ms)
{
    const auto plan = plan_generation(now);
    if (!plan || now < plan->start_tick)
        return;
    const int end_bar = static_cast<int>(tick_to_bar(std::max<Tick>(now, 0)));
    const int span = std::min(kWindowBars, end_bar);
    NoteSequence prev = span >= 1 ? played_between(end_bar - span, end_bar) : seed_->seed_melody;
    if (prev.length_bars() > kWindowBars)
        prev = slice_last_bars(prev, kWindowBars, prev.length_bars());
    // A blocking sink goes silent for the whole generation.
    const int released = static_cast<int>(sounding_.size());
    if (config_.sink_mode == SinkMode::Blocking)
        release_all(now);
    queue_job(plan->window, false, std::move(prev), now, local_ms);
    gen_->released = config_.sink_mode == SinkMode::Blocking ? released : 0;
}

void PerformerEngine::maybe_fade(Tick now, double local_ms)
{
    if (!controls_.auto_fade_enabled)
        return;
    const auto plan = plan_generation(now);
    if (!plan || faded_for_window_ == plan->window)
        return;
    const double eta = tempo_.tick_to_ms(std::max(plan->start_tick, now)) - clock_.to_server(local_ms);
    if (eta > kFadeMs)
        return;
    const auto cmds = auto_fade(true, eta, controls_.volume);
    volume_before_fade_ = controls_.volume;
    volume_.push_back(VolumeRamp{now, cmds[0].target, cmds[0].ramp_ms});
    faded_for_window_ = plan->window;
}

void PerformerEngine::queue_job(int window, bool initial, NoteSequence prev, Tick start_tick, double local_ms)
{
    GenerationJob job;
    job.id = next_job_id_++;
    job.window = window;
    job.initial = initial;
    job.request.prev = std::move(prev);
    job.request.progression = seed_ ? seed_->progression : ChordProgression{};
    job.request.start_bar = kWindowBars * window;
    job.request.temperature = controls_.temperature;
    job.request.seed = splitmix64(config_.seed ^ splitmix64(generation_counter_++));
    gen_ = InFlight{job.id, window, initial, start_tick, local_ms};
    job_ = std::move(job);
    if (!initial && performer_id_)
        outbox_.push_back(proto::GenStart{*performer_id_, start_tick});
}

std::optional<GenerationJob> PerformerEngine::take_job()
{
    return std::exchange(job_, std::nullopt);
}

void PerformerEngine::on_generation_done(std::uint64_t job_id, const GenerationResult& result, double local_ms)
{
    if (!gen_ || gen_->id != job_id)
        return;
    const InFlight g = *gen_;
    gen_.reset();
    const double measured = result.latency_ms;
    predictor_.observe(measured);

    if (g.initial) {
        windows_[g.window] = result.sequence;
        installed_.push_back(WindowRecord{g.window, result.sequence.size(), -1});
        if (g.window == 0)
            queue_job(1, true, result.sequence, -1, local_ms);
        else
            check_model_ready(local_ms);
    } else {
        if (performer_id_)
            outbox_.push_back(proto::GenDone{*performer_id_, measured});
        ++regenerations_;
        if (halted_ || state_ != proto::HandshakeState::Running) {
            windows_[g.window] = result.sequence;
            installed_.push_back(WindowRecord{g.window, result.sequence.size(), -1});
        } else {
            const Tick now = std::max(now_tick(local_ms), last_tick_);
            const Tick resume = reinsertion_tick(std::max<Tick>(g.start_tick, 0), measured,
                                                 tempo_.clock_at(g.start_tick));
            if (config_.sink_mode == SinkMode::Blocking) {
                for (auto& [w, seq] : windows_) {
                    const Tick base = Tick{w} * kWindowTicks;
                    const Tick lo = std::clamp(g.start_tick - base, Tick{0}, kWindowTicks);
                    const Tick hi = std::clamp(resume - base, Tick{0}, kWindowTicks);
                    if (lo < hi)
                        seq = prune_frozen_span(seq, lo, hi).sequence;
                }
                release_all(now);
                windows_[g.window] = result.sequence;
                installed_.push_back(WindowRecord{g.window, result.sequence.size(), now});
                freezes_.push_back(FreezeRecord{performer_id_.value_or(0), g.start_tick, measured, resume, g.released});
                last_tick_ = std::max(last_tick_, resume - 1);
            } else {
                pending_install_ = PendingInstall{g.window, result.sequence, ceil_to_grid(now, kTicksPerBar)};
                freezes_.push_back(FreezeRecord{performer_id_.value_or(0), g.start_tick, measured, resume, 0});
            }
            if (faded_for_window_ == g.window)
                volume_.push_back(VolumeRamp{now, volume_before_fade_, kFadeMs});
        }
    }

    // Messages that queued up behind a freeze. Clock pongs among them carry the
    // freeze in their round trip, so they are dropped and re-measured.
    bool stale_pongs = false;
    while (!deferred_.empty() && !frozen()) {
        auto m = std::move(deferred_.front().first);
        deferred_.erase(deferred_.begin());
        if (std::holds_alternative<proto::ClockPong>(m)) {
            stale_pongs = true;
            continue;
        }
        dispatch(m, local_ms);
    }
    if (stale_pongs && connected_)
        start_ping_burst(local_ms);
}

// --- local input ---------------------------------------------------------------

bool PerformerEngine::handle_control(proto::ControlField field, double value)
{
    const bool ok = apply_control(controls_, field, value);
    if (!ok) {
        spdlog::warn("performer={} event=control-rejected field={} value={}", performer_id_.value_or(-1),
                     proto::field_name(field), value);
    }
    return ok;
}

void PerformerEngine::manual_note_on(int pitch, int velocity, double local_ms)
{
    if (state_ != proto::HandshakeState::Running || halted_ || frozen())
        return;
    if (controls_.mode == EngagementMode::Auto || pitch < 0 || pitch > 127)
        return;
    const Tick now = now_tick(local_ms);
    if (now < 0)
        return;
    emit_until(now);
    emit_note_on(pitch, std::clamp(velocity, 1, 127), now, NoteOrigin::Manual, kOpen);
}

void PerformerEngine::manual_note_off(int pitch, double local_ms)
{
    if (state_ != proto::HandshakeState::Running || frozen())
        return;
    for (std::size_t i = 0; i < sounding_.size(); ++i) {
        if (sounding_[i].origin == NoteOrigin::Manual && sounding_[i].emitted_pitch == pitch) {
            emit_note_off(i, std::max(now_tick(local_ms), played_[sounding_[i].played_index].onset));
            return;
        }
    }
}

std::optional<double> PerformerEngine::next_wakeup(double local_ms) const
{
    (void)local_ms;
    std::optional<double> best;
    const auto consider = [&](double t) {
        if (!best || t < *best)
            best = t;
    };
    // Deadlines plus a microsecond so a caller converting clocks cannot land just short.
    if (connected_ && performer_id_ && !frozen()) {
        if (pings_left_ > 0)
            consider(next_ping_ms_ + 1e-3);
        else if (next_burst_ms_)
            consider(*next_burst_ms_ + 1e-3);
    }
    if (state_ != proto::HandshakeState::Running || halted_ || frozen() || !clock_.ready())
        return best;

    std::optional<Tick> tick;
    const auto consider_tick = [&](Tick t) {
        t = std::max(t, last_tick_ + 1);
        if (!tick || t < *tick)
            tick = t;
    };
    if (auto off = next_off_tick())
        consider_tick(*off);
    if (auto on = next_model_event(last_tick_))
        consider_tick(on->tick);
    if (pending_install_)
        consider_tick(pending_install_->install_tick);
    if (stop_at_)
        consider_tick(*stop_at_);
    if (auto plan = plan_generation(last_tick_)) {
        consider_tick(plan->start_tick);
        if (controls_.auto_fade_enabled && faded_for_window_ != plan->window) {
            const double fade_at = clock_.to_local(tempo_.tick_to_ms(plan->start_tick) - kFadeMs);
            consider(fade_at + 1e-3);
        }
    }
    // A tick's nominal time plus a microsecond, so ms_to_tick lands on it.
    if (tick)
        consider(tick_to_local(*tick) + 1e-3);
    return best;
}

std::vector<proto::Message> PerformerEngine::take_outbox() { return std::exchange(outbox_, {}); }
std::vector<SinkEvent> PerformerEngine::take_events() { return std::exchange(events_, {}); }
std::vector<VolumeRamp> PerformerEngine::take_volume() { return std::exchange(volume_, {}); }

} // namespace ensemble
