#include "ensemble/sim.hpp"

#include "ensemble/errors.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <memory>
#include <queue>
#include <tuple>

namespace ensemble::sim {

const char* scenario_name(Scenario s) noexcept
{
    switch (s) {
    case Scenario::Nominal: return "nominal";
    case Scenario::Performance1Dropout: return "performance1-dropout";
    case Scenario::Performance2: return "performance2";
    }
    return "?";
}

std::optional<Scenario> parse_scenario(std::string_view text) noexcept
{
    for (auto s : {Scenario::Nominal, Scenario::Performance1Dropout, Scenario::Performance2}) {
        if (text == scenario_name(s))
            return s;
    }
    return std::nullopt;
}

void SimConfig::validate() const
{
    if (n_performers < 1 || n_performers > kMaxPerformers)
        throw ConfigError(fmt::format("performers must be within 1..16, got {}", n_performers));
    if (duration_bars < kWindowBars)
        throw ConfigError(fmt::format("duration must be at least 16 bars, got {}", duration_bars));
    if (!(tempo_bpm >= 40.0 && tempo_bpm <= 240.0))
        throw ConfigError(fmt::format("tempo must be within 40..240 BPM, got {}", tempo_bpm));
    if (!(freeze_ms >= 0.0) || !(freeze_spread_ms >= 0.0) || !std::isfinite(freeze_ms + freeze_spread_ms))
        throw ConfigError("freeze durations must be finite and non-negative");
    if (!(latency_ms >= 0.0) || !(jitter_ms >= 0.0) || !std::isfinite(latency_ms + jitter_ms))
        throw ConfigError("latency and jitter must be finite and non-negative");
    if (!(drop >= 0.0 && drop <= 1.0))
        throw ConfigError(fmt::format("drop probability must be within [0, 1], got {}", drop));
    if (!(clock_skew_ms >= 0.0) || !(outage_ms >= 0.0) || !(reconnect_ms > 0.0))
        throw ConfigError("skew and outage must be non-negative, reconnect interval positive");
    if (outage_bar < 0)
        throw ConfigError("outage bar must be non-negative");
    if (!stagger_offsets.empty()) {
        if (static_cast<int>(stagger_offsets.size()) != n_performers)
            throw ConfigError("one forced stagger offset per performer");
        (void)StaggerSchedule(stagger_offsets);
    }
    if (seed_melody && seed_melody->length_bars() > kWindowBars)
        throw ConfigError("seed melody must not exceed 16 bars");
}

ChordProgression default_progression(int bars)
{
    static const Chord cycle[] = {
        {0, ChordQuality::Major}, {7, ChordQuality::Major}, {9, ChordQuality::Minor}, {5, ChordQuality::Major}};
    std::vector<ProgressionEntry> entries;
    for (int bar = 0; bar < std::max(bars, 1); ++bar)
        entries.push_back({bar, cycle[bar % 4]});
    return ChordProgression(std::move(entries));
}

NoteSequence default_seed_melody()
{
    return NoteSequence(1, {{60, 0, 480, 96}, {64, 480, 480, 96}, {67, 960, 480, 96}, {72, 1440, 480, 96}});
}

proto::Plan performance2_plan()
{
    return proto::Plan{{
        {1, "settle into the progression"},
        {8, "bass and wind-chime voices come forward"},
        {96, "thin out: bring volumes down together"},
        {120, "begin to lower the intensity until soft by bar 150"},
    }};
}

std::uint64_t engine_seed(std::uint64_t seed, int index) noexcept
{
    return splitmix64(seed ^ (0x9e3779b97f4a7c15ULL * static_cast<std::uint64_t>(index + 1)));
}

namespace {

std::shared_ptr<const MelodyGenerator> make_generator(const SimConfig& c)
{
    auto model = std::make_shared<const GeneratorModel>(GeneratorModel::defaults(c.seed));
    const LatencyModel latency = c.freeze_spread_ms > 0.0
                                     ? LatencyModel::uniform(c.freeze_ms, c.freeze_ms + c.freeze_spread_ms)
                                     : LatencyModel::fixed(c.freeze_ms);
    return std::make_shared<MarkovMelodyGenerator>(std::move(model), latency);
}

EngineConfig engine_config(const SimConfig& c, int index)
{
    EngineConfig ec;
    ec.name = fmt::format("performer-{}", index);
    ec.sink_mode = c.sink_mode;
    ec.seed = engine_seed(c.seed, index);
    ec.controls.auto_fade_enabled = c.auto_fade;
    ec.stagger_offsets = c.stagger_offsets;
    return ec;
}

proto::Plan plan_for(const SimConfig& c)
{
    if (c.plan)
        return *c.plan;
    return c.scenario == Scenario::Performance2 ? performance2_plan() : proto::Plan{};
}

double bar_ms(double bpm) { return 4.0 * 60000.0 / bpm; }

class Simulation {
public:
    explicit Simulation(const SimConfig& config)
        : cfg_(config)
        , conductor_(make_conductor_config(config), [this](const std::string& line) {
            report_.server_log.push_back(line);
        })
        , generator_(make_generator(config))
        , net_rng_(splitmix64(config.seed ^ 0x6e6574776f726bULL))
    {
        Rng skew_rng(splitmix64(config.seed ^ 0x736b6577ULL));
        for (int i = 0; i < cfg_.n_performers; ++i) {
            Perf p;
            p.engine = std::make_unique<PerformerEngine>(engine_config(cfg_, i), generator_);
            p.skew = (skew_rng.uniform01() * 2.0 - 1.0) * cfg_.clock_skew_ms;
            perfs_.push_back(std::move(p));
        }
    }

    SimReport run()
    {
        report_.config = cfg_;
        for (int i = 0; i < cfg_.n_performers; ++i)
            schedule(100.0 * i, [this, i] { connect(i); });
        // Watchdog in case the ensemble never starts or never stops.
        schedule(600000.0 + 2.0 * cfg_.duration_bars * bar_ms(40.0), [this] { ended_ = true; });

        while (!queue_.empty() && !ended_) {
            Event ev = queue_.top();
            queue_.pop();
            now_ = ev.at;
            ev.fn();
        }

        report_.start_epoch_ms = conductor_.start_epoch_ms().value_or(0.0);
        report_.tempo = conductor_.tempo();
        report_.start_messages = conductor_.start_count();
        report_.stop_tick = conductor_.stop_tick().value_or(0);
        for (auto& p : perfs_) {
            report_.engine_epochs.push_back(p.engine->tempo().epoch_ms());
            for (const auto& f : p.engine->freezes())
                report_.freezes.push_back(f);
            for (const auto& u : p.engine->underruns())
                report_.underruns.push_back(PerformerUnderrun{id_of(p), u});
        }
        std::stable_sort(report_.freezes.begin(), report_.freezes.end(), [](const auto& a, const auto& b) {
            return std::tie(a.freeze_start_tick, a.performer_id) < std::tie(b.freeze_start_tick, b.performer_id);
        });
        report_.violations = check(report_);
        report_.summary = summarize(report_);
        return std::move(report_);
    }

private:
    struct Event {
        double at;
        std::uint64_t seq;
        std::function<void()> fn;
    };
    struct Later {
        bool operator()(const Event& a, const Event& b) const { return std::tie(a.at, a.seq) > std::tie(b.at, b.seq); }
    };
    struct Link {
        bool up = false;
        std::uint64_t epoch = 0;
        ConnectionId conn = 0;
        double last_up = 0.0;
        double last_down = 0.0;
    };
    struct Perf {
        std::unique_ptr<PerformerEngine> engine;
        double skew = 0.0;
        Link link;
        std::uint64_t wake_token = 0;
        std::optional<double> wake_at;
        std::size_t resumes_seen = 0;
        std::optional<std::size_t> open_outage;
    };

    static ConductorConfig make_conductor_config(const SimConfig& c)
    {
        ConductorConfig cc;
        cc.n_expected = c.n_performers;
        cc.tempo_bpm = c.tempo_bpm;
        cc.progression = c.progression.value_or(default_progression(std::max(256, c.duration_bars + 16)));
        cc.seed_melody = c.seed_melody.value_or(default_seed_melody());
        cc.plan = plan_for(c);
        return cc;
    }

    static int id_of(const Perf& p) { return p.engine->performer_id().value_or(-1); }

    void schedule(double at, std::function<void()> fn) { queue_.push(Event{at, seq_++, std::move(fn)}); }

    double local(int p) const { return now_ + perfs_[static_cast<std::size_t>(p)].skew; }

    double delay()
    {
        const double j = cfg_.jitter_ms > 0.0 ? (net_rng_.uniform01() * 2.0 - 1.0) * cfg_.jitter_ms : 0.0;
        return std::max(0.0, cfg_.latency_ms + j);
    }

    bool dropped() { return cfg_.drop > 0.0 && net_rng_.uniform01() < cfg_.drop; }

    void connect(int i)
    {
        Perf& p = perfs_[static_cast<std::size_t>(i)];
        if (p.link.up || p.engine->rejected() || p.engine->state() == proto::HandshakeState::Stopped)
            return;
        if (now_ < outage_until_) {
            schedule(now_ + cfg_.reconnect_ms, [this, i] { connect(i); });
            return;
        }
        p.link.up = true;
        ++p.link.epoch;
        p.link.conn = next_conn_++;
        p.link.last_up = p.link.last_down = now_;
        conn_perf_[p.link.conn] = i;
        conductor_.on_open(p.link.conn, now_);
        p.engine->on_connected(local(i));
        flush_engine(i);
        flush_server();
    }

    void sever(int i)
    {
        Perf& p = perfs_[static_cast<std::size_t>(i)];
        if (!p.link.up)
            return;
        p.link.up = false;
        conn_perf_.erase(p.link.conn);
        conductor_.on_close(p.link.conn, now_);
        const bool running = p.engine->state() == proto::HandshakeState::Running;
        if (running) {
            p.open_outage = report_.outages.size();
            report_.outages.push_back(Outage{id_of(p), now_, std::nullopt, std::nullopt});
        }
        flush_server();
        // The client notices one link latency later.
        schedule(now_ + cfg_.latency_ms, [this, i] {
            Perf& q = perfs_[static_cast<std::size_t>(i)];
            q.engine->on_disconnected(local(i));
            if (q.open_outage)
                report_.outages[*q.open_outage].noticed_ms = now_;
            flush_engine(i);
            schedule(now_ + cfg_.reconnect_ms, [this, i] { connect(i); });
        });
    }

    void send_up(int i, proto::Message m)
    {
        Perf& p = perfs_[static_cast<std::size_t>(i)];
        if (!p.link.up)
            return;
        if (dropped()) {
            sever(i);
            return;
        }
        const double at = std::max(now_ + delay(), p.link.last_up);
        p.link.last_up = at;
        schedule(at, [this, i, epoch = p.link.epoch, conn = p.link.conn, m = std::move(m)] {
            const Link& l = perfs_[static_cast<std::size_t>(i)].link;
            if (!l.up || l.epoch != epoch)
                return;
            conductor_.on_message(conn, m, now_);
            flush_server();
        });
    }

    void flush_server()
    {
        for (auto& out : conductor_.take_outbox()) {
            auto it = conn_perf_.find(out.to);
            if (it == conn_perf_.end())
                continue;
            const int i = it->second;
            Perf& p = perfs_[static_cast<std::size_t>(i)];
            if (!p.link.up || p.link.conn != out.to)
                continue;
            if (dropped()) {
                sever(i);
                continue;
            }
            const double at = std::max(now_ + delay(), p.link.last_down);
            p.link.last_down = at;
            schedule(at, [this, i, epoch = p.link.epoch, m = std::move(out.msg)] {
                Perf& q = perfs_[static_cast<std::size_t>(i)];
                if (!q.link.up || q.link.epoch != epoch)
                    return;
                q.engine->on_message(m, local(i));
                flush_engine(i);
            });
        }
        if (!started_ && conductor_.start_epoch_ms()) {
            started_ = true;
            const double epoch = *conductor_.start_epoch_ms();
            schedule(epoch, [this] { on_bar(0); });
        }
    }

    void record(int i, const std::vector<SinkEvent>& events)
    {
        Perf& p = perfs_[static_cast<std::size_t>(i)];
        for (const auto& ev : events)
            report_.events.push_back(LoggedEvent{id_of(p), ev, now_});
        report_.volume_ramps += static_cast<int>(p.engine->take_volume().size());
        const auto& resumes = p.engine->resumes();
        for (; p.resumes_seen < resumes.size(); ++p.resumes_seen) {
            const Tick true_tick = conductor_.tempo().ms_to_tick(now_);
            report_.resumes.push_back(PerformerResume{id_of(p), resumes[p.resumes_seen], now_, true_tick});
            if (p.open_outage) {
                report_.outages[*p.open_outage].resumed_ms = now_;
                p.open_outage.reset();
            }
        }
    }

    void flush_engine(int i)
    {
        Perf& p = perfs_[static_cast<std::size_t>(i)];
        PerformerEngine& e = *p.engine;
        record(i, e.take_events());
        for (auto& m : e.take_outbox())
            send_up(i, std::move(m));
        while (auto job = e.take_job()) {
            GenerationResult result = e.generator().generate(job->request);
            const double at = now_ + result.latency_ms;
            schedule(at, [this, i, id = job->id, result = std::move(result)] {
                perfs_[static_cast<std::size_t>(i)].engine->on_generation_done(id, result, local(i));
                flush_engine(i);
            });
        }
        reschedule(i);
    }

    void reschedule(int i)
    {
        Perf& p = perfs_[static_cast<std::size_t>(i)];
        const auto wake = p.engine->next_wakeup(local(i));
        if (!wake) {
            p.wake_at.reset();
            ++p.wake_token;
            return;
        }
        const double at = std::max(*wake - p.skew, now_);
        if (p.wake_at && *p.wake_at == at)
            return;
        p.wake_at = at;
        schedule(at, [this, i, token = ++p.wake_token] {
            Perf& q = perfs_[static_cast<std::size_t>(i)];
            if (token != q.wake_token)
                return;
            q.wake_at.reset();
            record(i, q.engine->advance(local(i)));
            flush_engine(i);
        });
    }

    int index_of(int performer_id) const
    {
        for (std::size_t i = 0; i < perfs_.size(); ++i) {
            if (perfs_[i].engine->performer_id() == performer_id)
                return static_cast<int>(i);
        }
        return -1;
    }

    void control(int performer_id, proto::ControlField field, double value)
    {
        conductor_.send_control(performer_id, field, value, now_);
    }

    void manual_notes(int bar)
    {
        const int i = index_of(2);
        if (i < 0)
            return;
        const auto& prog = conductor_.config().progression;
        const Chord chord = chord_at(prog, bar);
        const auto tones = chord_tones(chord);
        for (int beat = 0; beat < kBeatsPerBar; ++beat) {
            const Tick on = bar_to_tick(bar) + Tick{beat} * kPpq;
            const int pitch = 48 + tones[static_cast<std::size_t>(beat % 3)];
            // A human lands a few ms off the beat.
            const double on_ms = conductor_.tempo().tick_to_ms(on) + 3.0;
            const double off_ms = conductor_.tempo().tick_to_ms(on + 360) + 3.0;
            schedule(on_ms, [this, i, pitch] {
                perfs_[static_cast<std::size_t>(i)].engine->manual_note_on(pitch, 80, local(i));
                flush_engine(i);
            });
            schedule(off_ms, [this, i, pitch] {
                perfs_[static_cast<std::size_t>(i)].engine->manual_note_off(pitch, local(i));
                flush_engine(i);
            });
        }
    }

    void script(int bar)
    {
        using proto::ControlField;
        if (cfg_.scenario == Scenario::Performance1Dropout && bar == cfg_.outage_bar) {
            outage_until_ = now_ + cfg_.outage_ms;
            report_.server_log.push_back(fmt::format("t={:.3f} event=outage bar={} ms={:.3f}", now_, bar,
                                                     cfg_.outage_ms));
            for (int i = 0; i < cfg_.n_performers; ++i)
                sever(i);
        }
        if (cfg_.scenario != Scenario::Performance2)
            return;
        if (bar == 2) {
            control(0, ControlField::Temperature, 0.1);
            control(0, ControlField::Transpose, -24);
            control(1, ControlField::Temperature, 3.0);
            control(1, ControlField::Transpose, 24);
        }
        if (bar == 3)
            control(3, ControlField::AutoFade, 1.0);
        if (bar == 4)
            control(2, ControlField::Mode, static_cast<double>(EngagementMode::Hybrid));
        if (bar >= 5)
            manual_notes(bar);
        if (bar == 48)
            conductor_.set_tempo(110.0, 56, now_);
        if (bar >= 96 && bar <= 108 && bar % 4 == 0) {
            const double volume = 1.0 - 0.15 * ((bar - 96) / 4 + 1);
            for (int id = 0; id < cfg_.n_performers; ++id)
                control(id, ControlField::Volume, volume);
        }
    }

    void on_bar(int bar)
    {
        script(bar);
        if (bar == cfg_.duration_bars - 1) {
            conductor_.stop(now_);
            flush_server();
            const double stop_ms = conductor_.tempo().tick_to_ms(*conductor_.stop_tick());
            schedule(stop_ms + 2000.0, [this] { ended_ = true; });
            return;
        }
        flush_server();
        schedule(conductor_.tempo().tick_to_ms(bar_to_tick(bar + 1)), [this, bar] { on_bar(bar + 1); });
    }

    SimConfig cfg_;
    SimReport report_;
    Conductor conductor_;
    std::shared_ptr<const MelodyGenerator> generator_;
    std::vector<Perf> perfs_;
    Rng net_rng_;
    std::priority_queue<Event, std::vector<Event>, Later> queue_;
    std::uint64_t seq_ = 0;
    double now_ = 0.0;
    std::map<ConnectionId, int> conn_perf_;
    ConnectionId next_conn_ = 1;
    double outage_until_ = -1.0;
    bool started_ = false;
    bool ended_ = false;
};

void add(std::vector<Violation>& out, std::string name, int performer, Tick tick, std::string detail)
{
    out.push_back(Violation{std::move(name), performer, tick, std::move(detail)});
}

} // namespace

SimReport run(const SimConfig& config)
{
    config.validate();
    Simulation sim(config);
    return sim.run();
}

std::vector<Violation> check(const SimReport& report)
{
    std::vector<Violation> out;
    const SimConfig& c = report.config;
    const TempoMap& tm = report.tempo;

    // Start: one Start, one epoch for everyone.
    if (report.start_messages != 1)
        add(out, "start-count", -1, 0, fmt::format("{} Start broadcasts", report.start_messages));
    for (std::size_t i = 0; i < report.engine_epochs.size(); ++i) {
        if (report.engine_epochs[i] != report.start_epoch_ms)
            add(out, "start-mismatch", static_cast<int>(i), 0,
                fmt::format("engine epoch {:.3f} vs server {:.3f}", report.engine_epochs[i], report.start_epoch_ms));
    }

    // Note pairing and desync, per performer.
    std::map<int, std::map<int, std::vector<Tick>>> open;
    std::map<int, int> orphan_offs;
    std::map<int, Tick> first_orphan;
    std::map<int, std::pair<int, Tick>> desync; // count, first tick
    std::map<int, double> worst;
    for (const auto& le : report.events) {
        const auto& ev = le.event;
        if (ev.kind == NoteKind::NoteOn) {
            open[le.performer][ev.pitch].push_back(ev.at_tick);
        } else {
            auto& stack = open[le.performer][ev.pitch];
            if (stack.empty()) {
                if (orphan_offs[le.performer]++ == 0)
                    first_orphan[le.performer] = ev.at_tick;
            } else {
                stack.erase(stack.begin());
            }
        }
        const double d = std::abs(le.emitted_ms - tm.tick_to_ms(ev.at_tick));
        if (d > kDesyncToleranceMs) {
            auto& [count, first] = desync[le.performer];
            if (count++ == 0)
                first = ev.at_tick;
            worst[le.performer] = std::max(worst[le.performer], d);
        }
    }
    for (const auto& [performer, pitches] : open) {
        int stuck = 0;
        std::optional<Tick> first;
        for (const auto& [pitch, ticks] : pitches) {
            stuck += static_cast<int>(ticks.size());
            for (Tick t : ticks)
                first = first ? std::min(*first, t) : t;
        }
        if (stuck > 0)
            add(out, "stuck-note", performer, *first, fmt::format("{} note_on without note_off", stuck));
    }
    for (const auto& [performer, n] : orphan_offs) {
        if (n > 0)
            add(out, "orphan-note-off", performer, first_orphan[performer], fmt::format("{} unmatched note_off", n));
    }
    for (const auto& [performer, d] : desync) {
        add(out, "desync", performer, d.second,
            fmt::format("{} events beyond {} ms, worst {:.3f} ms", d.first, kDesyncToleranceMs, worst[performer]));
    }

    // Overlapping freezes, checked where the stagger bound promises none.
    const double bound_ms = (static_cast<double>(kWindowBars) / c.n_performers) * bar_ms(c.tempo_bpm);
    if (c.freeze_ms + c.freeze_spread_ms <= bound_ms) {
        const auto& fr = report.freezes;
        for (std::size_t a = 0; a < fr.size(); ++a) {
            const double a0 = tm.tick_to_ms(fr[a].freeze_start_tick);
            const double a1 = a0 + fr[a].freeze_ms;
            for (std::size_t b = a + 1; b < fr.size(); ++b) {
                if (fr[b].performer_id == fr[a].performer_id)
                    continue;
                const double b0 = tm.tick_to_ms(fr[b].freeze_start_tick);
                const double b1 = b0 + fr[b].freeze_ms;
                if (a0 < b1 && b0 < a1) {
                    add(out, "overlapping-freeze", fr[b].performer_id, std::max(fr[a].freeze_start_tick,
                                                                              fr[b].freeze_start_tick),
                        fmt::format("performers {} and {}", fr[a].performer_id, fr[b].performer_id));
                }
            }
        }
    }

    // Reinsertion lands on the grid, never before the unfrozen position.
    for (const auto& f : report.freezes) {
        const Tick raw = f.freeze_start_tick + ms_to_tick_delta(tm.clock_at(f.freeze_start_tick), f.freeze_ms);
        if (f.resume_tick % kSixteenthTicks != 0 || f.resume_tick < raw)
            add(out, "reinsertion-grid", f.performer_id, f.freeze_start_tick,
                fmt::format("resume {} raw {}", f.resume_tick, raw));
    }

    // Rejoin: grid-aligned, at the server's position.
    for (const auto& r : report.resumes) {
        const Tick resume = r.record.resume_tick;
        if (resume % kSixteenthTicks != 0)
            add(out, "rejoin-grid", r.performer, resume, "resume tick off the sixteenth grid");
        if (resume < r.true_tick - 2 || resume > ceil_to_grid(std::max<Tick>(r.true_tick, 0), kSixteenthTicks) +
                                                    kSixteenthTicks)
            add(out, "rejoin-position", r.performer, resume, fmt::format("server tick {}", r.true_tick));
    }

    // Halt: nothing new once a sixteenth has passed after the link died.
    for (const auto& o : report.outages) {
        const Tick at = std::max<Tick>(tm.ms_to_tick(o.severed_ms), 0);
        const double deadline = o.severed_ms + kSixteenthTicks * 60000.0 / (tm.tempo_at(at) * kPpq);
        for (const auto& le : report.events) {
            if (le.performer != o.performer || le.emitted_ms <= deadline)
                continue;
            if (o.resumed_ms && le.emitted_ms >= *o.resumed_ms)
                continue;
            add(out, "no-halt", o.performer, le.event.at_tick,
                fmt::format("emitted {:.3f} ms after the link dropped", le.emitted_ms - o.severed_ms));
            break;
        }
    }

    // Buffer continuity, non-blocking only; a window lost to an outage is excused.
    if (c.sink_mode == SinkMode::NonBlocking) {
        for (const auto& u : report.underruns) {
            bool excused = false;
            for (const auto& r : report.resumes) {
                if (r.performer == u.performer && r.record.resume_tick <= u.underrun.tick &&
                    u.underrun.tick - r.record.resume_tick <= kWindowTicks)
                    excused = true;
            }
            if (!excused)
                add(out, "buffer-underrun", u.performer, u.underrun.tick,
                    fmt::format("window {} missing at its start", u.underrun.window));
        }
    }
    return out;
}

SimSummary summarize(const SimReport& report)
{
    SimSummary s;
    s.events = report.events.size();
    for (const auto& le : report.events) {
        (le.event.kind == NoteKind::NoteOn ? s.note_ons : s.note_offs) += 1;
        s.max_desync_ms =
            std::max(s.max_desync_ms, std::abs(le.emitted_ms - report.tempo.tick_to_ms(le.event.at_tick)));
    }
    for (const auto& v : report.violations) {
        if (v.name == "stuck-note")
            s.stuck_notes += 1;
        if (v.name == "overlapping-freeze")
            s.overlapping_freezes += 1;
    }
    s.underruns = static_cast<int>(report.underruns.size());
    s.freezes = static_cast<int>(report.freezes.size());
    for (const auto& f : report.freezes)
        s.forced_offs += f.forced_offs;
    s.resumes = static_cast<int>(report.resumes.size());
    s.outages = static_cast<int>(report.outages.size());
    s.start_messages = report.start_messages;
    s.volume_ramps = report.volume_ramps;
    return s;
}

std::string format_report(const SimReport& r)
{
    const SimConfig& c = r.config;
    std::string out;
    auto line = [&out](const std::string& s) {
        out += s;
        out += '\n';
    };
    std::string offsets;
    for (int o : c.stagger_offsets)
        offsets += (offsets.empty() ? "" : ":") + std::to_string(o);
    line(fmt::format("config performers={} bars={} tempo={:.3f} freeze_ms={:.3f} freeze_spread_ms={:.3f} "
                     "latency_ms={:.3f} jitter_ms={:.3f} drop={:.6f} seed={} scenario={} sink={} auto_fade={} "
                     "skew_ms={:.3f} offsets={}",
                     c.n_performers, c.duration_bars, c.tempo_bpm, c.freeze_ms, c.freeze_spread_ms, c.latency_ms,
                     c.jitter_ms, c.drop, c.seed, scenario_name(c.scenario),
                     c.sink_mode == SinkMode::Blocking ? "blocking" : "non-blocking", c.auto_fade ? 1 : 0,
                     c.clock_skew_ms, offsets.empty() ? "even" : offsets));
    line(fmt::format("start epoch_ms={:.3f} stop_tick={}", r.start_epoch_ms, r.stop_tick));
    for (const auto& s : r.server_log)
        line("server " + s);
    line("events performer,tick,kind,pitch,velocity,origin,emitted_ms");
    for (const auto& le : r.events) {
        const auto& ev = le.event;
        line(fmt::format("{},{},{},{},{},{},{:.3f}", le.performer, ev.at_tick,
                         ev.kind == NoteKind::NoteOn ? "note_on" : "note_off", ev.pitch, ev.velocity,
                         ev.origin == NoteOrigin::Model ? "model" : "manual", le.emitted_ms));
    }
    for (const auto& f : r.freezes)
        line(fmt::format("freeze performer={} start_tick={} freeze_ms={:.3f} resume_tick={} forced_offs={}",
                         f.performer_id, f.freeze_start_tick, f.freeze_ms, f.resume_tick, f.forced_offs));
    for (const auto& o : r.outages)
        line(fmt::format("outage performer={} severed_ms={:.3f} noticed_ms={} resumed_ms={}", o.performer,
                         o.severed_ms, o.noticed_ms ? fmt::format("{:.3f}", *o.noticed_ms) : "-",
                         o.resumed_ms ? fmt::format("{:.3f}", *o.resumed_ms) : "-"));
    for (const auto& re : r.resumes)
        line(fmt::format("resume performer={} at_ms={:.3f} server_tick={} estimate_tick={} resume_tick={}",
                         re.performer, re.at_ms, re.true_tick, re.record.server_tick_estimate,
                         re.record.resume_tick));
    for (const auto& u : r.underruns)
        line(fmt::format("underrun performer={} window={} tick={}", u.performer, u.underrun.window, u.underrun.tick));
    for (const auto& v : r.violations)
        line(fmt::format("violation name={} performer={} tick={} detail=\"{}\"", v.name, v.performer, v.tick,
                         v.detail));
    const SimSummary& s = r.summary;
    line("summary");
    line(fmt::format("  events={} note_ons={} note_offs={}", s.events, s.note_ons, s.note_offs));
    line(fmt::format("  max_desync_ms={:.3f}", s.max_desync_ms));
    line(fmt::format("  stuck_notes={} overlapping_freezes={} underruns={}", s.stuck_notes, s.overlapping_freezes,
                     s.underruns));
    line(fmt::format("  freezes={} forced_offs={} outages={} resumes={} volume_ramps={}", s.freezes, s.forced_offs,
                     s.outages, s.resumes, s.volume_ramps));
    line(fmt::format("  start_messages={} violations={}", s.start_messages, r.violations.size()));
    line(r.violations.empty() ? "result PASS" : "result FAIL");
    return out;
}

std::vector<SinkEvent> run_standalone(const SimConfig& config)
{
    config.validate();
    const auto generator = make_generator(config);
    PerformerEngine engine(engine_config(config, 0), generator);
    const ChordProgression prog = config.progression.value_or(default_progression(std::max(256, config.duration_bars + 16)));
    const NoteSequence melody = config.seed_melody.value_or(default_seed_melody());
    const proto::Plan plan = plan_for(config);

    struct Pending {
        double at;
        std::uint64_t job;
        GenerationResult result;
    };
    std::vector<Pending> pending;
    std::vector<SinkEvent> log;
    double t = 0.0;
    std::optional<TempoMap> map;
    bool stop_sent = false;

    auto append = [&log](std::vector<SinkEvent> evs) { log.insert(log.end(), evs.begin(), evs.end()); };
    auto pump = [&] {
        for (;;) {
            append(engine.take_events());
            auto out = engine.take_outbox();
            auto job = engine.take_job();
            if (out.empty() && !job)
                break;
            for (const auto& m : out) {
                if (std::holds_alternative<proto::Hello>(m)) {
                    engine.on_message(proto::Welcome{0, 1}, t);
                    engine.on_message(proto::Seed{prog, melody, config.tempo_bpm, kPpq}, t);
                    if (!plan.instructions.empty())
                        engine.on_message(plan, t);
                } else if (const auto* ping = std::get_if<proto::ClockPing>(&m)) {
                    engine.on_message(proto::ClockPong{ping->client_send_ms, t}, t);
                } else if (std::holds_alternative<proto::Ready>(m) && !map) {
                    map = TempoMap(make_clock(config.tempo_bpm, t + 1000.0));
                    engine.on_message(proto::Start{map->epoch_ms()}, t);
                }
            }
            if (job) {
                GenerationResult r = engine.generator().generate(job->request);
                pending.push_back(Pending{t + r.latency_ms, job->id, std::move(r)});
            }
        }
    };

    engine.on_connected(t);
    pump();
    while (engine.state() != proto::HandshakeState::Stopped) {
        std::optional<double> next = engine.next_wakeup(t);
        auto earliest = std::min_element(pending.begin(), pending.end(),
                                         [](const Pending& a, const Pending& b) { return a.at < b.at; });
        if (earliest != pending.end() && (!next || earliest->at <= *next))
            next = earliest->at;
        std::optional<double> stop_ms;
        if (map && !stop_sent)
            stop_ms = map->tick_to_ms(bar_to_tick(config.duration_bars - 1));
        if (stop_ms && (!next || *stop_ms <= *next))
            next = stop_ms;
        if (!next)
            break;
        t = std::max(t, *next);
        if (earliest != pending.end() && earliest->at <= t) {
            Pending p = std::move(*earliest);
            pending.erase(earliest);
            engine.on_generation_done(p.job, p.result, t);
            pump();
        }
        if (stop_ms && *stop_ms <= t) {
            stop_sent = true;
            engine.on_message(proto::Stop{bar_to_tick(config.duration_bars)}, t);
            pump();
        }
        append(engine.advance(t));
        pump();
    }
    return log;
}

} // namespace ensemble::sim
