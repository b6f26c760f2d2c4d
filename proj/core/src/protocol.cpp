#include "ensemble/protocol.hpp"

#include "ensemble/errors.hpp"
#include "text_util.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>

namespace ensemble {

const char* mode_name(EngagementMode mode) noexcept
{
    switch (mode) {
    case EngagementMode::Manual:
        return "manual";
    case EngagementMode::Hybrid:
        return "hybrid";
    case EngagementMode::Auto:
        return "auto";
    }
    return "auto";
}

std::optional<EngagementMode> parse_mode(std::string_view text) noexcept
{
    if (text == "manual")
        return EngagementMode::Manual;
    if (text == "hybrid")
        return EngagementMode::Hybrid;
    if (text == "auto")
        return EngagementMode::Auto;
    return std::nullopt;
}

} // namespace ensemble

namespace ensemble::proto {

using json = nlohmann::json;

namespace {

template <class... Ts>
struct overloaded : Ts... {
    using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

const char* role_name(Role r)
{
    switch (r) {
    case Role::Performer:
        return "performer";
    case Role::Conductor:
        return "conductor";
    case Role::Observer:
        return "observer";
    }
    return "performer";
}

// Field readers. Every failure names the message tag.
class Reader {
public:
    Reader(const json& doc, std::string tag) : doc_(doc), tag_(std::move(tag)) {}

    [[noreturn]] void fail(const std::string& what) const { throw DecodeError(tag_, what); }

    const json& at(const char* key) const
    {
        auto it = doc_.find(key);
        if (it == doc_.end())
            fail(std::string("missing field '") + key + "'");
        return *it;
    }

    bool has(const char* key) const
    {
        auto it = doc_.find(key);
        return it != doc_.end() && !it->is_null();
    }

    double number(const char* key) const { return number_of(at(key), key); }

    double number_of(const json& v, const char* key) const
    {
        if (!v.is_number())
            fail(std::string("field '") + key + "' must be a number");
        const double d = v.get<double>();
        if (!std::isfinite(d))
            fail(std::string("field '") + key + "' must be finite");
        return d;
    }

    std::int64_t integer(const char* key) const { return integer_of(at(key), key); }

    std::int64_t integer_of(const json& v, const char* key) const
    {
        if (!v.is_number_integer())
            fail(std::string("field '") + key + "' must be an integer");
        return v.get<std::int64_t>();
    }

    int performer(const char* key = "performer_id") const
    {
        const auto id = integer(key);
        if (id < 0 || id >= 16)
            fail("performer_id out of range");
        return static_cast<int>(id);
    }

    std::string string(const char* key) const
    {
        const json& v = at(key);
        if (!v.is_string())
            fail(std::string("field '") + key + "' must be a string");
        return v.get<std::string>();
    }

    const std::string& tag() const noexcept { return tag_; }

private:
    const json& doc_;
    std::string tag_;
};

json progression_to_json(const ChordProgression& prog)
{
    json arr = json::array();
    for (const auto& e : prog.entries())
        arr.push_back({{"bar", e.start_bar}, {"chord", chord_name(e.chord)}});
    return arr;
}

json sequence_to_json(const NoteSequence& seq)
{
    json events = json::array();
    for (const auto& ev : seq.events())
        events.push_back(json::array({ev.onset, ev.duration, ev.pitch, ev.velocity}));
    return {{"bars", seq.length_bars()}, {"events", std::move(events)}};
}

ChordProgression progression_from_json(const Reader& r, const json& arr)
{
    if (!arr.is_array())
        r.fail("progression must be an array");
    std::vector<ProgressionEntry> entries;
    for (const auto& item : arr) {
        if (!item.is_object() || !item.contains("bar") || !item.contains("chord") || !item["chord"].is_string())
            r.fail("progression entries need 'bar' and 'chord'");
        try {
            entries.push_back({static_cast<int>(r.integer_of(item["bar"], "bar")),
                               parse_chord(item["chord"].get<std::string>())});
        } catch (const std::invalid_argument& e) {
            r.fail(e.what());
        }
    }
    try {
        return ChordProgression(std::move(entries));
    } catch (const std::invalid_argument& e) {
        r.fail(e.what());
    }
}

NoteSequence sequence_from_json(const Reader& r, const json& obj)
{
    if (!obj.is_object() || !obj.contains("bars") || !obj.contains("events") || !obj["events"].is_array())
        r.fail("sequence needs 'bars' and 'events'");
    const auto bars = r.integer_of(obj["bars"], "bars");
    if (bars < 1 || bars > 4096)
        r.fail("sequence length out of range");
    std::vector<NoteEvent> events;
    for (const auto& ev : obj["events"]) {
        if (!ev.is_array() || ev.size() != 4)
            r.fail("note events are [onset,duration,pitch,velocity]");
        events.push_back(NoteEvent{static_cast<int>(r.integer_of(ev[2], "pitch")), r.integer_of(ev[0], "onset"),
                                   r.integer_of(ev[1], "duration"), static_cast<int>(r.integer_of(ev[3], "velocity"))});
    }
    try {
        return NoteSequence(static_cast<int>(bars), std::move(events));
    } catch (const std::invalid_argument& e) {
        r.fail(e.what());
    }
}

json control_value_to_json(const Control& c)
{
    switch (c.field) {
    case ControlField::Mode:
        return mode_name(static_cast<EngagementMode>(static_cast<int>(c.value)));
    case ControlField::AutoFade:
        return c.value != 0.0;
    default:
        return c.value;
    }
}

double control_value_from_json(const Reader& r, ControlField field, const json& v)
{
    switch (field) {
    case ControlField::Mode: {
        if (!v.is_string())
            r.fail("mode value must be a string");
        auto mode = parse_mode(v.get<std::string>());
        if (!mode)
            r.fail("unknown mode '" + v.get<std::string>() + "'");
        return static_cast<double>(*mode);
    }
    case ControlField::AutoFade:
        if (!v.is_boolean())
            r.fail("auto_fade value must be a boolean");
        return v.get<bool>() ? 1.0 : 0.0;
    default:
        return r.number_of(v, "value");
    }
}

} // namespace

const char* field_name(ControlField f) noexcept
{
    switch (f) {
    case ControlField::Temperature:
        return "temperature";
    case ControlField::Transpose:
        return "transpose";
    case ControlField::Volume:
        return "volume";
    case ControlField::Mode:
        return "mode";
    case ControlField::AutoFade:
        return "auto_fade";
    }
    return "volume";
}

std::optional<ControlField> parse_field(std::string_view text) noexcept
{
    for (auto f : {ControlField::Temperature, ControlField::Transpose, ControlField::Volume, ControlField::Mode,
                   ControlField::AutoFade}) {
        if (text == field_name(f))
            return f;
    }
    return std::nullopt;
}

std::string_view type_name(const Message& m) noexcept
{
    static constexpr std::string_view names[] = {"Hello",     "Welcome",   "Seed",    "Ready", "Start",   "Stop",
                                                 "ClockPing", "ClockPong", "GenStart", "GenDone", "Control",
                                                 "TempoChange", "Plan",    "Bye",      "Resync", "Reject"};
    static_assert(std::size(names) == std::variant_size_v<Message>);
    return names[m.index()];
}

std::string encode(const Message& m)
{
    json doc;
    doc["v"] = kVersion;
    doc["type"] = type_name(m);
    std::visit(overloaded{
                   [&](const Hello& x) {
                       doc["client_name"] = x.client_name;
                       doc["role"] = role_name(x.role);
                       if (x.performer_id)
                           doc["performer_id"] = *x.performer_id;
                   },
                   [&](const Welcome& x) {
                       doc["performer_id"] = x.performer_id;
                       doc["n_expected"] = x.n_expected;
                   },
                   [&](const Seed& x) {
                       doc["progression"] = progression_to_json(x.progression);
                       doc["seed_melody"] = sequence_to_json(x.seed_melody);
                       doc["tempo_bpm"] = x.tempo_bpm;
                       doc["ppq"] = x.ppq;
                   },
                   [&](const Ready& x) { doc["performer_id"] = x.performer_id; },
                   [&](const Start& x) { doc["start_epoch_ms"] = x.start_epoch_ms; },
                   [&](const Stop& x) {
                       if (x.at_tick)
                           doc["at_tick"] = *x.at_tick;
                   },
                   [&](const ClockPing& x) { doc["client_send_ms"] = x.client_send_ms; },
                   [&](const ClockPong& x) {
                       doc["client_send_ms"] = x.client_send_ms;
                       doc["server_ms"] = x.server_ms;
                   },
                   [&](const GenStart& x) {
                       doc["performer_id"] = x.performer_id;
                       doc["freeze_start_tick"] = x.freeze_start_tick;
                   },
                   [&](const GenDone& x) {
                       doc["performer_id"] = x.performer_id;
                       doc["latency_ms"] = x.latency_ms;
                   },
                   [&](const Control& x) {
                       doc["performer_id"] = x.performer_id;
                       doc["field"] = field_name(x.field);
                       doc["value"] = control_value_to_json(x);
                   },
                   [&](const TempoChange& x) {
                       doc["tempo_bpm"] = x.tempo_bpm;
                       doc["effective_bar"] = x.effective_bar;
                   },
                   [&](const Plan& x) {
                       json arr = json::array();
                       for (const auto& i : x.instructions)
                           arr.push_back({{"bar", i.bar}, {"text", i.text}});
                       doc["instructions"] = std::move(arr);
                   },
                   [&](const Bye& x) { doc["performer_id"] = x.performer_id; },
                   [&](const Resync& x) {
                       doc["start_epoch_ms"] = x.start_epoch_ms;
                       doc["base_tempo_bpm"] = x.base_tempo_bpm;
                       json arr = json::array();
                       for (const auto& t : x.tempo_changes)
                           arr.push_back({{"tempo_bpm", t.tempo_bpm}, {"effective_bar", t.effective_bar}});
                       doc["tempo_changes"] = std::move(arr);
                       doc["server_ms"] = x.server_ms;
                       doc["server_tick"] = x.server_tick;
                   },
                   [&](const Reject& x) {
                       doc["reason"] = x.reason;
                       doc["ref"] = x.ref;
                   },
               },
               m);
    return doc.dump();
}

Message decode(std::string_view frame)
{
    if (detail::trim(frame).empty())
        throw DecodeError("", "empty frame");
    json doc = json::parse(frame.begin(), frame.end(), nullptr, false);
    if (doc.is_discarded() || !doc.is_object())
        throw DecodeError("", "frame is not a JSON object");
    std::string tag;
    if (auto it = doc.find("type"); it != doc.end() && it->is_string())
        tag = it->get<std::string>();
    else
        throw DecodeError("", "missing 'type'");

    const Reader r(doc, tag);
    if (r.integer("v") != kVersion)
        r.fail("unsupported protocol version");

    if (tag == "Hello") {
        Hello h;
        h.client_name = r.string("client_name");
        if (r.has("role")) {
            const auto role = r.string("role");
            if (role == "performer")
                h.role = Role::Performer;
            else if (role == "conductor")
                h.role = Role::Conductor;
            else if (role == "observer")
                h.role = Role::Observer;
            else
                r.fail("unknown role '" + role + "'");
        }
        if (r.has("performer_id"))
            h.performer_id = r.performer();
        return h;
    }
    if (tag == "Welcome") {
        const auto n = r.integer("n_expected");
        if (n < 1 || n > 16)
            r.fail("n_expected out of range");
        return Welcome{r.performer(), static_cast<int>(n)};
    }
    if (tag == "Seed") {
        Seed s;
        s.progression = progression_from_json(r, r.at("progression"));
        s.seed_melody = sequence_from_json(r, r.at("seed_melody"));
        s.tempo_bpm = r.number("tempo_bpm");
        if (!(s.tempo_bpm > 0.0))
            r.fail("tempo must be positive");
        s.ppq = static_cast<int>(r.integer("ppq"));
        if (s.ppq != kPpq)
            r.fail("only ppq 480 is supported");
        return s;
    }
    if (tag == "Ready")
        return Ready{r.performer()};
    if (tag == "Start")
        return Start{r.number("start_epoch_ms")};
    if (tag == "Stop") {
        Stop s;
        if (r.has("at_tick"))
            s.at_tick = r.integer("at_tick");
        return s;
    }
    if (tag == "ClockPing")
        return ClockPing{r.number("client_send_ms")};
    if (tag == "ClockPong")
        return ClockPong{r.number("client_send_ms"), r.number("server_ms")};
    if (tag == "GenStart")
        return GenStart{r.performer(), r.integer("freeze_start_tick")};
    if (tag == "GenDone") {
        const double latency = r.number("latency_ms");
        if (latency < 0.0)
            r.fail("latency must be non-negative");
        return GenDone{r.performer(), latency};
    }
    if (tag == "Control") {
        auto field = parse_field(r.string("field"));
        if (!field)
            r.fail("unknown control field");
        return Control{r.performer(), *field, control_value_from_json(r, *field, r.at("value"))};
    }
    if (tag == "TempoChange") {
        const double bpm = r.number("tempo_bpm");
        if (!(bpm > 0.0))
            r.fail("tempo must be positive");
        const auto bar = r.integer("effective_bar");
        if (bar < 0)
            r.fail("effective_bar must be >= 0");
        return TempoChange{bpm, static_cast<int>(bar)};
    }
    if (tag == "Plan") {
        const json& arr = r.at("instructions");
        if (!arr.is_array())
            r.fail("instructions must be an array");
        Plan p;
        for (const auto& item : arr) {
            if (!item.is_object() || !item.contains("bar") || !item.contains("text") || !item["text"].is_string())
                r.fail("plan entries need 'bar' and 'text'");
            p.instructions.push_back({static_cast<int>(r.integer_of(item["bar"], "bar")), item["text"].get<std::string>()});
        }
        return p;
    }
    if (tag == "Bye")
        return Bye{r.performer()};
    if (tag == "Resync") {
        Resync s;
        s.start_epoch_ms = r.number("start_epoch_ms");
        s.base_tempo_bpm = r.number("base_tempo_bpm");
        if (!(s.base_tempo_bpm > 0.0))
            r.fail("tempo must be positive");
        const json& arr = r.at("tempo_changes");
        if (!arr.is_array())
            r.fail("tempo_changes must be an array");
        for (const auto& item : arr) {
            if (!item.is_object() || !item.contains("tempo_bpm") || !item.contains("effective_bar"))
                r.fail("tempo change needs tempo_bpm and effective_bar");
            s.tempo_changes.push_back({r.number_of(item["tempo_bpm"], "tempo_bpm"),
                                       static_cast<int>(r.integer_of(item["effective_bar"], "effective_bar"))});
        }
        s.server_ms = r.number("server_ms");
        s.server_tick = r.integer("server_tick");
        return s;
    }
    if (tag == "Reject")
        return Reject{r.string("reason"), r.has("ref") ? r.string("ref") : std::string{}};

    throw DecodeError(tag, "unknown message type");
}

Plan parse_plan(std::string_view text)
{
    Plan plan;
    int line_no = 0;
    for (std::string_view line : detail::split_lines(text)) {
        ++line_no;
        line = detail::trim(line);
        if (line.empty() || line.front() == '#')
            continue;
        if (!line.starts_with("@Bar") && !line.starts_with("@bar"))
            throw ParseError("plan lines look like '@Bar <n>: <text>'", line_no);
        const auto colon = line.find(':');
        if (colon == std::string_view::npos)
            throw ParseError("missing ':' after bar number", line_no);
        PlanInstruction ins;
        try {
            ins.bar = detail::parse_int(line.substr(4, colon - 4));
        } catch (const std::invalid_argument& e) {
            throw ParseError(e.what(), line_no);
        }
        if (ins.bar < 0)
            throw ParseError("negative bar", line_no);
        if (!plan.instructions.empty() && ins.bar < plan.instructions.back().bar)
            throw ParseError("plan bars must be non-decreasing", line_no);
        ins.text = std::string(detail::trim(line.substr(colon + 1)));
        plan.instructions.push_back(std::move(ins));
    }
    return plan;
}

const char* state_name(HandshakeState s) noexcept
{
    switch (s) {
    case HandshakeState::Connected:
        return "Connected";
    case HandshakeState::Welcomed:
        return "Welcomed";
    case HandshakeState::Seeded:
        return "Seeded";
    case HandshakeState::ModelReady:
        return "ModelReady";
    case HandshakeState::Running:
        return "Running";
    case HandshakeState::Stopped:
        return "Stopped";
    }
    return "?";
}

HandshakeStep handshake_step(HandshakeState state, const Message& m)
{
    using S = HandshakeState;
    using A = HandshakeAction;
    const HandshakeStep violation{state, {A::ProtocolViolation}};

    if (std::holds_alternative<Stop>(m)) {
        if (state == S::Stopped)
            return {state, {}};
        return {S::Stopped, {A::StopPlayback}};
    }
    if (state == S::Stopped)
        return violation;

    if (std::holds_alternative<Welcome>(m))
        return state == S::Connected ? HandshakeStep{S::Welcomed, {}} : violation;
    if (std::holds_alternative<Seed>(m)) {
        // A fresh seed before the start replaces the initial buffers.
        if (state == S::Welcomed || state == S::Seeded || state == S::ModelReady)
            return {S::Seeded, {A::BeginInitialGeneration}};
        return violation;
    }
    if (std::holds_alternative<Start>(m) || std::holds_alternative<Resync>(m))
        return state == S::ModelReady ? HandshakeStep{S::Running, {A::StartPlayback}} : violation;
    // Everything else is outside the handshake.
    return {state, {}};
}

HandshakeStep handshake_step(HandshakeState state, ModelLoaded)
{
    if (state == HandshakeState::Seeded)
        return {HandshakeState::ModelReady, {HandshakeAction::SendReady}};
    return {state, {HandshakeAction::ProtocolViolation}};
}

namespace {

double median(std::vector<double> v)
{
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

} // namespace

ClockEstimate estimate_offset(std::span<const ClockSample> samples)
{
    if (samples.size() < 3)
        throw InsufficientSamples("clock offset needs at least 3 samples, got " + std::to_string(samples.size()));
    ClockEstimate est;
    std::vector<double> rtts;
    for (const auto& s : samples) {
        const double rtt = s.client_recv_ms - s.client_send_ms;
        const double offset = s.server_ms - (s.client_send_ms + rtt / 2.0);
        est.rtt_samples.emplace_back(rtt, offset);
        rtts.push_back(rtt);
    }
    const double limit = 3.0 * median(rtts);
    std::vector<double> kept;
    for (const auto& [rtt, offset] : est.rtt_samples) {
        if (rtt <= limit)
            kept.push_back(offset);
    }
    est.used = kept.size();
    est.offset_ms = median(std::move(kept));
    return est;
}

void ClockSync::add(const ClockSample& s)
{
    samples_.push_back(s);
    while (samples_.size() > keep_)
        samples_.pop_front();
    if (samples_.size() >= 3) {
        std::vector<ClockSample> v(samples_.begin(), samples_.end());
        estimate_ = estimate_offset(v);
    }
}

} // namespace ensemble::proto
