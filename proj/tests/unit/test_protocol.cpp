#include "ensemble/errors.hpp"
#include "ensemble/protocol.hpp"

#include "oracles.hpp"
#include "random_messages.hpp"

#include <doctest.h>

#include <json.hpp>

#include <queue>
#include <random>
#include <set>

using namespace ensemble;
using namespace ensemble::proto;

TEST_CASE("encode/decode round-trips generated messages")
{
    testgen::MessageFactory factory(77);
    std::set<std::string_view> seen;
    for (int i = 0; i < 10000; ++i) {
        const Message m = factory.next();
        const std::string wire = encode(m);
        const Message back = decode(wire);
        REQUIRE_MESSAGE(back == m, wire);
        CHECK(encode(back) == wire);
        seen.insert(type_name(m));
    }
    CHECK(seen.size() == std::variant_size_v<Message>);
}

TEST_CASE("wire shape")
{
    const auto doc = nlohmann::json::parse(encode(Control{2, ControlField::Mode, static_cast<double>(EngagementMode::Hybrid)}));
    CHECK(doc["v"] == 1);
    CHECK(doc["type"] == "Control");
    CHECK(doc["performer_id"] == 2);
    CHECK(doc["field"] == "mode");
    CHECK(doc["value"] == "hybrid");

    const auto fade = nlohmann::json::parse(encode(Control{0, ControlField::AutoFade, 1.0}));
    CHECK(fade["field"] == "auto_fade");
    CHECK(fade["value"] == true);

    const auto hello = nlohmann::json::parse(encode(Hello{"p", Role::Performer, {}}));
    CHECK(hello["client_name"] == "p");
    CHECK_FALSE(hello.contains("performer_id"));
}

TEST_CASE("decode rejects malformed frames with the tag when known")
{
    CHECK_THROWS_AS(decode(""), DecodeError);
    CHECK_THROWS_AS(decode("[1,2]"), DecodeError);
    CHECK_THROWS_AS(decode("{\"v\":1}"), DecodeError);
    try {
        decode(R"({"v":1,"type":"Ready"})");
        FAIL("expected DecodeError");
    } catch (const DecodeError& e) {
        CHECK(e.tag() == "Ready");
    }
    try {
        decode(R"({"v":2,"type":"Bye","performer_id":0})");
        FAIL("expected DecodeError");
    } catch (const DecodeError& e) {
        CHECK(e.tag() == "Bye");
    }
    CHECK_THROWS_AS(decode(R"({"v":1,"type":"Nope"})"), DecodeError);
    CHECK_THROWS_AS(decode(R"({"v":1,"type":"Ready","performer_id":16})"), DecodeError);
    CHECK_THROWS_AS(decode(R"({"v":1,"type":"Control","performer_id":0,"field":"mode","value":"loud"})"),
                    DecodeError);
    CHECK_THROWS_AS(decode(R"({"v":1,"type":"Start","start_epoch_ms":"soon"})"), DecodeError);
    // Unknown fields are ignored.
    CHECK(decode(R"({"v":1,"type":"Bye","performer_id":3,"extra":true})") == Message{Bye{3}});
}

TEST_CASE("plan files")
{
    const auto plan = parse_plan("# plan\n@Bar 1: hello\n@Bar 8: louder\n");
    REQUIRE(plan.instructions.size() == 2);
    CHECK(plan.instructions[1] == PlanInstruction{8, "louder"});
    CHECK_THROWS_AS(parse_plan("Bar 1: x\n"), ParseError);
    CHECK_THROWS_AS(parse_plan("@Bar 8: a\n@Bar 1: b\n"), ParseError);
}

namespace {

std::vector<Message> one_of_each()
{
    return {Hello{},  Welcome{}, Seed{},     Ready{},       Start{},   Stop{},   ClockPing{}, ClockPong{},
            GenStart{}, GenDone{}, Control{}, TempoChange{}, Plan{},    Bye{},    Resync{},    Reject{}};
}

} // namespace

TEST_CASE("handshake reaches Running only from ModelReady")
{
    // Explore every reachable state under every input, including ModelLoaded.
    std::set<HandshakeState> reached{HandshakeState::Connected};
    std::queue<HandshakeState> todo;
    todo.push(HandshakeState::Connected);
    int running_edges = 0;
    while (!todo.empty()) {
        const auto s = todo.front();
        todo.pop();
        std::vector<HandshakeStep> steps;
        for (const auto& m : one_of_each())
            steps.push_back(handshake_step(s, m));
        steps.push_back(handshake_step(s, ModelLoaded{}));
        for (const auto& step : steps) {
            if (step.state == HandshakeState::Running && s != HandshakeState::Running) {
                CHECK(s == HandshakeState::ModelReady);
                ++running_edges;
            }
            if (reached.insert(step.state).second)
                todo.push(step.state);
        }
    }
    CHECK(running_edges > 0);
    CHECK(reached.count(HandshakeState::Running) == 1);
}

TEST_CASE("handshake happy path and violations")
{
    auto s = HandshakeState::Connected;
    s = handshake_step(s, Welcome{0, 1}).state;
    CHECK(s == HandshakeState::Welcomed);
    auto step = handshake_step(s, Seed{});
    CHECK(step.state == HandshakeState::Seeded);
    CHECK(step.actions == std::vector<HandshakeAction>{HandshakeAction::BeginInitialGeneration});
    step = handshake_step(step.state, ModelLoaded{});
    CHECK(step.state == HandshakeState::ModelReady);
    CHECK(step.actions == std::vector<HandshakeAction>{HandshakeAction::SendReady});
    step = handshake_step(step.state, Start{5.0});
    CHECK(step.state == HandshakeState::Running);
    CHECK(step.actions == std::vector<HandshakeAction>{HandshakeAction::StartPlayback});
    step = handshake_step(step.state, Stop{});
    CHECK(step.state == HandshakeState::Stopped);

    CHECK(handshake_step(HandshakeState::Seeded, Start{}).actions ==
          std::vector<HandshakeAction>{HandshakeAction::ProtocolViolation});
    CHECK(handshake_step(HandshakeState::Connected, ModelLoaded{}).actions ==
          std::vector<HandshakeAction>{HandshakeAction::ProtocolViolation});
    CHECK(handshake_step(HandshakeState::Running, Welcome{}).actions ==
          std::vector<HandshakeAction>{HandshakeAction::ProtocolViolation});
}

TEST_CASE("clock offset is exact under symmetric latency")
{
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> offset(-5000.0, 5000.0);
    std::uniform_real_distribution<double> lat(0.0, 200.0);
    for (int trial = 0; trial < 500; ++trial) {
        const double true_offset = offset(rng);
        std::vector<ClockSample> samples;
        double now = 1000.0;
        for (int i = 0; i < 7; ++i) {
            const double l = lat(rng);
            const auto p = oracle::ping(now, true_offset, l, l);
            samples.push_back({p.send, p.server, p.recv});
            now += 50.0;
        }
        CHECK(estimate_offset(samples).offset_ms == doctest::Approx(true_offset).epsilon(1e-12));
    }
}

TEST_CASE("clock offset error is at most half the asymmetry")
{
    std::mt19937_64 rng(6);
    std::uniform_real_distribution<double> lat(1.0, 100.0);
    std::uniform_real_distribution<double> asym(0.0, 80.0);
    for (int trial = 0; trial < 500; ++trial) {
        const double a = asym(rng);
        std::vector<ClockSample> samples;
        for (int i = 0; i < 5; ++i) {
            const double l = lat(rng);
            const auto p = oracle::ping(100.0 * i, 42.0, l + a, l);
            samples.push_back({p.send, p.server, p.recv});
        }
        CHECK(std::abs(estimate_offset(samples).offset_ms - 42.0) <= a / 2.0 + 1e-9);
    }
}

TEST_CASE("clock median discards a slow outlier")
{
    // Offsets 98 and 100 with 10 ms round trips; the third sample took 1 s.
    const std::vector<ClockSample> samples{{0.0, 103.0, 10.0}, {20.0, 125.0, 30.0}, {40.0, 5000.0, 1040.0}};
    const auto est = estimate_offset(samples);
    CHECK(est.used == 2);
    CHECK(est.offset_ms == doctest::Approx(99.0));
    CHECK_THROWS_AS(estimate_offset(std::span<const ClockSample>(samples.data(), 2)), InsufficientSamples);
}

TEST_CASE("clock sync keeps a sliding window")
{
    ClockSync sync(3);
    sync.add({0, 10, 0});
    sync.add({0, 10, 0});
    CHECK_FALSE(sync.ready());
    sync.add({0, 10, 0});
    REQUIRE(sync.ready());
    CHECK(sync.to_server(5.0) == 15.0);
    for (int i = 0; i < 3; ++i)
        sync.add({0, 20, 0});
    CHECK(sync.to_server(5.0) == 25.0);
    CHECK(sync.to_local(25.0) == 5.0);
}

TEST_CASE("names")
{
    CHECK(std::string(field_name(ControlField::AutoFade)) == "auto_fade");
    CHECK(parse_field("temperature") == ControlField::Temperature);
    CHECK_FALSE(parse_field("pan").has_value());
    CHECK(parse_mode("hybrid") == EngagementMode::Hybrid);
    CHECK(std::string(mode_name(EngagementMode::Manual)) == "manual");
    CHECK(std::string(state_name(HandshakeState::ModelReady)) == "ModelReady");
}
