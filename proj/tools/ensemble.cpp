#include "ensemble/errors.hpp"
#include "ensemble/generator.hpp"
#include "ensemble/net.hpp"
#include "ensemble/sim.hpp"
#include "ensemble/sinks.hpp"

#include <CLI11.hpp>
#include <fmt/format.h>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <chrono>
#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>

using namespace ensemble;

namespace {

struct ServerArgs {
    unsigned short port = net::port_from_env();
    std::string bind = "0.0.0.0";
    double tempo = 120.0;
    std::string progression;
    std::string plan;
    int performers = 1;
    std::string seed_melody;
    std::string web_root;
    double lead_in_ms = 1000.0;
    double grace_ms = 60000.0;
    bool console = false;
};

struct PerformArgs {
    std::string host = fmt::format("127.0.0.1:{}", net::port_from_env());
    std::string name = "performer";
    std::string mode = "auto";
    std::string sink = "log";
    std::string midi_device = "/dev/snd/midiC0D0";
    std::string record;
    std::string model;
    bool blocking = false;
    double latency_ms = 2000.0;
    bool measured = false;
    double temperature = 1.0;
    int transpose = 0;
    double volume = 1.0;
    bool auto_fade = false;
    bool console = false;
    std::uint64_t seed = 0;
};

struct SimArgs {
    sim::SimConfig config;
    std::string scenario = "nominal";
    std::string report;
    std::string progression;
    std::string seed_melody;
    std::string plan;
    bool blocking = false;
    bool quiet = false;
};

/// Reads "start", "stop", "tempo <bpm> <bar>", "control <id> <field> <value>"
/// from stdin and applies them on the server thread.
void server_console(net::Server& server)
{
    std::string line;
    while (std::getline(std::cin, line)) {
        std::istringstream in(line);
        std::string cmd;
        in >> cmd;
        if (cmd == "start") {
            server.post([](Conductor& c, double now) { c.start_when_ready(now); });
        } else if (cmd == "stop") {
            server.post([](Conductor& c, double now) { c.stop(now); });
        } else if (cmd == "tempo") {
            double bpm = 0;
            int bar = 0;
            if (in >> bpm >> bar)
                server.post([bpm, bar](Conductor& c, double now) { c.set_tempo(bpm, bar, now); });
        } else if (cmd == "control") {
            int id = 0;
            std::string field;
            double value = 0;
            if (in >> id >> field >> value) {
                if (const auto f = proto::parse_field(field))
                    server.post([id, f, value](Conductor& c, double now) { c.send_control(id, *f, value, now); });
            }
        } else if (!cmd.empty()) {
            spdlog::warn("unknown command '{}'", cmd);
        }
    }
}

int run_server(const ServerArgs& a)
{
    ConductorConfig config;
    config.n_expected = a.performers;
    config.tempo_bpm = a.tempo;
    config.lead_in_ms = a.lead_in_ms;
    config.grace_ms = a.grace_ms;
    config.auto_start = !a.console;
    config.progression = a.progression.empty() ? sim::default_progression()
                                               : parse_progression(read_text_file(a.progression));
    config.seed_melody = a.seed_melody.empty() ? sim::default_seed_melody()
                                               : parse_sequence(read_text_file(a.seed_melody));
    if (!a.plan.empty())
        config.plan = proto::parse_plan(read_text_file(a.plan));
    (void)build_schedule(a.performers);

    net::Server server(std::move(config), net::ServerOptions{a.bind, a.port, a.web_root});
    if (a.console) {
        server.start();
        server_console(server);
        server.stop();
        return 0;
    }
    server.run();
    return 0;
}

/// Reads "on <pitch> <vel>", "off <pitch>", "set <field> <value>" from stdin.
void perform_console(net::Client& client)
{
    std::string line;
    while (std::getline(std::cin, line)) {
        std::istringstream in(line);
        std::string cmd;
        in >> cmd;
        if (cmd == "on") {
            int pitch = 0;
            int vel = kDefaultVelocity;
            if (in >> pitch) {
                in >> vel;
                client.note_on(pitch, vel);
            }
        } else if (cmd == "off") {
            int pitch = 0;
            if (in >> pitch)
                client.note_off(pitch);
        } else if (cmd == "set") {
            std::string field;
            std::string value;
            if (in >> field >> value) {
                const auto f = proto::parse_field(field);
                if (!f) {
                    spdlog::warn("unknown field '{}'", field);
                    continue;
                }
                double v = 0;
                if (*f == proto::ControlField::Mode) {
                    const auto m = parse_mode(value);
                    if (!m) {
                        spdlog::warn("unknown mode '{}'", value);
                        continue;
                    }
                    v = static_cast<double>(*m);
                } else {
                    v = std::stod(value);
                }
                client.control(*f, v);
            }
        } else if (cmd == "quit") {
            break;
        }
    }
    client.stop();
}

int run_perform(const PerformArgs& a)
{
    net::ClientOptions opts;
    const auto colon = a.host.rfind(':');
    if (colon == std::string::npos) {
        opts.host = a.host;
        opts.port = net::port_from_env();
    } else {
        opts.host = a.host.substr(0, colon);
        opts.port = static_cast<unsigned short>(std::stoi(a.host.substr(colon + 1)));
    }
    const auto mode = parse_mode(a.mode);
    if (!mode)
        throw ConfigError("mode must be auto, hybrid or manual");

    EngineConfig& e = opts.engine;
    e.name = a.name;
    e.sink_mode = a.blocking ? SinkMode::Blocking : SinkMode::NonBlocking;
    e.seed = a.seed != 0 ? a.seed : static_cast<std::uint64_t>(std::chrono::steady_clock::now().time_since_epoch().count());
    e.controls.mode = *mode;
    if (!Temperature::valid(a.temperature))
        throw ConfigError("temperature must be within [0.01, 4]");
    e.controls.temperature = Temperature(a.temperature);
    if (a.transpose < -36 || a.transpose > 36)
        throw ConfigError("transpose must be within [-36, 36]");
    e.controls.transpose_semitones = a.transpose;
    if (a.volume < 0.0 || a.volume > 1.0)
        throw ConfigError("volume must be within [0, 1]");
    e.controls.volume = a.volume;
    e.controls.auto_fade_enabled = a.auto_fade;

    const LatencyModel latency = a.measured ? LatencyModel::measured() : LatencyModel::fixed(a.latency_ms);
    e.initial_latency_ms = latency.nominal_ms();
    auto model = std::make_shared<const GeneratorModel>(
        a.model.empty() ? GeneratorModel::defaults(e.seed) : parse_model(read_text_file(a.model)));
    auto generator = std::make_shared<MarkovMelodyGenerator>(std::move(model), latency);

    std::unique_ptr<EventSink> sink;
    if (a.sink == "log")
        sink = std::make_unique<LogSink>(std::cout);
    else if (a.sink == "midi")
        sink = std::make_unique<MidiSink>(a.midi_device);
    else if (a.sink == "null")
        sink = std::make_unique<NullSink>();
    else
        throw ConfigError("sink must be log, midi or null");
    if (!a.record.empty())
        sink = std::make_unique<RecordingSink>(std::move(sink), a.record);

    net::Client client(std::move(opts), generator, *sink);
    if (a.console)
        std::thread([&client] { perform_console(client); }).detach();
    client.run();
    sink->flush();
    spdlog::info("finished state={} regenerations={}", proto::state_name(client.state()), client.regenerations());
    return client.state() == proto::HandshakeState::Stopped ? 0 : 1;
}

int run_sim(SimArgs a)
{
    const auto scenario = sim::parse_scenario(a.scenario);
    if (!scenario)
        throw ConfigError("scenario must be nominal, performance1-dropout or performance2");
    a.config.scenario = *scenario;
    a.config.sink_mode = a.blocking ? SinkMode::Blocking : SinkMode::NonBlocking;
    if (!a.progression.empty())
        a.config.progression = parse_progression(read_text_file(a.progression));
    if (!a.seed_melody.empty())
        a.config.seed_melody = parse_sequence(read_text_file(a.seed_melody));
    if (!a.plan.empty())
        a.config.plan = proto::parse_plan(read_text_file(a.plan));

    const auto t0 = std::chrono::steady_clock::now();
    const sim::SimReport report = sim::run(a.config);
    const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const std::string text = sim::format_report(report);

    if (!a.report.empty()) {
        std::ofstream out(a.report, std::ios::binary);
        if (!out)
            throw ConfigError("cannot write report " + a.report);
        out << text;
    }
    if (!a.quiet) {
        const auto& s = report.summary;
        fmt::print("events={} note_ons={} note_offs={} freezes={} forced_offs={} max_desync_ms={:.3f} "
                   "stuck_notes={} overlapping_freezes={} underruns={} violations={} wall_s={:.3f}\n",
                   s.events, s.note_ons, s.note_offs, s.freezes, s.forced_offs, s.max_desync_ms, s.stuck_notes,
                   s.overlapping_freezes, s.underruns, report.violations.size(), wall);
        for (const auto& v : report.violations)
            fmt::print("violation name={} performer={} tick={} {}\n", v.name, v.performer, v.tick, v.detail);
    }
    return report.violations.empty() ? 0 : 1;
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Networked generative music ensemble"};
    app.require_subcommand(1);
    std::string log_level = "info";
    app.add_option("--log-level", log_level, "trace|debug|info|warn|error|off")->capture_default_str();

    ServerArgs srv;
    auto* server = app.add_subcommand("server", "Run the conductor server");
    server->add_option("--port", srv.port, "Listen port (ENSEMBLE_PORT; 0 picks a free port)")->capture_default_str();
    server->add_option("--bind", srv.bind, "Listen address")->capture_default_str();
    server->add_option("--tempo", srv.tempo, "Initial tempo in BPM")->capture_default_str();
    server->add_option("--progression", srv.progression, "Chord progression file")->check(CLI::ExistingFile);
    server->add_option("--plan", srv.plan, "Performance plan file")->check(CLI::ExistingFile);
    server->add_option("--performers", srv.performers, "Expected performers")->check(CLI::Range(1, kMaxPerformers))
        ->capture_default_str();
    server->add_option("--seed-melody", srv.seed_melody, "Seed melody file")->check(CLI::ExistingFile);
    server->add_option("--web-root", srv.web_root, "Directory served over HTTP")->check(CLI::ExistingDirectory);
    server->add_option("--lead-in-ms", srv.lead_in_ms, "Delay between Start and tick 0")->capture_default_str();
    server->add_option("--grace-ms", srv.grace_ms, "Rejoin grace period")->capture_default_str();
    server->add_flag("--console", srv.console, "Manual start; read commands from stdin");

    PerformArgs perf;
    auto* perform = app.add_subcommand("perform", "Connect a performer engine to a server");
    perform->add_option("--host", perf.host, "Server address as host:port")->capture_default_str();
    perform->add_option("--name", perf.name, "Performer name")->capture_default_str();
    perform->add_option("--mode", perf.mode, "auto|hybrid|manual")->capture_default_str();
    perform->add_option("--sink", perf.sink, "log|midi|null")->capture_default_str();
    perform->add_option("--midi-device", perf.midi_device, "Raw MIDI device for --sink midi")->capture_default_str();
    perform->add_option("--record", perf.record, "Also write the event log here");
    perform->add_option("--model", perf.model, "Generator model file");
    perform->add_flag("--blocking", perf.blocking, "Stall playback while generating");
    perform->add_option("--latency-ms", perf.latency_ms, "Modelled generation latency")->capture_default_str();
    perform->add_flag("--measured", perf.measured, "Use the measured generation time only");
    perform->add_option("--temperature", perf.temperature, "Sampling temperature")->capture_default_str();
    perform->add_option("--transpose", perf.transpose, "Transpose in semitones")->capture_default_str();
    perform->add_option("--volume", perf.volume, "Output volume in [0, 1]")->capture_default_str();
    perform->add_flag("--auto-fade", perf.auto_fade, "Fade out around freezes");
    perform->add_option("--seed", perf.seed, "Generator seed (0 = from the clock)");
    perform->add_flag("--console", perf.console, "Read notes and controls from stdin");

    SimArgs sa;
    auto* simc = app.add_subcommand("sim", "Simulate a whole ensemble on a virtual clock");
    auto& c = sa.config;
    simc->add_option("--performers", c.n_performers, "Performer count")->capture_default_str();
    simc->add_option("--bars", c.duration_bars, "Piece length in bars")->capture_default_str();
    simc->add_option("--tempo", c.tempo_bpm, "Tempo in BPM")->capture_default_str();
    simc->add_option("--freeze-ms", c.freeze_ms, "Generation latency")->capture_default_str();
    simc->add_option("--freeze-spread-ms", c.freeze_spread_ms, "Uniform spread on top of --freeze-ms")
        ->capture_default_str();
    simc->add_option("--latency", c.latency_ms, "One-way link latency in ms")->capture_default_str();
    simc->add_option("--jitter", c.jitter_ms, "Uniform jitter in ms")->capture_default_str();
    simc->add_option("--drop", c.drop, "Per-message probability of severing a link")->capture_default_str();
    simc->add_option("--seed", c.seed, "RNG seed")->capture_default_str();
    simc->add_option("--scenario", sa.scenario, "nominal|performance1-dropout|performance2")->capture_default_str();
    simc->add_option("--report", sa.report, "Write the full report here");
    simc->add_flag("--blocking", sa.blocking, "Blocking sinks (playback stalls during generation)");
    simc->add_flag("--auto-fade", c.auto_fade, "Enable auto-fade on every performer");
    simc->add_option("--clock-skew-ms", c.clock_skew_ms, "Bound on per-engine clock skew")->capture_default_str();
    simc->add_option("--outage-bar", c.outage_bar, "Dropout scenario: bar of the outage")->capture_default_str();
    simc->add_option("--outage-ms", c.outage_ms, "Dropout scenario: outage length")->capture_default_str();
    simc->add_option("--progression", sa.progression, "Chord progression file")->check(CLI::ExistingFile);
    simc->add_option("--seed-melody", sa.seed_melody, "Seed melody file")->check(CLI::ExistingFile);
    simc->add_option("--plan", sa.plan, "Plan file")->check(CLI::ExistingFile);
    simc->add_flag("--quiet", sa.quiet, "Print nothing; rely on the exit code");

    std::uint64_t model_seed = 0;
    auto* dump = app.add_subcommand("dump-model", "Print the default generator model");
    dump->add_option("--seed", model_seed, "RNG seed written into the model")->capture_default_str();

    CLI11_PARSE(app, argc, argv);

    // Event logs own stdout; diagnostics go to stderr.
    spdlog::set_default_logger(spdlog::stderr_color_mt("ensemble"));
    spdlog::set_level(spdlog::level::from_str(log_level));
    if (*simc && log_level == "info")
        spdlog::set_level(spdlog::level::warn);

    try {
        if (*server)
            return run_server(srv);
        if (*perform)
            return run_perform(perf);
        if (*simc)
            return run_sim(sa);
        if (*dump) {
            std::cout << format_model(GeneratorModel::defaults(model_seed));
            return 0;
        }
    } catch (const ParseError& e) {
        spdlog::error("parse error: {}", e.what());
        return 2;
    } catch (const std::exception& e) {
        spdlog::error("{}", e.what());
        return 2;
    }
    return 0;
}
