#pragma once

#include "ensemble/conductor.hpp"
#include "ensemble/performer.hpp"
#include "ensemble/sinks.hpp"

#include <atomic>
#include <functional>
#include <memory>
#include <string>

namespace ensemble::net {

namespace detail {
struct ServerState;
struct ClientState;
} // namespace detail

/// ENSEMBLE_PORT when set and valid, else `fallback`.
unsigned short port_from_env(unsigned short fallback = proto::kDefaultPort);

/// Milliseconds on the process-wide steady clock.
double steady_ms();

struct ServerOptions {
    std::string bind = "0.0.0.0";
    unsigned short port = proto::kDefaultPort; ///< 0 picks a free port
    /// Directory served over HTTP; empty serves the built-in page at `/`.
    std::string web_root;
};

/// WebSocket endpoint plus static HTTP on one port. The conductor lives on
/// the single I/O thread, so every registry mutation is serialised.
class Server {
public:
    Server(ConductorConfig config, ServerOptions options);
    ~Server();
    Server(const Server&) = delete;
    Server& operator=(const Server&) = delete;

    /// Binds and starts the I/O thread; returns the bound port.
    unsigned short start();
    /// Binds and serves on the calling thread until stop().
    void run();
    void stop();
    unsigned short port() const noexcept;

    /// Runs `fn` on the I/O thread with the conductor and current server ms.
    void post(std::function<void(Conductor&, double)> fn);

private:
    std::shared_ptr<detail::ServerState> impl_;
};

struct ClientOptions {
    std::string host = "127.0.0.1";
    unsigned short port = proto::kDefaultPort;
    EngineConfig engine;
    double reconnect_ms = 500.0;
    /// Give up after this many consecutive failed connection attempts.
    int max_attempts = 240;
};

/// Drives a PerformerEngine over a real socket: timer-driven playback, a
/// worker thread for non-blocking generation, inline generation (a real
/// stall) in blocking mode.
class Client {
public:
    Client(ClientOptions options, std::shared_ptr<const MelodyGenerator> generator, EventSink& sink);
    ~Client();
    Client(const Client&) = delete;
    Client& operator=(const Client&) = delete;

    /// Blocks until the performance stops, the server rejects us, or stop().
    void run();
    void stop();

    // Thread-safe local input.
    void control(proto::ControlField field, double value);
    void note_on(int pitch, int velocity);
    void note_off(int pitch);

    /// Snapshot accessors; call after run() returns.
    proto::HandshakeState state() const;
    std::optional<int> performer_id() const;
    std::size_t regenerations() const;

private:
    std::shared_ptr<detail::ClientState> impl_;
};

} // namespace ensemble::net
