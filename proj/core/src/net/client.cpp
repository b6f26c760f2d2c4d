#include "ensemble/net.hpp"

#include "ensemble/errors.hpp"

#include <boost/asio.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/websocket.hpp>
#include <spdlog/spdlog.h>

#include <chrono>
#include <deque>
#include <thread>

namespace ensemble::net {

namespace asio = boost::asio;
namespace beast = boost::beast;
namespace websocket = beast::websocket;
using tcp = asio::ip::tcp;

namespace {

asio::steady_timer::time_point at_ms(double ms)
{
    // steady_ms() counts from its first call; anchor once.
    static const auto origin = std::chrono::steady_clock::now() -
                               std::chrono::duration_cast<std::chrono::steady_clock::duration>(
                                   std::chrono::duration<double, std::milli>(steady_ms()));
    return origin + std::chrono::duration_cast<std::chrono::steady_clock::duration>(
                        std::chrono::duration<double, std::milli>(ms));
}

/// Runs the job, stretching it to the modelled latency so a fast machine can
/// stand in for a slow one. Reports the larger of measured and modelled.
GenerationResult execute(const MelodyGenerator& gen, const GenerationRequest& req)
{
    const double t0 = steady_ms();
    GenerationResult r = gen.generate(req);
    const double took = steady_ms() - t0;
    if (r.latency_ms > took)
        std::this_thread::sleep_for(std::chrono::duration<double, std::milli>(r.latency_ms - took));
    r.latency_ms = std::max(r.latency_ms, steady_ms() - t0);
    return r;
}

} // namespace

struct detail::ClientState : std::enable_shared_from_this<detail::ClientState> {
    ClientState(ClientOptions o, std::shared_ptr<const MelodyGenerator> g, EventSink& s)
        : opts(std::move(o))
        , engine(opts.engine, g)
        , generator(std::move(g))
        , sink(s)
    {
    }

    void connect();
    void schedule_reconnect();
    void read();
    void lost();
    void write(std::string text);
    void write_next();
    void pump();
    void finish();

    ClientOptions opts;
    PerformerEngine engine;
    std::shared_ptr<const MelodyGenerator> generator;
    EventSink& sink;

    asio::io_context ioc{1};
    asio::thread_pool worker{1};
    tcp::resolver resolver{ioc};
    std::unique_ptr<websocket::stream<beast::tcp_stream>> ws;
    beast::flat_buffer buffer;
    std::deque<std::string> writes;
    bool writing = false;
    asio::steady_timer wake{ioc};
    asio::steady_timer retry{ioc};
    std::uint64_t epoch = 0;
    bool connected = false;
    bool done = false;
    int attempts = 0;
};

void detail::ClientState::connect()
{
    if (done)
        return;
    ++attempts;
    const std::uint64_t my_epoch = ++epoch;
    ws = std::make_unique<websocket::stream<beast::tcp_stream>>(ioc);
    writes.clear();
    writing = false;
    resolver.async_resolve(
        opts.host, std::to_string(opts.port),
        [self = shared_from_this(), my_epoch](beast::error_code ec, tcp::resolver::results_type results) {
            if (my_epoch != self->epoch)
                return;
            if (ec) {
                self->schedule_reconnect();
                return;
            }
            beast::get_lowest_layer(*self->ws).expires_after(std::chrono::seconds(5));
            beast::get_lowest_layer(*self->ws).async_connect(
                results, [self, my_epoch](beast::error_code ec, const tcp::endpoint&) {
                    if (my_epoch != self->epoch)
                        return;
                    if (ec) {
                        self->schedule_reconnect();
                        return;
                    }
                    beast::get_lowest_layer(*self->ws).expires_never();
                    self->ws->set_option(websocket::stream_base::timeout::suggested(beast::role_type::client));
                    self->ws->async_handshake(self->opts.host, "/", [self, my_epoch](beast::error_code ec) {
                        if (my_epoch != self->epoch)
                            return;
                        if (ec) {
                            self->schedule_reconnect();
                            return;
                        }
                        self->connected = true;
                        self->attempts = 0;
                        self->engine.on_connected(steady_ms());
                        self->pump();
                        self->read();
                    });
                });
        });
}

void detail::ClientState::schedule_reconnect()
{
    if (done)
        return;
    if (attempts >= opts.max_attempts) {
        spdlog::error("giving up after {} connection attempts", attempts);
        finish();
        return;
    }
    retry.expires_after(std::chrono::duration_cast<std::chrono::steady_clock::duration>(
        std::chrono::duration<double, std::milli>(opts.reconnect_ms)));
    retry.async_wait([self = shared_from_this()](beast::error_code ec) {
        if (!ec)
            self->connect();
    });
}

void detail::ClientState::read()
{
    ws->async_read(buffer, [self = shared_from_this(), my_epoch = epoch](beast::error_code ec, std::size_t) {
        if (my_epoch != self->epoch)
            return;
        if (ec) {
            self->lost();
            return;
        }
        const std::string text = beast::buffers_to_string(self->buffer.data());
        self->buffer.consume(self->buffer.size());
        try {
            self->engine.on_message(proto::decode(text), steady_ms());
        } catch (const DecodeError& e) {
            spdlog::warn("undecodable frame tag={} error=\"{}\"", e.tag(), e.what());
        }
        self->pump();
        self->read();
    });
}

void detail::ClientState::lost()
{
    if (!connected)
        return;
    connected = false;
    ++epoch;
    engine.on_disconnected(steady_ms());
    pump();
    schedule_reconnect();
}

void detail::ClientState::write(std::string text)
{
    if (!connected)
        return;
    writes.push_back(std::move(text));
    if (!writing)
        write_next();
}

void detail::ClientState::write_next()
{
    writing = true;
    ws->text(true);
    ws->async_write(asio::buffer(writes.front()),
                    [self = shared_from_this(), my_epoch = epoch](beast::error_code ec, std::size_t) {
                        if (my_epoch != self->epoch)
                            return;
                        self->writes.pop_front();
                        if (ec) {
                            self->writing = false;
                            self->lost();
                            return;
                        }
                        if (self->writes.empty())
                            self->writing = false;
                        else
                            self->write_next();
                    });
}

void detail::ClientState::pump()
{
    for (;;) {
        for (const auto& ev : engine.take_events())
            sink.on_event(ev);
        for (const auto& ramp : engine.take_volume())
            sink.on_volume(ramp);
        for (const auto& m : engine.take_outbox())
            write(proto::encode(m));
        auto job = engine.take_job();
        if (!job)
            break;
        if (opts.engine.sink_mode == SinkMode::Blocking) {
            // The freeze, for real: nothing on this thread runs meanwhile.
            const auto result = execute(*generator, job->request);
            engine.on_generation_done(job->id, result, steady_ms());
            continue;
        }
        asio::post(worker, [self = shared_from_this(), job = std::move(*job)] {
            auto result = execute(*self->generator, job.request);
            asio::post(self->ioc, [self, id = job.id, result = std::move(result)] {
                self->engine.on_generation_done(id, result, steady_ms());
                self->pump();
            });
        });
    }
    sink.flush();

    if (engine.state() == proto::HandshakeState::Stopped || engine.rejected()) {
        finish();
        return;
    }
    if (const auto next = engine.next_wakeup(steady_ms())) {
        wake.expires_at(at_ms(*next));
        wake.async_wait([self = shared_from_this()](beast::error_code ec) {
            if (ec)
                return;
            const auto events = self->engine.advance(steady_ms());
            for (const auto& ev : events)
                self->sink.on_event(ev);
            self->pump();
        });
    } else {
        wake.cancel();
    }
}

void detail::ClientState::finish()
{
    if (done)
        return;
    done = true;
    wake.cancel();
    retry.cancel();
    if (connected && ws) {
        if (const auto id = engine.performer_id(); id && !engine.rejected())
            writes.push_back(proto::encode(proto::Bye{*id}));
        ws->text(true);
        // Flush what is queued, then close; errors are irrelevant by now.
        auto self = shared_from_this();
        auto drain = std::make_shared<std::function<void()>>();
        *drain = [self, drain] {
            if (self->writes.empty() || self->writing) {
                if (!self->writing)
                    self->ws->async_close(websocket::close_code::normal, [self](beast::error_code) {});
                return;
            }
            self->writing = true;
            self->ws->async_write(asio::buffer(self->writes.front()), [self, drain](beast::error_code ec, std::size_t) {
                self->writing = false;
                self->writes.pop_front();
                if (ec)
                    self->writes.clear();
                (*drain)();
            });
        };
        if (!writing)
            (*drain)();
    }
    connected = false;
}

Client::Client(ClientOptions options, std::shared_ptr<const MelodyGenerator> generator, EventSink& sink)
    : impl_(std::make_shared<detail::ClientState>(std::move(options), std::move(generator), sink))
{
}

Client::~Client()
{
    impl_->worker.join();
}

void Client::run()
{
    asio::post(impl_->ioc, [impl = impl_] { impl->connect(); });
    impl_->ioc.run();
    impl_->worker.join();
    impl_->sink.flush();
}

void Client::stop()
{
    asio::post(impl_->ioc, [impl = impl_] {
        impl->finish();
        if (impl->ws) {
            beast::error_code ec;
            beast::get_lowest_layer(*impl->ws).socket().cancel(ec);
        }
    });
}

void Client::control(proto::ControlField field, double value)
{
    asio::post(impl_->ioc, [impl = impl_, field, value] {
        if (impl->engine.handle_control(field, value)) {
            if (const auto id = impl->engine.performer_id())
                impl->write(proto::encode(proto::Control{*id, field, value}));
        }
        impl->pump();
    });
}

void Client::note_on(int pitch, int velocity)
{
    asio::post(impl_->ioc, [impl = impl_, pitch, velocity] {
        impl->engine.manual_note_on(pitch, velocity, steady_ms());
        impl->pump();
    });
}

void Client::note_off(int pitch)
{
    asio::post(impl_->ioc, [impl = impl_, pitch] {
        impl->engine.manual_note_off(pitch, steady_ms());
        impl->pump();
    });
}

proto::HandshakeState Client::state() const
{
    return impl_->engine.state();
}

std::optional<int> Client::performer_id() const
{
    return impl_->engine.performer_id();
}

std::size_t Client::regenerations() const
{
    return impl_->engine.completed_regenerations();
}

} // namespace ensemble::net
