#include "ensemble/net.hpp"

#include "ensemble/errors.hpp"

#include <boost/asio.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/http.hpp>
#include <boost/beast/websocket.hpp>
#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <chrono>
#include <cstdlib>
#include <deque>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <thread>

namespace ensemble::net {

namespace asio = boost::asio;
namespace beast = boost::beast;
namespace http = beast::http;
namespace websocket = beast::websocket;
using tcp = asio::ip::tcp;

unsigned short port_from_env(unsigned short fallback)
{
    const char* v = std::getenv("ENSEMBLE_PORT");
    if (!v || !*v)
        return fallback;
    char* end = nullptr;
    const long p = std::strtol(v, &end, 10);
    if (*end != '\0' || p < 0 || p > 65535) {
        spdlog::warn("ignoring ENSEMBLE_PORT={}", v);
        return fallback;
    }
    return static_cast<unsigned short>(p);
}

double steady_ms()
{
    static const auto origin = std::chrono::steady_clock::now();
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - origin).count();
}

namespace {

constexpr const char* kIndexPage = R"html(<!doctype html>
<html><head><meta charset="utf-8"><title>ensemble</title>
<style>body{font-family:sans-serif;margin:2em}#log{font-family:monospace;white-space:pre;height:20em;overflow:auto}</style>
</head><body>
<h1>ensemble</h1>
<p>status: <span id="status">waiting</span></p>
<div id="log"></div>
<script>
const status = document.getElementById('status');
const log = document.getElementById('log');
const ws = new WebSocket(`ws://${location.host}/`);
ws.onopen = () => ws.send(JSON.stringify({v: 1, type: 'Hello', client_name: 'browser', role: 'observer'}));
ws.onclose = () => { status.textContent = 'disconnected'; };
ws.onmessage = (e) => {
  const m = JSON.parse(e.data);
  if (m.type === 'Start' || m.type === 'Resync') status.textContent = 'running';
  if (m.type === 'Stop') status.textContent = 'stopped';
  log.textContent += e.data + '\n';
  log.scrollTop = log.scrollHeight;
};
</script>
</body></html>
)html";

std::string mime_type(const std::filesystem::path& p)
{
    const auto ext = p.extension().string();
    if (ext == ".html" || ext == ".htm")
        return "text/html";
    if (ext == ".js" || ext == ".mjs")
        return "text/javascript";
    if (ext == ".css")
        return "text/css";
    if (ext == ".json")
        return "application/json";
    if (ext == ".svg")
        return "image/svg+xml";
    if (ext == ".png")
        return "image/png";
    return "application/octet-stream";
}

} // namespace

class WsSession;

struct detail::ServerState : std::enable_shared_from_this<detail::ServerState> {
    ServerState(ConductorConfig config, ServerOptions options)
        : opts(std::move(options))
        , conductor(std::move(config), [](const std::string& line) { fmt::print("{}\n", line); std::fflush(stdout); })
    {
    }

    void listen();
    void accept();
    void deliver();
    std::string static_body(const std::string& target, std::string& type, http::status& status) const;

    ServerOptions opts;
    asio::io_context ioc{1};
    tcp::acceptor acceptor{ioc};
    Conductor conductor;
    std::map<ConnectionId, std::weak_ptr<WsSession>> sessions;
    ConnectionId next_id = 1;
    std::thread thread;
    std::atomic<unsigned short> bound{0};
};

class WsSession : public std::enable_shared_from_this<WsSession> {
public:
    WsSession(tcp::socket socket, std::shared_ptr<detail::ServerState> server)
        : ws_(std::move(socket))
        , server_(std::move(server))
    {
    }

    void accept(http::request<http::string_body> req)
    {
        ws_.set_option(websocket::stream_base::timeout::suggested(beast::role_type::server));
        ws_.async_accept(req, [self = shared_from_this()](beast::error_code ec) {
            if (ec)
                return;
            self->opened();
        });
    }

    void send(std::string text)
    {
        writes_.push_back(std::move(text));
        if (!writing_)
            write_next();
    }

    void close()
    {
        beast::error_code ec;
        ws_.next_layer().socket().shutdown(tcp::socket::shutdown_both, ec);
    }

private:
    void opened()
    {
        id_ = server_->next_id++;
        server_->sessions[id_] = weak_from_this();
        server_->conductor.on_open(id_, steady_ms());
        server_->deliver();
        read();
    }

    void read()
    {
        ws_.async_read(buffer_, [self = shared_from_this()](beast::error_code ec, std::size_t) {
            if (ec) {
                self->closed();
                return;
            }
            const std::string text = beast::buffers_to_string(self->buffer_.data());
            self->buffer_.consume(self->buffer_.size());
            self->handle(text);
            self->read();
        });
    }

    void handle(const std::string& text)
    {
        const double now = steady_ms();
        try {
            server_->conductor.on_message(id_, proto::decode(text), now);
        } catch (const DecodeError& e) {
            send(proto::encode(proto::Reject{e.what(), e.tag()}));
        }
        server_->deliver();
    }

    void closed()
    {
        if (id_ == 0)
            return;
        server_->conductor.on_close(id_, steady_ms());
        server_->sessions.erase(id_);
        id_ = 0;
        server_->deliver();
    }

    void write_next()
    {
        writing_ = true;
        ws_.text(true);
        ws_.async_write(asio::buffer(writes_.front()), [self = shared_from_this()](beast::error_code ec, std::size_t) {
            self->writes_.pop_front();
            if (ec) {
                self->writing_ = false;
                self->writes_.clear();
                return;
            }
            if (self->writes_.empty())
                self->writing_ = false;
            else
                self->write_next();
        });
    }

    websocket::stream<beast::tcp_stream> ws_;
    std::shared_ptr<detail::ServerState> server_;
    beast::flat_buffer buffer_;
    std::deque<std::string> writes_;
    bool writing_ = false;
    ConnectionId id_ = 0;
};

class HttpSession : public std::enable_shared_from_this<HttpSession> {
public:
    HttpSession(tcp::socket socket, std::shared_ptr<detail::ServerState> server)
        : stream_(std::move(socket))
        , server_(std::move(server))
    {
    }

    void start()
    {
        stream_.expires_after(std::chrono::seconds(30));
        http::async_read(stream_, buffer_, req_, [self = shared_from_this()](beast::error_code ec, std::size_t) {
            if (ec)
                return;
            self->route();
        });
    }

private:
    void route()
    {
        if (websocket::is_upgrade(req_)) {
            stream_.expires_never();
            std::make_shared<WsSession>(stream_.release_socket(), server_)->accept(std::move(req_));
            return;
        }
        auto res = std::make_shared<http::response<http::string_body>>();
        res->version(req_.version());
        res->keep_alive(false);
        res->set(http::field::server, "ensemble");
        if (req_.method() != http::verb::get && req_.method() != http::verb::head) {
            res->result(http::status::method_not_allowed);
            res->body() = "method not allowed\n";
            res->set(http::field::content_type, "text/plain");
        } else {
            std::string type;
            http::status status = http::status::ok;
            res->body() = server_->static_body(std::string(req_.target()), type, status);
            res->result(status);
            res->set(http::field::content_type, type);
        }
        res->prepare_payload();
        http::async_write(stream_, *res, [self = shared_from_this(), res](beast::error_code, std::size_t) {
            beast::error_code ec;
            self->stream_.socket().shutdown(tcp::socket::shutdown_send, ec);
        });
    }

    beast::tcp_stream stream_;
    std::shared_ptr<detail::ServerState> server_;
    beast::flat_buffer buffer_;
    http::request<http::string_body> req_;
};

std::string detail::ServerState::static_body(const std::string& target, std::string& type, http::status& status) const
{
    std::string path = target.substr(0, target.find('?'));
    if (opts.web_root.empty()) {
        if (path == "/" || path == "/index.html") {
            type = "text/html";
            return kIndexPage;
        }
        status = http::status::not_found;
        type = "text/plain";
        return "not found\n";
    }
    if (path.empty() || path.back() == '/')
        path += "index.html";
    if (path.find("..") != std::string::npos) {
        status = http::status::bad_request;
        type = "text/plain";
        return "bad path\n";
    }
    const std::filesystem::path file = std::filesystem::path(opts.web_root) / path.substr(1);
    std::ifstream in(file, std::ios::binary);
    if (!in) {
        status = http::status::not_found;
        type = "text/plain";
        return "not found\n";
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    type = mime_type(file);
    return ss.str();
}

void detail::ServerState::listen()
{
    const tcp::endpoint ep(asio::ip::make_address(opts.bind), opts.port);
    acceptor.open(ep.protocol());
    acceptor.set_option(asio::socket_base::reuse_address(true));
    acceptor.bind(ep);
    acceptor.listen(asio::socket_base::max_listen_connections);
    bound = acceptor.local_endpoint().port();
    fmt::print("t={:.3f} event=listen port={}\n", steady_ms(), bound.load());
    std::fflush(stdout);
    accept();
}

void detail::ServerState::accept()
{
    acceptor.async_accept([self = shared_from_this()](beast::error_code ec, tcp::socket socket) {
        if (ec)
            return;
        std::make_shared<HttpSession>(std::move(socket), self)->start();
        self->accept();
    });
}

void detail::ServerState::deliver()
{
    for (auto& out : conductor.take_outbox()) {
        auto it = sessions.find(out.to);
        if (it == sessions.end())
            continue;
        if (auto s = it->second.lock())
            s->send(proto::encode(out.msg));
    }
}

Server::Server(ConductorConfig config, ServerOptions options)
    : impl_(std::make_shared<detail::ServerState>(std::move(config), std::move(options)))
{
}

Server::~Server()
{
    stop();
}

unsigned short Server::start()
{
    impl_->listen();
    impl_->thread = std::thread([impl = impl_] { impl->ioc.run(); });
    return impl_->bound;
}

void Server::run()
{
    impl_->listen();
    impl_->ioc.run();
}

void Server::stop()
{
    asio::post(impl_->ioc, [impl = impl_] {
        beast::error_code ec;
        impl->acceptor.close(ec);
        for (auto& [id, weak] : impl->sessions) {
            if (auto s = weak.lock())
                s->close();
        }
    });
    impl_->ioc.stop();
    if (impl_->thread.joinable() && impl_->thread.get_id() != std::this_thread::get_id())
        impl_->thread.join();
}

unsigned short Server::port() const noexcept
{
    return impl_->bound;
}

void Server::post(std::function<void(Conductor&, double)> fn)
{
    asio::post(impl_->ioc, [impl = impl_, fn = std::move(fn)] {
        fn(impl->conductor, steady_ms());
        impl->deliver();
    });
}

} // namespace ensemble::net
