#pragma once

// WebSocket transport for TeleopSession (Boost.Beast, one io_context thread).

#include <atomic>
#include <chrono>
#include <deque>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <sstream>
#include <string>

#include <boost/asio.hpp>
#include <boost/beast.hpp>
#include <boost/beast/websocket.hpp>

#include "pathfollow/teleop_session.hpp"

namespace pathfollow {

struct TeleopServerConfig {
  std::string address = "127.0.0.1";
  unsigned short port = 8765;  // 0 picks a free port
  double tick_rate = 50.0;     // state frames per second
  std::string ui_dir;          // static files served over plain HTTP when set
  TeleopOptions session{};
};

namespace detail {

namespace beast = boost::beast;
namespace http = beast::http;
namespace websocket = beast::websocket;
namespace net = boost::asio;
using tcp = net::ip::tcp;

inline std::string mime_type(const std::string& path) {
  const auto ext = std::filesystem::path(path).extension().string();
  if (ext == ".html" || ext == ".htm") return "text/html";
  if (ext == ".js" || ext == ".mjs") return "application/javascript";
  if (ext == ".css") return "text/css";
  if (ext == ".json") return "application/json";
  if (ext == ".svg") return "image/svg+xml";
  if (ext == ".png") return "image/png";
  return "application/octet-stream";
}

class WsSession : public std::enable_shared_from_this<WsSession> {
 public:
  WsSession(tcp::socket socket, std::string id, const TeleopServerConfig& cfg)
      : ws_(std::move(socket)), timer_(ws_.get_executor()), logic_(std::move(id), cfg.session),
        period_(std::chrono::duration_cast<std::chrono::steady_clock::duration>(
            std::chrono::duration<double>(1.0 / cfg.tick_rate))) {}

  void run(http::request<http::string_body> req) {
    ws_.set_option(websocket::stream_base::timeout::suggested(beast::role_type::server));
    ws_.async_accept(req, [self = shared_from_this()](beast::error_code ec) {
      if (ec) return;
      self->opened_ = std::chrono::steady_clock::now();
      self->next_tick_ = self->opened_;
      self->send(self->logic_.hello());
      self->read();
      self->tick();
    });
  }

 private:
  double elapsed() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - opened_).count();
  }

  void read() {
    ws_.async_read(buffer_, [self = shared_from_this()](beast::error_code ec, std::size_t) {
      if (ec) return self->shutdown();
      const std::string text = beast::buffers_to_string(self->buffer_.data());
      self->buffer_.consume(self->buffer_.size());
      self->logic_.advance_to(self->elapsed());
      for (auto& reply : self->logic_.handle(text)) self->send(reply);
      self->read();
    });
  }

  void tick() {
    next_tick_ += period_;
    timer_.expires_at(next_tick_);
    timer_.async_wait([self = shared_from_this()](beast::error_code ec) {
      if (ec || self->closed_) return;
      self->logic_.advance_to(self->elapsed());
      if (auto frame = self->logic_.state_frame()) self->send(*frame);
      // Fall back to "now" if the loop lagged by more than a few ticks.
      const auto now = std::chrono::steady_clock::now();
      if (now - self->next_tick_ > 5 * self->period_) self->next_tick_ = now;
      self->tick();
    });
  }

  void send(const nlohmann::json& frame) {
    if (closed_) return;
    queue_.push_back(frame.dump());
    if (queue_.size() == 1) write_next();
  }

  void write_next() {
    ws_.text(true);
    ws_.async_write(net::buffer(queue_.front()), [self = shared_from_this()](beast::error_code ec, std::size_t) {
      if (ec) return self->shutdown();
      self->queue_.pop_front();
      if (!self->queue_.empty()) self->write_next();
    });
  }

  void shutdown() {
    if (closed_) return;
    closed_ = true;
    timer_.cancel();
    logic_.close();
  }

  websocket::stream<beast::tcp_stream> ws_;
  net::steady_timer timer_;
  beast::flat_buffer buffer_;
  std::deque<std::string> queue_;
  TeleopSession logic_;
  std::chrono::steady_clock::duration period_;
  std::chrono::steady_clock::time_point opened_;
  std::chrono::steady_clock::time_point next_tick_;
  bool closed_ = false;
};

class HttpConnection : public std::enable_shared_from_this<HttpConnection> {
 public:
  HttpConnection(tcp::socket socket, const TeleopServerConfig& cfg, std::function<std::string()> next_id)
      : stream_(std::move(socket)), cfg_(cfg), next_id_(std::move(next_id)) {}

  void run() {
    stream_.expires_after(std::chrono::seconds(30));
    http::async_read(stream_, buffer_, req_, [self = shared_from_this()](beast::error_code ec, std::size_t) {
      if (ec) return;
      self->dispatch();
    });
  }

 private:
  void dispatch() {
    if (websocket::is_upgrade(req_)) {
      if (req_.target() != "/session") return respond(http::status::not_found, "text/plain", "unknown endpoint\n");
      stream_.expires_never();
      std::make_shared<WsSession>(stream_.release_socket(), next_id_(), cfg_)->run(std::move(req_));
      return;
    }
    if (req_.method() != http::verb::get || cfg_.ui_dir.empty())
      return respond(http::status::not_found, "text/plain", "not found\n");
    std::string target(req_.target());
    if (target.find("..") != std::string::npos) return respond(http::status::bad_request, "text/plain", "bad path\n");
    if (const auto q = target.find('?'); q != std::string::npos) target.resize(q);
    if (target.empty() || target.back() == '/') target += "index.html";
    const std::string file = cfg_.ui_dir + target;
    std::ifstream in(file, std::ios::binary);
    if (!in) return respond(http::status::not_found, "text/plain", "not found\n");
    std::ostringstream body;
    body << in.rdbuf();
    respond(http::status::ok, mime_type(file), body.str());
  }

  void respond(http::status status, const std::string& type, std::string body) {
    auto res = std::make_shared<http::response<http::string_body>>(status, req_.version());
    res->set(http::field::content_type, type);
    res->keep_alive(false);
    res->body() = std::move(body);
    res->prepare_payload();
    http::async_write(stream_, *res, [self = shared_from_this(), res](beast::error_code, std::size_t) {
      beast::error_code ignored;
      self->stream_.socket().shutdown(tcp::socket::shutdown_send, ignored);
    });
  }

  beast::tcp_stream stream_;
  beast::flat_buffer buffer_;
  http::request<http::string_body> req_;
  const TeleopServerConfig& cfg_;
  std::function<std::string()> next_id_;
};

}  // namespace detail

/// Accepts WebSocket clients on `/session`; each connection owns one
/// TeleopSession paced by wall-clock time. `run()` blocks until `stop()`.
class TeleopServer {
 public:
  explicit TeleopServer(TeleopServerConfig cfg) : cfg_(std::move(cfg)), acceptor_(ioc_) {
    if (!(cfg_.tick_rate > 0.0 && cfg_.tick_rate <= 1000.0))
      throw InvalidArgument("teleop: tick rate must be in (0, 1000] Hz");
    namespace net = detail::net;
    boost::system::error_code ec;
    const auto addr = net::ip::make_address(cfg_.address, ec);
    if (ec) throw InvalidArgument("teleop: bad address '" + cfg_.address + "'");
    const detail::tcp::endpoint ep(addr, cfg_.port);
    acceptor_.open(ep.protocol(), ec);
    if (!ec) acceptor_.set_option(net::socket_base::reuse_address(true), ec);
    if (!ec) acceptor_.bind(ep, ec);
    if (!ec) acceptor_.listen(net::socket_base::max_listen_connections, ec);
    if (ec)
      throw IoError("teleop: cannot listen on " + cfg_.address + ":" + std::to_string(cfg_.port) + " (" +
                    ec.message() + ")");
    port_ = acceptor_.local_endpoint().port();
  }

  unsigned short port() const { return port_; }

  void run() {
    accept();
    ioc_.run();
  }

  /// Safe to call from any thread.
  void stop() {
    detail::net::post(ioc_, [this] {
      boost::system::error_code ignored;
      acceptor_.close(ignored);
      ioc_.stop();
    });
  }

 private:
  void accept() {
    acceptor_.async_accept(detail::net::make_strand(ioc_), [this](boost::system::error_code ec, detail::tcp::socket s) {
      if (ec) return;
      std::make_shared<detail::HttpConnection>(std::move(s), cfg_, [this] { return "s" + std::to_string(++sessions_); })
          ->run();
      accept();
    });
  }

  TeleopServerConfig cfg_;
  detail::net::io_context ioc_{1};
  detail::tcp::acceptor acceptor_;
  unsigned short port_ = 0;
  std::atomic<int> sessions_{0};
};

}  // namespace pathfollow
