#pragma once

// WebSocket front end for Session. Plain HTTP GETs are answered from an
// optional static directory. Single-threaded io_context: every session's
// frames are handled strictly in arrival order.

#include <atomic>
#include <deque>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <sstream>
#include <string>

#include <boost/asio.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/http.hpp>
#include <boost/beast/websocket.hpp>

#include "revmap/service.hpp"

namespace revmap {

namespace net = boost::asio;
namespace beast = boost::beast;
namespace http = beast::http;
namespace websocket = beast::websocket;
using tcp = net::ip::tcp;

struct ServerConfig {
  std::string address = "127.0.0.1";
  unsigned short port = 8765;  // 0 picks a free port
  SessionConfig session;
  std::filesystem::path static_root;   // empty disables static files
  std::filesystem::path log_directory; // per-session logs written on close when set
};

namespace detail {

inline std::string mime_type(const std::filesystem::path& p) {
  const auto ext = p.extension().string();
  if (ext == ".html") return "text/html";
  if (ext == ".js") return "application/javascript";
  if (ext == ".css") return "text/css";
  if (ext == ".json") return "application/json";
  if (ext == ".svg") return "image/svg+xml";
  if (ext == ".png") return "image/png";
  return "application/octet-stream";
}

class WsConnection : public std::enable_shared_from_this<WsConnection> {
 public:
  WsConnection(tcp::socket socket, std::unique_ptr<Session> session, std::filesystem::path log_dir)
      : ws_(std::move(socket)), session_(std::move(session)), log_dir_(std::move(log_dir)) {}

  ~WsConnection() {
    if (log_dir_.empty() || !session_) return;
    std::ofstream os(log_dir_ / (session_->id() + ".jsonl"));
    if (os) session_->write_log(os);
  }

  template <class Body, class Alloc>
  void start(http::request<Body, http::basic_fields<Alloc>> req) {
    ws_.set_option(websocket::stream_base::timeout::suggested(beast::role_type::server));
    ws_.async_accept(req, [self = shared_from_this()](beast::error_code ec) {
      if (ec) return;
      self->enqueue(self->session_->hello().dump());
      self->enqueue(self->session_->state_frame().dump());
      self->read();
    });
  }

 private:
  void read() {
    ws_.async_read(buffer_, [self = shared_from_this()](beast::error_code ec, std::size_t) {
      if (ec) return;
      const std::string text = beast::buffers_to_string(self->buffer_.data());
      self->buffer_.consume(self->buffer_.size());
      for (auto& frame : self->session_->handle(text)) self->enqueue(std::move(frame));
      self->read();
    });
  }

  void enqueue(std::string frame) {
    queue_.push_back(std::move(frame));
    if (queue_.size() == 1) write_next();
  }

  void write_next() {
    ws_.text(true);
    ws_.async_write(net::buffer(queue_.front()), [self = shared_from_this()](beast::error_code ec, std::size_t) {
      if (ec) return;
      self->queue_.pop_front();
      if (!self->queue_.empty()) self->write_next();
    });
  }

  websocket::stream<beast::tcp_stream> ws_;
  beast::flat_buffer buffer_;
  std::deque<std::string> queue_;
  std::unique_ptr<Session> session_;
  std::filesystem::path log_dir_;
};

class HttpConnection : public std::enable_shared_from_this<HttpConnection> {
 public:
  using SessionFactory = std::function<std::unique_ptr<Session>()>;

  HttpConnection(tcp::socket socket, SessionFactory factory, const ServerConfig& cfg)
      : stream_(std::move(socket)), factory_(std::move(factory)), cfg_(cfg) {}

  void start() {
    stream_.expires_after(std::chrono::seconds(30));
    http::async_read(stream_, buffer_, req_, [self = shared_from_this()](beast::error_code ec, std::size_t) {
      if (!ec) self->dispatch();
    });
  }

 private:
  void dispatch() {
    if (websocket::is_upgrade(req_)) {
      stream_.expires_never();
      std::unique_ptr<Session> session;
      try {
        session = factory_();
      } catch (const Error& e) {
        respond(http::status::service_unavailable, e.what(), "text/plain");
        return;
      }
      std::make_shared<WsConnection>(stream_.release_socket(), std::move(session), cfg_.log_directory)
          ->start(std::move(req_));
      return;
    }
    serve_static();
  }

  void serve_static() {
    if (req_.method() != http::verb::get || cfg_.static_root.empty()) {
      respond(http::status::not_found, "not found", "text/plain");
      return;
    }
    std::string target(req_.target());
    if (auto q = target.find('?'); q != std::string::npos) target.resize(q);
    if (target.empty() || target.back() == '/') target += "index.html";
    if (target.find("..") != std::string::npos) {
      respond(http::status::bad_request, "bad path", "text/plain");
      return;
    }
    const auto path = cfg_.static_root / target.substr(1);
    std::ifstream is(path, std::ios::binary);
    if (!is) {
      respond(http::status::not_found, "not found", "text/plain");
      return;
    }
    std::ostringstream body;
    body << is.rdbuf();
    respond(http::status::ok, body.str(), mime_type(path));
  }

  void respond(http::status status, std::string body, const std::string& type) {
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
  SessionFactory factory_;
  const ServerConfig& cfg_;
};

}  // namespace detail

class WsServer {
 public:
  WsServer(std::shared_ptr<const ModelStore> store, ServerConfig cfg)
      : store_(std::move(store)), cfg_(std::move(cfg)), acceptor_(ioc_) {
    if (!store_ || store_->empty()) throw InputError("server: no models loaded");
    // Fail early on a bad session configuration.
    Session probe(store_, "probe", cfg_.session);
    const tcp::endpoint ep(net::ip::make_address(cfg_.address), cfg_.port);
    acceptor_.open(ep.protocol());
    acceptor_.set_option(net::socket_base::reuse_address(true));
    acceptor_.bind(ep);
    acceptor_.listen();
  }

  unsigned short port() const { return acceptor_.local_endpoint().port(); }

  // Blocks until stop().
  void run() {
    accept();
    ioc_.run();
  }

  void stop() {
    net::post(ioc_, [this] {
      beast::error_code ec;
      acceptor_.close(ec);
      ioc_.stop();
    });
  }

 private:
  void accept() {
    acceptor_.async_accept(net::make_strand(ioc_), [this](beast::error_code ec, tcp::socket socket) {
      if (ec) return;
      auto factory = [this] {
        return std::make_unique<Session>(store_, "s" + std::to_string(++counter_), cfg_.session);
      };
      std::make_shared<detail::HttpConnection>(std::move(socket), factory, cfg_)->start();
      accept();
    });
  }

  std::shared_ptr<const ModelStore> store_;
  ServerConfig cfg_;
  net::io_context ioc_{1};
  tcp::acceptor acceptor_;
  std::atomic<long> counter_{0};
};

}  // namespace revmap
