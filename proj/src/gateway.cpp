#include "puppetchat/gateway.hpp"

#include <condition_variable>
#include <deque>
#include <mutex>
#include <thread>
#include <unordered_map>

#include <boost/asio.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/http.hpp>
#include <boost/beast/websocket.hpp>
#include <httplib.h>

#include "puppetchat/error.hpp"

namespace puppetchat {

namespace beast = boost::beast;
namespace http = beast::http;
namespace websocket = beast::websocket;
namespace net = boost::asio;
using tcp = net::ip::tcp;
using nlohmann::json;

namespace {

constexpr std::size_t kMaxQueuedFrames = 4096;
constexpr std::size_t kMaxFrameBytes = 1 << 20;

int hex_value(char c) {
  if (c >= '0' && c <= '9') return c - '0';
  if (c >= 'a' && c <= 'f') return c - 'a' + 10;
  if (c >= 'A' && c <= 'F') return c - 'A' + 10;
  return -1;
}

std::string url_decode(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] == '+') {
      out += ' ';
    } else if (s[i] == '%' && i + 2 < s.size() && hex_value(s[i + 1]) >= 0 && hex_value(s[i + 2]) >= 0) {
      out += static_cast<char>(hex_value(s[i + 1]) * 16 + hex_value(s[i + 2]));
      i += 2;
    } else {
      out += s[i];
    }
  }
  return out;
}

void split_target(std::string_view target, std::string& path, std::map<std::string, std::string>& query) {
  const auto q = target.find('?');
  path = url_decode(target.substr(0, q));
  if (q == std::string_view::npos) return;
  std::string_view rest = target.substr(q + 1);
  while (!rest.empty()) {
    const auto amp = rest.find('&');
    const std::string_view pair = rest.substr(0, amp);
    const auto eq = pair.find('=');
    if (!pair.empty()) {
      query[url_decode(pair.substr(0, eq))] = eq == std::string_view::npos ? "" : url_decode(pair.substr(eq + 1));
    }
    if (amp == std::string_view::npos) break;
    rest = rest.substr(amp + 1);
  }
}

class WsSession : public std::enable_shared_from_this<WsSession> {
 public:
  WsSession(tcp::socket&& socket, Service& service) : ws_(std::move(socket)), service_(service) {}

  void run(http::request<http::string_body> req) {
    ws_.set_option(websocket::stream_base::timeout::suggested(beast::role_type::server));
    ws_.set_option(websocket::stream_base::decorator(
        [](websocket::response_type& res) { res.set(http::field::server, "puppetchat"); }));
    ws_.read_message_max(kMaxFrameBytes);
    ws_.async_accept(req, beast::bind_front_handler(&WsSession::on_accept, shared_from_this()));
  }

  void enqueue(std::string frame) {
    net::post(ws_.get_executor(), [self = shared_from_this(), f = std::move(frame)]() mutable {
      if (self->closed_) return;
      if (self->queue_.size() >= kMaxQueuedFrames) {
        // a reader this far behind is treated as gone
        self->finish();
        beast::get_lowest_layer(self->ws_).close();
        return;
      }
      self->queue_.push_back(std::move(f));
      if (self->queue_.size() == 1) self->do_write();
    });
  }

 private:
  class Sink : public FrameSink {
   public:
    explicit Sink(std::weak_ptr<WsSession> owner) : owner_(std::move(owner)) {}
    void send(std::string frame) override {
      if (auto s = owner_.lock()) s->enqueue(std::move(frame));
    }

   private:
    std::weak_ptr<WsSession> owner_;
  };

  void on_accept(beast::error_code ec) {
    if (ec) return;
    session_ = service_.open_session(std::make_shared<Sink>(weak_from_this()));
    do_read();
  }

  void do_read() {
    ws_.async_read(buffer_, beast::bind_front_handler(&WsSession::on_read, shared_from_this()));
  }

  void on_read(beast::error_code ec, std::size_t) {
    if (ec) {
      finish();
      return;
    }
    std::string frame = beast::buffers_to_string(buffer_.data());
    buffer_.consume(buffer_.size());
    service_.handle_frame(session_, frame);
    do_read();
  }

  void do_write() {
    ws_.text(true);
    ws_.async_write(net::buffer(queue_.front()),
                    beast::bind_front_handler(&WsSession::on_write, shared_from_this()));
  }

  void on_write(beast::error_code ec, std::size_t) {
    if (ec) {
      finish();
      return;
    }
    queue_.pop_front();
    if (!queue_.empty()) do_write();
  }

  void finish() {
    if (closed_) return;
    closed_ = true;
    queue_.clear();
    if (session_) service_.close_session(session_);
  }

  websocket::stream<beast::tcp_stream> ws_;
  Service& service_;
  beast::flat_buffer buffer_;
  std::deque<std::string> queue_;
  std::shared_ptr<Session> session_;
  bool closed_ = false;
};

class HttpSession : public std::enable_shared_from_this<HttpSession> {
 public:
  HttpSession(tcp::socket&& socket, Service& service) : stream_(std::move(socket)), service_(service) {}

  void run() {
    net::dispatch(stream_.get_executor(), beast::bind_front_handler(&HttpSession::do_read, shared_from_this()));
  }

 private:
  void do_read() {
    req_ = {};
    parser_.emplace();
    parser_->body_limit(kMaxFrameBytes);
    stream_.expires_after(std::chrono::seconds(30));
    http::async_read(stream_, buffer_, *parser_,
                     beast::bind_front_handler(&HttpSession::on_read, shared_from_this()));
  }

  void on_read(beast::error_code ec, std::size_t) {
    if (ec == http::error::end_of_stream) {
      stream_.socket().shutdown(tcp::socket::shutdown_send, ec);
      return;
    }
    if (ec) return;
    req_ = parser_->release();

    HttpRequest request;
    request.method = std::string(req_.method_string());
    const auto target = req_.target();
    split_target(std::string_view(target.data(), target.size()), request.path, request.query);
    request.body = req_.body();
    const auto auth_field = req_[http::field::authorization];
    const std::string_view auth(auth_field.data(), auth_field.size());
    if (auth.starts_with("Bearer ")) request.bearer = std::string(auth.substr(7));
    if (request.bearer.empty() && request.query.contains("token")) request.bearer = request.query["token"];

    if (websocket::is_upgrade(req_)) {
      if (request.path == "/ws") {
        stream_.expires_never();
        std::make_shared<WsSession>(stream_.release_socket(), service_)->run(std::move(req_));
        return;
      }
      respond({404, error_payload(ErrorCode::not_found, "websocket endpoint is /ws")});
      return;
    }
    respond(service_.handle_http(request));
  }

  void respond(HttpResponse r) {
    auto res = std::make_shared<http::response<http::string_body>>(static_cast<http::status>(r.status),
                                                                    req_.version());
    res->set(http::field::server, "puppetchat");
    res->set(http::field::content_type, "application/json");
    res->keep_alive(req_.keep_alive());
    res->body() = r.body.dump(-1, ' ', false, json::error_handler_t::replace);
    res->prepare_payload();
    http::async_write(stream_, *res, [self = shared_from_this(), res](beast::error_code ec, std::size_t) {
      if (ec) return;
      if (res->need_eof()) {
        self->stream_.socket().shutdown(tcp::socket::shutdown_send, ec);
        return;
      }
      self->do_read();
    });
  }

  beast::tcp_stream stream_;
  Service& service_;
  beast::flat_buffer buffer_;
  std::optional<http::request_parser<http::string_body>> parser_;
  http::request<http::string_body> req_;
};

}  // namespace

// ---------------------------------------------------------------------------
// Server

struct Server::Impl {
  Service& service;
  std::string address;
  unsigned short port;
  int threads;
  net::io_context ioc;
  tcp::acceptor acceptor{ioc};
  std::vector<std::thread> workers;
  std::mutex mutex;
  std::condition_variable cv;
  bool running = false;

  Impl(Service& s, std::string a, unsigned short p, int t) : service(s), address(std::move(a)), port(p), threads(t) {}

  void do_accept() {
    acceptor.async_accept(net::make_strand(ioc), [this](beast::error_code ec, tcp::socket socket) {
      if (!acceptor.is_open()) return;
      if (!ec) std::make_shared<HttpSession>(std::move(socket), service)->run();
      do_accept();
    });
  }
};

Server::Server(Service& service, std::string address, unsigned short port, int threads)
    : impl_(std::make_unique<Impl>(service, std::move(address), port, threads)) {}

Server::~Server() { stop(); }

void Server::start() {
  std::lock_guard lock(impl_->mutex);
  if (impl_->running) return;
  beast::error_code ec;
  const auto addr = net::ip::make_address(impl_->address, ec);
  if (ec) throw Error(ErrorCode::configuration, "bad listen address '" + impl_->address + "'", impl_->address);
  const tcp::endpoint endpoint{addr, impl_->port};
  auto& acc = impl_->acceptor;
  acc.open(endpoint.protocol(), ec);
  if (!ec) acc.set_option(net::socket_base::reuse_address(true), ec);
  if (!ec) acc.bind(endpoint, ec);
  if (!ec) acc.listen(net::socket_base::max_listen_connections, ec);
  if (ec) {
    throw Error(ErrorCode::network,
                "cannot listen on " + impl_->address + ":" + std::to_string(impl_->port) + ": " + ec.message());
  }
  impl_->port = acc.local_endpoint().port();
  impl_->do_accept();
  int n = impl_->threads > 0 ? impl_->threads : static_cast<int>(std::thread::hardware_concurrency());
  n = std::max(n, 2);
  for (int i = 0; i < n; ++i) impl_->workers.emplace_back([this] { impl_->ioc.run(); });
  impl_->running = true;
}

unsigned short Server::port() const { return impl_->port; }

void Server::stop() {
  {
    std::lock_guard lock(impl_->mutex);
    if (!impl_->running) return;
    impl_->running = false;
  }
  net::post(impl_->ioc, [this] {
    beast::error_code ec;
    impl_->acceptor.close(ec);
  });
  impl_->ioc.stop();
  for (auto& t : impl_->workers) t.join();
  impl_->workers.clear();
  impl_->cv.notify_all();
}

void Server::wait() {
  std::unique_lock lock(impl_->mutex);
  impl_->cv.wait(lock, [&] { return !impl_->running; });
}

// ---------------------------------------------------------------------------
// GatewayClient

struct GatewayClient::Impl : std::enable_shared_from_this<GatewayClient::Impl> {
  std::string host;
  unsigned short port;
  net::io_context ioc;
  websocket::stream<beast::tcp_stream> ws{net::make_strand(ioc)};
  beast::flat_buffer buffer;
  std::deque<std::string> outq;
  std::thread thread;

  mutable std::mutex mutex;
  std::condition_variable cv;
  std::deque<Received> inbox;
  std::unordered_map<std::string, Envelope> replies;
  bool open = false;
  std::uint64_t counter = 0;

  Impl(std::string h, unsigned short p) : host(std::move(h)), port(p) {}

  void do_read() {
    ws.async_read(buffer, [self = shared_from_this()](beast::error_code ec, std::size_t) {
      const auto now = std::chrono::steady_clock::now();
      if (ec) {
        std::lock_guard lock(self->mutex);
        self->open = false;
        self->cv.notify_all();
        return;
      }
      const std::string frame = beast::buffers_to_string(self->buffer.data());
      self->buffer.consume(self->buffer.size());
      try {
        Envelope env = Envelope::parse(frame);
        const bool is_reply = env.event == "ack" || env.event == "error" || env.event == "recommend-response";
        std::lock_guard lock(self->mutex);
        if (is_reply && !env.request_id.empty()) {
          self->replies[env.request_id] = std::move(env);
        } else {
          self->inbox.push_back({std::move(env), now});
        }
        self->cv.notify_all();
      } catch (const Error&) {
        // the server only sends well-formed frames; drop anything else
      }
      self->do_read();
    });
  }

  void do_write() {
    ws.text(true);
    ws.async_write(net::buffer(outq.front()), [self = shared_from_this()](beast::error_code ec, std::size_t) {
      if (ec) {
        self->outq.clear();
        return;
      }
      self->outq.pop_front();
      if (!self->outq.empty()) self->do_write();
    });
  }
};

GatewayClient::GatewayClient(std::string host, unsigned short port)
    : impl_(std::make_shared<Impl>(std::move(host), port)) {}

GatewayClient::~GatewayClient() { close(); }

void GatewayClient::connect() {
  auto& im = *impl_;
  try {
    tcp::resolver resolver(im.ioc);
    const auto results = resolver.resolve(im.host, std::to_string(im.port));
    beast::get_lowest_layer(im.ws).connect(results);
    beast::get_lowest_layer(im.ws).socket().set_option(tcp::no_delay(true));
    im.ws.handshake(im.host + ":" + std::to_string(im.port), "/ws");
  } catch (const boost::system::system_error& e) {
    throw Error(ErrorCode::network, "cannot connect to " + im.host + ":" + std::to_string(im.port) + ": " + e.what());
  }
  {
    std::lock_guard lock(im.mutex);
    im.open = true;
  }
  net::post(im.ws.get_executor(), [self = impl_] { self->do_read(); });
  im.thread = std::thread([self = impl_] { self->ioc.run(); });
}

void GatewayClient::close() {
  auto& im = *impl_;
  if (!im.thread.joinable()) return;
  net::post(im.ws.get_executor(), [self = impl_] {
    self->ws.async_close(websocket::close_code::normal, [self](beast::error_code) {});
  });
  {
    std::unique_lock lock(im.mutex);
    im.cv.wait_for(lock, std::chrono::seconds(2), [&] { return !im.open; });
  }
  im.ioc.stop();
  im.thread.join();
}

bool GatewayClient::connected() const {
  std::lock_guard lock(impl_->mutex);
  return impl_->open;
}

void GatewayClient::send_text(std::string frame) {
  net::post(impl_->ws.get_executor(), [self = impl_, f = std::move(frame)]() mutable {
    self->outq.push_back(std::move(f));
    if (self->outq.size() == 1) self->do_write();
  });
}

SteadyTime GatewayClient::send(const std::string& event, const std::string& request_id, json payload) {
  const auto at = std::chrono::steady_clock::now();
  send_text(Envelope{event, request_id, std::move(payload), 0}.dump());
  return at;
}

Envelope GatewayClient::reply_for(const std::string& request_id, std::chrono::milliseconds timeout) {
  auto& im = *impl_;
  std::unique_lock lock(im.mutex);
  const bool got = im.cv.wait_for(lock, timeout, [&] { return im.replies.contains(request_id) || !im.open; });
  auto it = im.replies.find(request_id);
  if (it == im.replies.end()) {
    throw Error(ErrorCode::network, got ? "connection closed before reply to " + request_id
                                        : "timed out waiting for reply to " + request_id,
                request_id);
  }
  Envelope env = std::move(it->second);
  im.replies.erase(it);
  return env;
}

Envelope GatewayClient::request_with_id(const std::string& event, const std::string& request_id, json payload,
                                        std::chrono::milliseconds timeout) {
  send(event, request_id, std::move(payload));
  return reply_for(request_id, timeout);
}

Envelope GatewayClient::request(const std::string& event, json payload, std::chrono::milliseconds timeout) {
  std::string rid;
  {
    std::lock_guard lock(impl_->mutex);
    rid = "c" + std::to_string(++impl_->counter);
  }
  return request_with_id(event, rid, std::move(payload), timeout);
}

std::optional<Received> GatewayClient::wait_for(const std::function<bool(const Envelope&)>& pred,
                                                std::chrono::milliseconds timeout) {
  auto& im = *impl_;
  std::unique_lock lock(im.mutex);
  std::optional<Received> found;
  im.cv.wait_for(lock, timeout, [&] {
    for (auto it = im.inbox.begin(); it != im.inbox.end(); ++it) {
      if (pred(it->envelope)) {
        found = std::move(*it);
        im.inbox.erase(it);
        return true;
      }
    }
    return !im.open;
  });
  return found;
}

std::vector<Received> GatewayClient::drain() {
  std::lock_guard lock(impl_->mutex);
  std::vector<Received> out(std::make_move_iterator(impl_->inbox.begin()), std::make_move_iterator(impl_->inbox.end()));
  impl_->inbox.clear();
  return out;
}

// ---------------------------------------------------------------------------

HttpResponse http_call(const std::string& host, unsigned short port, const std::string& method,
                       const std::string& target, const json& body, const std::string& token) {
  httplib::Client client(host, port);
  client.set_connection_timeout(5);
  client.set_read_timeout(30);
  httplib::Headers headers;
  if (!token.empty()) headers.emplace("Authorization", "Bearer " + token);
  const std::string payload = body.is_null() ? std::string() : body.dump();
  httplib::Result res;
  if (method == "GET") {
    res = client.Get(target, headers);
  } else if (method == "POST") {
    res = client.Post(target, headers, payload, "application/json");
  } else if (method == "DELETE") {
    res = client.Delete(target, headers);
  } else {
    throw Error(ErrorCode::invalid_argument, "unsupported method " + method, method);
  }
  if (!res) {
    throw Error(ErrorCode::network, method + " " + target + " failed: " + httplib::to_string(res.error()), target);
  }
  HttpResponse out;
  out.status = res->status;
  try {
    out.body = res->body.empty() ? json::object() : json::parse(res->body);
  } catch (const json::parse_error&) {
    out.body = json{{"raw", res->body}};
  }
  return out;
}

}  // namespace puppetchat
