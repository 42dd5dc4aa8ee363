#pragma once

#include <chrono>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "puppetchat/protocol.hpp"
#include "puppetchat/service.hpp"

namespace puppetchat {

/// HTTP routes and the WebSocket upgrade at /ws on one listening port.
class Server {
 public:
  Server(Service& service, std::string address, unsigned short port, int threads = 0);
  ~Server();

  Server(const Server&) = delete;
  Server& operator=(const Server&) = delete;

  /// Binds and starts the worker threads; port 0 picks a free port.
  void start();
  unsigned short port() const;
  void stop();
  /// Blocks until stop() is called from elsewhere.
  void wait();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

using SteadyTime = std::chrono::steady_clock::time_point;

struct Received {
  Envelope envelope;
  SteadyTime at;
};

/// A WebSocket client speaking the gateway protocol. Replies (ack, error,
/// recommend-response) are matched to requests by request_id; everything
/// else lands in an inbox in arrival order.
class GatewayClient {
 public:
  GatewayClient(std::string host, unsigned short port);
  ~GatewayClient();

  GatewayClient(const GatewayClient&) = delete;
  GatewayClient& operator=(const GatewayClient&) = delete;

  void connect();
  void close();

  /// Sends and waits for the matching reply. Throws Error(network) on timeout.
  Envelope request(const std::string& event, nlohmann::json payload,
                   std::chrono::milliseconds timeout = std::chrono::seconds(10));
  Envelope request_with_id(const std::string& event, const std::string& request_id, nlohmann::json payload,
                           std::chrono::milliseconds timeout = std::chrono::seconds(10));
  /// Fire and forget; the reply is kept and can be awaited with `reply_for`.
  SteadyTime send(const std::string& event, const std::string& request_id, nlohmann::json payload);
  void send_text(std::string frame);
  Envelope reply_for(const std::string& request_id, std::chrono::milliseconds timeout);

  /// Waits until an inbox event satisfies `pred`, removing and returning it.
  std::optional<Received> wait_for(const std::function<bool(const Envelope&)>& pred,
                                   std::chrono::milliseconds timeout);
  std::vector<Received> drain();
  bool connected() const;

 private:
  struct Impl;
  std::shared_ptr<Impl> impl_;
};

/// One blocking JSON request to the gateway's HTTP side.
HttpResponse http_call(const std::string& host, unsigned short port, const std::string& method,
                       const std::string& target, const nlohmann::json& body = nullptr,
                       const std::string& token = {});

}  // namespace puppetchat
