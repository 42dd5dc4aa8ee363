#pragma once

#include <array>
#include <chrono>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

#include "puppetchat/conversation_store.hpp"
#include "puppetchat/error.hpp"
#include "puppetchat/recommendation.hpp"
#include "puppetchat/text_interpreter.hpp"

namespace puppetchat {

inline constexpr std::array<std::string_view, 9> kEventNames{
    "auth",          "chat-message",       "puppet-action",   "emn-update", "recommend-request",
    "recommend-response", "exchange-status", "error",         "ack"};

bool is_event_name(std::string_view name);

/// Every frame on the socket: {event, request_id, payload, server_ts}.
struct Envelope {
  std::string event;
  std::string request_id;
  nlohmann::json payload = nlohmann::json::object();
  TimestampMs server_ts = 0;

  std::string dump() const;
  /// Throws Error(schema) on anything but a well-formed envelope object.
  static Envelope parse(std::string_view frame);
};

nlohmann::json error_payload(ErrorCode code, std::string_view message, std::string_view subject = {});

/// Checks an inbound payload against the schema of its event. Unknown
/// fields and wrong types are rejected with ErrorCode::schema.
void validate_payload(std::string_view event, const nlohmann::json& payload);

struct ServiceConfig {
  std::filesystem::path data_dir;      // empty = memory only
  std::filesystem::path library_path;  // empty = canonical library
  std::filesystem::path prompts_dir;   // empty = built-in prompts
  std::chrono::milliseconds ephemeral_ttl{60000};
  Weights weights;
  ProviderConfig provider;
  bool fsync = true;
  Clock clock;  // empty = wall clock
};

struct GatewayConfig {
  std::string address = "127.0.0.1";
  unsigned short port = 8080;
  int threads = 0;  // 0 = hardware concurrency
  ServiceConfig service;

  /// Reads a JSON config file; missing keys keep their defaults.
  static GatewayConfig load(const std::filesystem::path& path);
  static GatewayConfig from_json(const nlohmann::json& j);
  /// PUPPETCHAT_LISTEN (host:port), PUPPETCHAT_DATA_DIR, PUPPETCHAT_LIBRARY,
  /// PUPPETCHAT_EPHEMERAL_TTL_MS, PUPPETCHAT_W_TEXT, PUPPETCHAT_W_CTX,
  /// PUPPETCHAT_W_PREF, PUPPETCHAT_NOISE and the provider variables.
  void apply_env();
  void validate() const;
};

}  // namespace puppetchat
