#include "puppetchat/protocol.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <map>
#include <vector>

#include "puppetchat/error.hpp"

namespace puppetchat {

using nlohmann::json;

bool is_event_name(std::string_view name) {
  return std::find(kEventNames.begin(), kEventNames.end(), name) != kEventNames.end();
}

std::string Envelope::dump() const {
  return json{{"event", event}, {"request_id", request_id}, {"payload", payload}, {"server_ts", server_ts}}
      .dump(-1, ' ', false, json::error_handler_t::replace);
}

Envelope Envelope::parse(std::string_view frame) {
  json j;
  try {
    j = json::parse(frame);
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::schema, std::string("frame is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw Error(ErrorCode::schema, "frame must be a JSON object");
  Envelope env;
  if (auto it = j.find("request_id"); it != j.end()) {
    if (!it->is_string()) throw Error(ErrorCode::schema, "request_id must be a string");
    env.request_id = it->get<std::string>();
  }
  auto ev = j.find("event");
  if (ev == j.end() || !ev->is_string()) throw Error(ErrorCode::schema, "frame has no event name");
  env.event = ev->get<std::string>();
  if (!is_event_name(env.event)) throw Error(ErrorCode::schema, "unknown event '" + env.event + "'", env.event);
  if (auto it = j.find("payload"); it != j.end() && !it->is_null()) {
    if (!it->is_object()) throw Error(ErrorCode::schema, "payload must be an object");
    env.payload = *it;
  }
  env.server_ts = j.value("server_ts", TimestampMs{0});
  return env;
}

json error_payload(ErrorCode code, std::string_view message, std::string_view subject) {
  json j{{"code", to_string(code)}, {"message", message}};
  if (!subject.empty()) j["subject"] = subject;
  return j;
}

namespace {

enum class Kind { string, boolean, integer, object, array, text_or_object };

struct Field {
  std::string_view name;
  Kind kind;
  bool required;
};

using Schema = std::vector<Field>;

const std::map<std::string_view, Schema>& schemas() {
  static const std::map<std::string_view, Schema> table{
      {"auth", {{"token", Kind::string, true}, {"resume", Kind::object, false}}},
      {"chat-message", {{"conversation_id", Kind::string, true}, {"text", Kind::string, true}}},
      {"puppet-action",
       {{"conversation_id", Kind::string, true},
        {"action", Kind::string, true},
        {"persist", Kind::boolean, true},
        {"micronarrative", Kind::text_or_object, false},
        {"paired_with", Kind::integer, false},
        {"recommendation_id", Kind::string, false}}},
      {"emn-update", {{"story", Kind::string, false}, {"tags", Kind::object, false}}},
      {"recommend-request",
       {{"conversation_id", Kind::string, false},
        {"draft_text", Kind::string, false},
        {"seed", Kind::integer, false},
        {"report", Kind::object, false}}},
  };
  return table;
}

bool has_kind(const json& v, Kind k) {
  switch (k) {
    case Kind::string: return v.is_string();
    case Kind::boolean: return v.is_boolean();
    case Kind::integer: return v.is_number_integer();
    case Kind::object: return v.is_object();
    case Kind::array: return v.is_array();
    case Kind::text_or_object: return v.is_string() || v.is_object();
  }
  return false;
}

std::string_view kind_name(Kind k) {
  switch (k) {
    case Kind::string: return "a string";
    case Kind::boolean: return "a boolean";
    case Kind::integer: return "an integer";
    case Kind::object: return "an object";
    case Kind::array: return "an array";
    case Kind::text_or_object: return "a string or an object";
  }
  return "";
}

void check_string_list(const json& v, std::string_view what) {
  if (!v.is_array()) throw Error(ErrorCode::schema, std::string(what) + " must be an array of strings");
  for (const auto& e : v) {
    if (!e.is_string()) throw Error(ErrorCode::schema, std::string(what) + " must be an array of strings");
  }
}

}  // namespace

void validate_payload(std::string_view event, const json& payload) {
  auto it = schemas().find(event);
  if (it == schemas().end()) {
    throw Error(ErrorCode::schema, "clients may not send '" + std::string(event) + "'", std::string(event));
  }
  const Schema& schema = it->second;
  for (const auto& [key, value] : payload.items()) {
    auto f = std::find_if(schema.begin(), schema.end(), [&](const Field& x) { return x.name == key; });
    if (f == schema.end()) throw Error(ErrorCode::schema, "unexpected field '" + key + "'", key);
    if (!has_kind(value, f->kind)) {
      throw Error(ErrorCode::schema, "'" + key + "' must be " + std::string(kind_name(f->kind)), key);
    }
  }
  for (const auto& f : schema) {
    if (f.required && !payload.contains(f.name)) {
      throw Error(ErrorCode::schema, "missing field '" + std::string(f.name) + "'", std::string(f.name));
    }
  }

  if (event == "emn-update") {
    if (payload.contains("story") == payload.contains("tags")) {
      throw Error(ErrorCode::schema, "emn-update carries exactly one of story or tags");
    }
    if (payload.contains("tags")) {
      for (const auto& [key, value] : payload["tags"].items()) {
        if (key != "selected" && key != "custom") throw Error(ErrorCode::schema, "unexpected tags field '" + key + "'", key);
        check_string_list(value, "tags." + key);
      }
    }
  } else if (event == "recommend-request" && payload.contains("report")) {
    const auto& r = payload["report"];
    if (!r.contains("recommendation_id") || !r["recommendation_id"].is_string()) {
      throw Error(ErrorCode::schema, "report needs a recommendation_id");
    }
    for (const auto& [key, value] : r.items()) {
      if (key != "recommendation_id" && key != "chosen" && key != "hidden") {
        throw Error(ErrorCode::schema, "unexpected report field '" + key + "'", key);
      }
      if (!value.is_string()) throw Error(ErrorCode::schema, "report." + key + " must be a string", key);
    }
  } else if (event == "auth" && payload.contains("resume")) {
    for (const auto& [key, value] : payload["resume"].items()) {
      if (!value.is_number_unsigned() && !(value.is_number_integer() && value.get<std::int64_t>() >= 0)) {
        throw Error(ErrorCode::schema, "resume values must be record ids", key);
      }
    }
  } else if (event == "puppet-action" && payload.contains("micronarrative") && payload["micronarrative"].is_object()) {
    const auto& m = payload["micronarrative"];
    if (!m.contains("text") || !m["text"].is_string()) throw Error(ErrorCode::schema, "micronarrative needs text");
    if (m.contains("tags_used")) check_string_list(m["tags_used"], "micronarrative.tags_used");
  }
}

// ---------------------------------------------------------------------------
// configuration

GatewayConfig GatewayConfig::from_json(const json& j) {
  GatewayConfig c;
  if (!j.is_object()) throw Error(ErrorCode::configuration, "config must be a JSON object");
  try {
    if (j.contains("listen")) {
      const auto listen = j["listen"].get<std::string>();
      const auto colon = listen.rfind(':');
      if (colon == std::string::npos) throw Error(ErrorCode::configuration, "listen must be host:port", listen);
      c.address = listen.substr(0, colon);
      c.port = static_cast<unsigned short>(std::stoi(listen.substr(colon + 1)));
    }
    c.threads = j.value("threads", c.threads);
    auto& s = c.service;
    if (j.contains("data_dir")) s.data_dir = j["data_dir"].get<std::string>();
    if (j.contains("library")) s.library_path = j["library"].get<std::string>();
    if (j.contains("prompts")) s.prompts_dir = j["prompts"].get<std::string>();
    if (j.contains("ephemeral_ttl_ms")) s.ephemeral_ttl = std::chrono::milliseconds(j["ephemeral_ttl_ms"].get<std::int64_t>());
    s.fsync = j.value("fsync", s.fsync);
    if (j.contains("weights")) {
      const auto& w = j["weights"];
      s.weights.w_text = w.value("w_text", s.weights.w_text);
      s.weights.w_ctx = w.value("w_ctx", s.weights.w_ctx);
      s.weights.w_pref = w.value("w_pref", s.weights.w_pref);
      s.weights.noise_amplitude = w.value("noise_amplitude", s.weights.noise_amplitude);
    }
    if (j.contains("provider")) {
      const auto& p = j["provider"];
      const auto kind = p.value("kind", std::string("offline"));
      if (kind == "offline") {
        s.provider.provider_kind = ProviderKind::offline;
      } else if (kind == "remote") {
        s.provider.provider_kind = ProviderKind::remote;
      } else {
        throw Error(ErrorCode::configuration, "unknown provider kind '" + kind + "'", kind);
      }
      s.provider.endpoint = p.value("endpoint", std::string{});
      if (p.contains("cache_path")) s.provider.cache_path = p["cache_path"].get<std::string>();
      if (p.contains("credentials")) {
        throw Error(ErrorCode::configuration, "credentials belong in PUPPETCHAT_PROVIDER_TOKEN, not the config file");
      }
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::configuration, std::string("bad config value: ") + e.what());
  } catch (const std::logic_error& e) {
    throw Error(ErrorCode::configuration, std::string("bad config value: ") + e.what());
  }
  return c;
}

GatewayConfig GatewayConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::configuration, "cannot read config " + path.string(), path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::configuration, path.string() + ": " + e.what(), path.string());
  }
  return from_json(j);
}

void GatewayConfig::apply_env() {
  auto env = [](const char* name) -> std::optional<std::string> {
    const char* v = std::getenv(name);
    if (v == nullptr || *v == '\0') return std::nullopt;
    return std::string(v);
  };
  auto number = [](const std::string& name, const std::string& v) {
    try {
      std::size_t used = 0;
      const double d = std::stod(v, &used);
      if (used != v.size()) throw std::invalid_argument(v);
      return d;
    } catch (const std::logic_error&) {
      throw Error(ErrorCode::configuration, name + " must be a number", v);
    }
  };
  if (auto v = env("PUPPETCHAT_LISTEN")) {
    const auto parsed = from_json(json{{"listen", *v}});
    address = parsed.address;
    port = parsed.port;
  }
  if (auto v = env("PUPPETCHAT_DATA_DIR")) service.data_dir = *v;
  if (auto v = env("PUPPETCHAT_LIBRARY")) service.library_path = *v;
  if (auto v = env("PUPPETCHAT_EPHEMERAL_TTL_MS")) {
    service.ephemeral_ttl = std::chrono::milliseconds(static_cast<std::int64_t>(number("PUPPETCHAT_EPHEMERAL_TTL_MS", *v)));
  }
  if (auto v = env("PUPPETCHAT_W_TEXT")) service.weights.w_text = number("PUPPETCHAT_W_TEXT", *v);
  if (auto v = env("PUPPETCHAT_W_CTX")) service.weights.w_ctx = number("PUPPETCHAT_W_CTX", *v);
  if (auto v = env("PUPPETCHAT_W_PREF")) service.weights.w_pref = number("PUPPETCHAT_W_PREF", *v);
  if (auto v = env("PUPPETCHAT_NOISE")) service.weights.noise_amplitude = number("PUPPETCHAT_NOISE", *v);
  service.provider = ProviderConfig::from_env(service.provider);
}

void GatewayConfig::validate() const {
  if (service.ephemeral_ttl.count() <= 0) throw Error(ErrorCode::configuration, "ephemeral TTL must be positive");
  if (threads < 0) throw Error(ErrorCode::configuration, "threads must not be negative");
  service.weights.validate();
  service.provider.validate();
}

}  // namespace puppetchat
