#include "puppetchat/exchange.hpp"

#include "puppetchat/error.hpp"

namespace puppetchat {

using nlohmann::json;

std::string_view to_string(GeneratedBy g) {
  switch (g) {
    case GeneratedBy::provider: return "provider";
    case GeneratedBy::offline_template: return "offline_template";
    case GeneratedBy::user_edit: return "user_edit";
  }
  return "offline_template";
}

std::optional<GeneratedBy> parse_generated_by(std::string_view s) {
  if (s == "provider") return GeneratedBy::provider;
  if (s == "offline_template") return GeneratedBy::offline_template;
  if (s == "user_edit") return GeneratedBy::user_edit;
  return std::nullopt;
}

std::string_view to_string(ExchangeKind k) {
  switch (k) {
    case ExchangeKind::text: return "text";
    case ExchangeKind::action_with_narrative: return "action_with_narrative";
    case ExchangeKind::action_only_status: return "action_only_status";
    case ExchangeKind::dyadic_exchange: return "dyadic_exchange";
  }
  return "text";
}

std::optional<ExchangeKind> parse_exchange_kind(std::string_view s) {
  if (s == "text") return ExchangeKind::text;
  if (s == "action_with_narrative") return ExchangeKind::action_with_narrative;
  if (s == "action_only_status") return ExchangeKind::action_only_status;
  if (s == "dyadic_exchange") return ExchangeKind::dyadic_exchange;
  return std::nullopt;
}

json micronarrative_to_json(const Micronarrative& m) {
  return json{{"text", m.text},
              {"action_id", m.action_id},
              {"story_version", m.story_version},
              {"tags_used", m.tags_used},
              {"generated_by", to_string(m.generated_by)},
              {"edited", m.edited}};
}

Micronarrative micronarrative_from_json(const json& j) {
  Micronarrative m;
  m.text = j.at("text").get<std::string>();
  m.action_id = j.value("action_id", std::string{});
  m.story_version = j.value("story_version", std::int64_t{0});
  m.tags_used = j.value("tags_used", std::vector<std::string>{});
  const auto g = parse_generated_by(j.value("generated_by", std::string("offline_template")));
  if (!g) throw Error(ErrorCode::schema, "unknown generated_by value");
  m.generated_by = *g;
  m.edited = j.value("edited", false);
  return m;
}

json record_to_json(const ExchangeRecord& r) {
  json j{{"record_id", r.record_id},
         {"conversation_id", r.conversation_id},
         {"sender_id", r.sender_id},
         {"kind", to_string(r.kind)},
         {"timestamp", r.timestamp}};
  if (r.text) j["text"] = *r.text;
  if (r.action_id) j["action_id"] = *r.action_id;
  if (r.micronarrative) j["micronarrative"] = micronarrative_to_json(*r.micronarrative);
  if (r.paired_with) j["paired_with"] = *r.paired_with;
  return j;
}

ExchangeRecord record_from_json(const json& j) {
  ExchangeRecord r;
  r.record_id = j.at("record_id").get<RecordId>();
  r.conversation_id = j.at("conversation_id").get<std::string>();
  r.sender_id = j.at("sender_id").get<std::string>();
  const auto kind = parse_exchange_kind(j.at("kind").get<std::string>());
  if (!kind) throw Error(ErrorCode::schema, "unknown record kind " + j.at("kind").dump());
  r.kind = *kind;
  r.timestamp = j.value("timestamp", TimestampMs{0});
  if (j.contains("text")) r.text = j["text"].get<std::string>();
  if (j.contains("action_id")) r.action_id = j["action_id"].get<std::string>();
  if (j.contains("micronarrative")) r.micronarrative = micronarrative_from_json(j["micronarrative"]);
  if (j.contains("paired_with")) r.paired_with = j["paired_with"].get<RecordId>();
  return r;
}

std::size_t utf8_length(std::string_view s) {
  std::size_t n = 0;
  for (unsigned char c : s) {
    if ((c & 0xC0U) != 0x80U) ++n;
  }
  return n;
}

}  // namespace puppetchat
