#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace puppetchat {

using RecordId = std::uint64_t;
using TimestampMs = std::int64_t;  // milliseconds since the Unix epoch

enum class GeneratedBy { provider, offline_template, user_edit };

std::string_view to_string(GeneratedBy g);
std::optional<GeneratedBy> parse_generated_by(std::string_view s);

/// A short caption that travels with an action, plus where it came from.
struct Micronarrative {
  std::string text;
  std::string action_id;
  std::int64_t story_version = 0;
  std::vector<std::string> tags_used;
  GeneratedBy generated_by = GeneratedBy::offline_template;
  bool edited = false;

  bool operator==(const Micronarrative&) const = default;
};

nlohmann::json micronarrative_to_json(const Micronarrative& m);
Micronarrative micronarrative_from_json(const nlohmann::json& j);

enum class ExchangeKind { text, action_with_narrative, action_only_status, dyadic_exchange };

std::string_view to_string(ExchangeKind k);
std::optional<ExchangeKind> parse_exchange_kind(std::string_view s);

/// One unit of a conversation thread.
struct ExchangeRecord {
  RecordId record_id = 0;
  std::string conversation_id;
  std::string sender_id;
  ExchangeKind kind = ExchangeKind::text;
  std::optional<std::string> text;  // body of a text message
  std::optional<std::string> action_id;
  std::optional<Micronarrative> micronarrative;
  std::optional<RecordId> paired_with;
  TimestampMs timestamp = 0;

  bool is_action() const { return action_id.has_value(); }
  bool operator==(const ExchangeRecord&) const = default;
};

nlohmann::json record_to_json(const ExchangeRecord& r);
ExchangeRecord record_from_json(const nlohmann::json& j);

/// Number of Unicode code points in a UTF-8 string.
std::size_t utf8_length(std::string_view s);

}  // namespace puppetchat
