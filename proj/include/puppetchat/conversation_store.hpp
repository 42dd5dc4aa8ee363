#pragma once

#include <array>
#include <chrono>
#include <cstdio>
#include <deque>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "puppetchat/exchange.hpp"

namespace puppetchat {

struct User {
  std::string user_id;
  std::string display_name;
  std::int64_t current_story_version = 0;
};

/// friend, family, partner, or custom:<token>
struct RelationshipIcon {
  std::string value = "friend";

  static RelationshipIcon parse(std::string_view s);
  bool operator==(const RelationshipIcon&) const = default;
};

struct Contact {
  std::string owner_id;
  std::string peer_id;
  RelationshipIcon relationship_icon;
};

struct Conversation {
  std::string conversation_id;
  std::array<std::string, 2> members;

  bool has_member(std::string_view user_id) const {
    return members[0] == user_id || members[1] == user_id;
  }
  const std::string& partner_of(std::string_view user_id) const {
    return members[0] == user_id ? members[1] : members[0];
  }
};

nlohmann::json user_to_json(const User& u);
nlohmann::json contact_to_json(const Contact& c);

struct Page {
  std::size_t index = 0;
  std::size_t size = 50;
};

/// What a client needs to re-render an action.
struct ReplayInfo {
  RecordId record_id = 0;
  std::string action_id;
  std::optional<Micronarrative> micronarrative;
  TimestampMs timestamp = 0;
  ExchangeKind kind = ExchangeKind::action_with_narrative;
  std::optional<RecordId> paired_with;

  bool operator==(const ReplayInfo&) const = default;
};

nlohmann::json replay_to_json(const ReplayInfo& r);

using Clock = std::function<TimestampMs()>;
TimestampMs system_now_ms();

bool is_valid_user_id(std::string_view id);
std::string conversation_id_for(std::string_view a, std::string_view b);

/// Users, contacts and dyadic threads.
///
/// Durable records are appended to one JSON-lines log per conversation and
/// flushed (and fsync'ed) before `append` returns. Action-only statuses live
/// in a per-conversation transient buffer until their TTL passes and never
/// reach the log. Appends to one conversation are serialized.
class ConversationStore {
 public:
  struct Options {
    std::filesystem::path data_dir;  // empty = memory only
    std::chrono::milliseconds ephemeral_ttl{60000};
    Clock clock;
    bool fsync = true;
  };

  explicit ConversationStore(Options options);
  ConversationStore();
  ~ConversationStore();

  ConversationStore(const ConversationStore&) = delete;
  ConversationStore& operator=(const ConversationStore&) = delete;

  User upsert_user(const std::string& user_id, const std::string& display_name);
  std::optional<User> find_user(const std::string& user_id) const;
  void set_story_version(const std::string& user_id, std::int64_t version);

  /// Adds or updates a contact and opens the dyad's conversation.
  std::pair<Contact, Conversation> add_contact(const std::string& owner_id, const std::string& peer_id,
                                               RelationshipIcon icon);
  std::vector<Contact> contacts_of(const std::string& owner_id) const;

  Conversation open_conversation(const std::string& a, const std::string& b);
  std::optional<Conversation> conversation(const std::string& conversation_id) const;
  std::vector<Conversation> conversations_of(const std::string& user_id) const;

  /// Validates, assigns id and timestamp, stores. `on_commit` runs while the
  /// conversation is still locked, so observers see records in append order.
  ExchangeRecord append(ExchangeRecord draft,
                        const std::function<void(const ExchangeRecord&)>& on_commit = {});

  ReplayInfo replay(RecordId record_id, const std::string& requester) const;
  std::vector<ExchangeRecord> history(const std::string& conversation_id, const std::string& requester,
                                      Page page) const;
  /// Durable records after `last_seen` (0 = from the start), thread order.
  std::vector<ExchangeRecord> history_after(const std::string& conversation_id,
                                            const std::string& requester, RecordId last_seen) const;
  /// Last `count` records including live transient statuses, thread order.
  std::vector<ExchangeRecord> recent(const std::string& conversation_id, std::size_t count) const;
  std::vector<ExchangeRecord> export_thread(const std::string& conversation_id) const;

  std::chrono::milliseconds ephemeral_ttl() const { return options_.ephemeral_ttl; }
  TimestampMs now() const { return options_.clock(); }

 private:
  struct Thread;

  Thread& thread(const std::string& conversation_id) const;
  Thread& ensure_thread(const Conversation& c);
  void purge_expired(Thread& t) const;
  void write_line(std::FILE* f, const std::string& line) const;
  void append_meta(const std::filesystem::path& file, const nlohmann::json& entry);
  void load();

  Options options_;
  mutable std::shared_mutex mutex_;  // users, contacts, threads map, record index
  std::map<std::string, User> users_;
  std::map<std::pair<std::string, std::string>, Contact> contacts_;
  std::map<std::string, std::unique_ptr<Thread>> threads_;
  std::unordered_map<RecordId, std::string> record_index_;  // durable id -> conversation
  std::unordered_set<RecordId> ephemeral_ids_;
  RecordId next_id_ = 1;
  RecordId reserved_id_ = 0;
};

}  // namespace puppetchat
