#include "puppetchat/conversation_store.hpp"

#include <algorithm>
#include <atomic>
#include <fstream>
#include <regex>

#include <unistd.h>

#include "puppetchat/error.hpp"
#include "puppetchat/text_interpreter.hpp"

namespace puppetchat {

using nlohmann::json;

struct ConversationStore::Thread {
  Conversation meta;
  mutable std::shared_mutex mutex;
  std::vector<ExchangeRecord> durable;        // ascending record ids
  std::deque<ExchangeRecord> transient;       // action-only statuses, ascending ids
  std::vector<ExchangeRecord> order;          // every record in thread order, for context
  TimestampMs last_ts = 0;
  std::FILE* log = nullptr;

  ~Thread() {
    if (log != nullptr) std::fclose(log);
  }

  const ExchangeRecord* find_durable(RecordId id) const {
    auto it = std::lower_bound(durable.begin(), durable.end(), id,
                               [](const ExchangeRecord& r, RecordId v) { return r.record_id < v; });
    return (it != durable.end() && it->record_id == id) ? &*it : nullptr;
  }
};

namespace {

const std::filesystem::path kUsersFile = "users.jsonl";
// Record ids are reserved in blocks so ephemeral ids are never reissued after a restart.
const std::filesystem::path kIdsFile = "ids.jsonl";
constexpr RecordId kIdBlock = 4096;
const std::filesystem::path kContactsFile = "contacts.jsonl";
const std::filesystem::path kConversationsFile = "conversations.jsonl";
const std::filesystem::path kThreadsDir = "conversations";

template <typename F>
void for_each_line(const std::filesystem::path& file, F&& fn) {
  std::ifstream in(file);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error&) {
      break;  // torn tail from an interrupted append
    }
    fn(j);
  }
}

}  // namespace

RelationshipIcon RelationshipIcon::parse(std::string_view s) {
  if (s == "friend" || s == "family" || s == "partner") return {std::string(s)};
  if (s.starts_with("custom:") && s.size() > 7) {
    static const std::regex token("^[a-z0-9_-]{1,32}$");
    if (std::regex_match(std::string(s.substr(7)), token)) return {std::string(s)};
  }
  throw Error(ErrorCode::invalid_argument,
              "relationship icon must be friend, family, partner or custom:<token>", std::string(s));
}

json user_to_json(const User& u) {
  return json{{"user_id", u.user_id}, {"display_name", u.display_name},
              {"current_story_version", u.current_story_version}};
}

json contact_to_json(const Contact& c) {
  return json{{"owner_id", c.owner_id}, {"peer_id", c.peer_id}, {"relationship_icon", c.relationship_icon.value}};
}

json replay_to_json(const ReplayInfo& r) {
  json j{{"record_id", r.record_id}, {"action_id", r.action_id}, {"timestamp", r.timestamp},
         {"kind", to_string(r.kind)}};
  if (r.micronarrative) j["micronarrative"] = micronarrative_to_json(*r.micronarrative);
  if (r.paired_with) j["paired_with"] = *r.paired_with;
  return j;
}

TimestampMs system_now_ms() {
  return std::chrono::duration_cast<std::chrono::milliseconds>(
             std::chrono::system_clock::now().time_since_epoch())
      .count();
}

bool is_valid_user_id(std::string_view id) {
  static const std::regex pattern("^[A-Za-z0-9_-]{1,64}$");
  return std::regex_match(std::string(id), pattern);
}

std::string conversation_id_for(std::string_view a, std::string_view b) {
  return a < b ? "dm:" + std::string(a) + ":" + std::string(b) : "dm:" + std::string(b) + ":" + std::string(a);
}

ConversationStore::ConversationStore() : ConversationStore(Options{}) {}

ConversationStore::ConversationStore(Options options) : options_(std::move(options)) {
  if (!options_.clock) options_.clock = system_now_ms;
  if (!options_.data_dir.empty()) {
    std::filesystem::create_directories(options_.data_dir / kThreadsDir);
    load();
  }
}

ConversationStore::~ConversationStore() = default;

void ConversationStore::write_line(std::FILE* f, const std::string& line) const {
  if (std::fwrite(line.data(), 1, line.size(), f) != line.size() || std::fputc('\n', f) == EOF ||
      std::fflush(f) != 0) {
    throw Error(ErrorCode::storage, "failed to append to the durable log");
  }
  if (options_.fsync && ::fsync(::fileno(f)) != 0) {
    throw Error(ErrorCode::storage, "failed to sync the durable log");
  }
}

void ConversationStore::append_meta(const std::filesystem::path& file, const json& entry) {
  if (options_.data_dir.empty()) return;
  std::FILE* f = std::fopen((options_.data_dir / file).c_str(), "a");
  if (f == nullptr) throw Error(ErrorCode::storage, "cannot open " + (options_.data_dir / file).string());
  try {
    write_line(f, entry.dump());
  } catch (...) {
    std::fclose(f);
    throw;
  }
  std::fclose(f);
}

void ConversationStore::load() {
  const auto& dir = options_.data_dir;
  for_each_line(dir / kIdsFile, [&](const json& j) {
    reserved_id_ = std::max(reserved_id_, j.at("reserved").get<RecordId>());
  });
  next_id_ = std::max(next_id_, reserved_id_);
  for_each_line(dir / kUsersFile, [&](const json& j) {
    User u{j.at("user_id").get<std::string>(), j.value("display_name", std::string{}),
           j.value("current_story_version", std::int64_t{0})};
    users_[u.user_id] = u;
  });
  for_each_line(dir / kContactsFile, [&](const json& j) {
    Contact c{j.at("owner_id").get<std::string>(), j.at("peer_id").get<std::string>(),
              RelationshipIcon::parse(j.at("relationship_icon").get<std::string>())};
    contacts_[{c.owner_id, c.peer_id}] = c;
  });
  for_each_line(dir / kConversationsFile, [&](const json& j) {
    Conversation c{j.at("conversation_id").get<std::string>(),
                   {j.at("members")[0].get<std::string>(), j.at("members")[1].get<std::string>()}};
    if (threads_.contains(c.conversation_id)) return;
    auto t = std::make_unique<Thread>();
    t->meta = c;
    const auto file = dir / kThreadsDir / (content_hash(c.conversation_id) + ".jsonl");
    for_each_line(file, [&](const json& rj) {
      ExchangeRecord r = record_from_json(rj);
      next_id_ = std::max(next_id_, r.record_id + 1);
      t->last_ts = std::max(t->last_ts, r.timestamp);
      record_index_[r.record_id] = c.conversation_id;
      t->order.push_back(r);
      t->durable.push_back(std::move(r));
    });
    t->log = std::fopen(file.c_str(), "a");
    if (t->log == nullptr) throw Error(ErrorCode::storage, "cannot open " + file.string());
    threads_.emplace(c.conversation_id, std::move(t));
  });
}

// ---------------------------------------------------------------------------
// users and contacts

User ConversationStore::upsert_user(const std::string& user_id, const std::string& display_name) {
  if (!is_valid_user_id(user_id)) {
    throw Error(ErrorCode::invalid_argument, "user id must match [A-Za-z0-9_-]{1,64}", user_id);
  }
  std::unique_lock lock(mutex_);
  User& u = users_[user_id];
  const bool changed = u.user_id.empty() || (!display_name.empty() && u.display_name != display_name);
  u.user_id = user_id;
  if (!display_name.empty()) u.display_name = display_name;
  if (u.display_name.empty()) u.display_name = user_id;
  if (changed) append_meta(kUsersFile, user_to_json(u));
  return u;
}

std::optional<User> ConversationStore::find_user(const std::string& user_id) const {
  std::shared_lock lock(mutex_);
  if (auto it = users_.find(user_id); it != users_.end()) return it->second;
  return std::nullopt;
}

void ConversationStore::set_story_version(const std::string& user_id, std::int64_t version) {
  std::unique_lock lock(mutex_);
  auto it = users_.find(user_id);
  if (it == users_.end()) throw Error(ErrorCode::not_found, "unknown user '" + user_id + "'", user_id);
  if (version <= it->second.current_story_version) return;
  it->second.current_story_version = version;
  append_meta(kUsersFile, user_to_json(it->second));
}

std::pair<Contact, Conversation> ConversationStore::add_contact(const std::string& owner_id,
                                                                const std::string& peer_id,
                                                                RelationshipIcon icon) {
  if (owner_id == peer_id) {
    throw Error(ErrorCode::invalid_argument, "a user cannot add themselves as a contact", owner_id);
  }
  {
    std::unique_lock lock(mutex_);
    for (const auto& id : {owner_id, peer_id}) {
      if (!users_.contains(id)) throw Error(ErrorCode::not_found, "unknown user '" + id + "'", id);
    }
    Contact c{owner_id, peer_id, std::move(icon)};
    append_meta(kContactsFile, contact_to_json(c));
    contacts_[{owner_id, peer_id}] = c;
  }
  Conversation conv = open_conversation(owner_id, peer_id);
  std::shared_lock lock(mutex_);
  return {contacts_.at({owner_id, peer_id}), conv};
}

std::vector<Contact> ConversationStore::contacts_of(const std::string& owner_id) const {
  std::shared_lock lock(mutex_);
  std::vector<Contact> out;
  for (const auto& [key, c] : contacts_) {
    if (key.first == owner_id) out.push_back(c);
  }
  return out;
}

// ---------------------------------------------------------------------------
// conversations

ConversationStore::Thread& ConversationStore::ensure_thread(const Conversation& c) {
  std::unique_lock lock(mutex_);
  if (auto it = threads_.find(c.conversation_id); it != threads_.end()) return *it->second;
  auto t = std::make_unique<Thread>();
  t->meta = c;
  if (!options_.data_dir.empty()) {
    append_meta(kConversationsFile, json{{"conversation_id", c.conversation_id},
                                         {"members", {c.members[0], c.members[1]}}});
    const auto file = options_.data_dir / kThreadsDir / (content_hash(c.conversation_id) + ".jsonl");
    t->log = std::fopen(file.c_str(), "a");
    if (t->log == nullptr) throw Error(ErrorCode::storage, "cannot open " + file.string());
  }
  auto& ref = *t;
  threads_.emplace(c.conversation_id, std::move(t));
  return ref;
}

Conversation ConversationStore::open_conversation(const std::string& a, const std::string& b) {
  if (a == b) throw Error(ErrorCode::invalid_argument, "a conversation needs two distinct members", a);
  {
    std::shared_lock lock(mutex_);
    for (const auto& id : {a, b}) {
      if (!users_.contains(id)) throw Error(ErrorCode::not_found, "unknown user '" + id + "'", id);
    }
  }
  Conversation c{conversation_id_for(a, b), {std::min(a, b), std::max(a, b)}};
  return ensure_thread(c).meta;
}

std::optional<Conversation> ConversationStore::conversation(const std::string& conversation_id) const {
  std::shared_lock lock(mutex_);
  if (auto it = threads_.find(conversation_id); it != threads_.end()) return it->second->meta;
  return std::nullopt;
}

std::vector<Conversation> ConversationStore::conversations_of(const std::string& user_id) const {
  std::shared_lock lock(mutex_);
  std::vector<Conversation> out;
  for (const auto& [id, t] : threads_) {
    if (t->meta.has_member(user_id)) out.push_back(t->meta);
  }
  return out;
}

ConversationStore::Thread& ConversationStore::thread(const std::string& conversation_id) const {
  std::shared_lock lock(mutex_);
  auto it = threads_.find(conversation_id);
  if (it == threads_.end()) {
    throw Error(ErrorCode::not_found, "unknown conversation '" + conversation_id + "'", conversation_id);
  }
  return *it->second;
}

void ConversationStore::purge_expired(Thread& t) const {
  const TimestampMs cutoff = options_.clock() - options_.ephemeral_ttl.count();
  while (!t.transient.empty() && t.transient.front().timestamp <= cutoff) t.transient.pop_front();
}

// ---------------------------------------------------------------------------
// thread operations

ExchangeRecord ConversationStore::append(ExchangeRecord r,
                                         const std::function<void(const ExchangeRecord&)>& on_commit) {
  Thread& t = thread(r.conversation_id);
  if (!t.meta.has_member(r.sender_id)) {
    throw Error(ErrorCode::unauthorized,
                "'" + r.sender_id + "' is not a member of " + r.conversation_id, r.sender_id);
  }

  auto invalid = [&](const std::string& msg) { return Error(ErrorCode::invalid_argument, msg); };
  switch (r.kind) {
    case ExchangeKind::text:
      if (r.action_id || r.micronarrative || r.paired_with) throw invalid("a text record carries no action");
      if (!r.text || r.text->empty()) throw invalid("a text record needs a body");
      break;
    case ExchangeKind::action_with_narrative:
      if (!r.action_id || !r.micronarrative) throw invalid("a sent action needs an action and a micronarrative");
      if (r.paired_with) throw invalid("a paired action must be recorded as a dyadic exchange");
      break;
    case ExchangeKind::action_only_status:
      if (!r.action_id) throw invalid("an action-only status needs an action");
      if (r.micronarrative) throw invalid("an action-only status carries no micronarrative");
      break;
    case ExchangeKind::dyadic_exchange:
      if (!r.action_id) throw invalid("a dyadic exchange needs an action");
      if (!r.paired_with) throw invalid("a dyadic exchange must name the record it answers");
      break;
  }
  if (r.micronarrative) {
    if (r.micronarrative->text.empty()) throw invalid("micronarrative text must not be empty");
    if (r.micronarrative->action_id.empty()) r.micronarrative->action_id = *r.action_id;
    if (r.micronarrative->action_id != *r.action_id) throw invalid("micronarrative belongs to another action");
  }

  std::unique_lock lock(t.mutex);
  purge_expired(t);
  if (r.kind == ExchangeKind::dyadic_exchange) {
    const ExchangeRecord* target = t.find_durable(*r.paired_with);
    if (target == nullptr || !target->is_action()) {
      throw invalid("paired_with must name an earlier durable action record in this conversation");
    }
    if (target->sender_id == r.sender_id) throw invalid("a dyadic exchange must answer the other member");
  }

  const bool ephemeral = r.kind == ExchangeKind::action_only_status;
  r.timestamp = std::max(options_.clock(), t.last_ts);
  {
    std::unique_lock store_lock(mutex_);
    if (!options_.data_dir.empty() && next_id_ >= reserved_id_) {
      reserved_id_ = next_id_ + kIdBlock;
      append_meta(kIdsFile, json{{"reserved", reserved_id_}});
    }
    r.record_id = next_id_++;
    if (ephemeral) ephemeral_ids_.insert(r.record_id);
  }

  if (ephemeral) {
    t.transient.push_back(r);
  } else {
    if (t.log != nullptr) write_line(t.log, record_to_json(r).dump());
    t.durable.push_back(r);
    std::unique_lock store_lock(mutex_);
    record_index_[r.record_id] = r.conversation_id;
  }
  t.order.push_back(r);
  t.last_ts = r.timestamp;
  if (on_commit) on_commit(r);
  return r;
}

ReplayInfo ConversationStore::replay(RecordId record_id, const std::string& requester) const {
  std::string conversation_id;
  {
    std::shared_lock lock(mutex_);
    if (ephemeral_ids_.contains(record_id)) {
      throw Error(ErrorCode::ephemeral_record, "ephemeral record", std::to_string(record_id));
    }
    auto it = record_index_.find(record_id);
    if (it == record_index_.end()) {
      throw Error(ErrorCode::not_found, "unknown record " + std::to_string(record_id), std::to_string(record_id));
    }
    conversation_id = it->second;
  }
  const Thread& t = thread(conversation_id);
  if (!t.meta.has_member(requester)) {
    throw Error(ErrorCode::unauthorized, "requester is not a member of this conversation", requester);
  }
  std::shared_lock lock(t.mutex);
  const ExchangeRecord* r = t.find_durable(record_id);
  if (r == nullptr) throw Error(ErrorCode::not_found, "unknown record " + std::to_string(record_id));
  if (!r->action_id) {
    throw Error(ErrorCode::invalid_argument, "record " + std::to_string(record_id) + " is text-only",
                std::to_string(record_id));
  }
  return ReplayInfo{r->record_id, *r->action_id, r->micronarrative, r->timestamp, r->kind, r->paired_with};
}

std::vector<ExchangeRecord> ConversationStore::history(const std::string& conversation_id,
                                                       const std::string& requester, Page page) const {
  if (page.size == 0) throw Error(ErrorCode::invalid_argument, "page size must be positive");
  const Thread& t = thread(conversation_id);
  if (!t.meta.has_member(requester)) {
    throw Error(ErrorCode::unauthorized, "requester is not a member of this conversation", requester);
  }
  std::shared_lock lock(t.mutex);
  const std::size_t begin = std::min(t.durable.size(), page.index * page.size);
  const std::size_t end = std::min(t.durable.size(), begin + page.size);
  return {t.durable.begin() + static_cast<std::ptrdiff_t>(begin), t.durable.begin() + static_cast<std::ptrdiff_t>(end)};
}

std::vector<ExchangeRecord> ConversationStore::history_after(const std::string& conversation_id,
                                                             const std::string& requester,
                                                             RecordId last_seen) const {
  const Thread& t = thread(conversation_id);
  if (!t.meta.has_member(requester)) {
    throw Error(ErrorCode::unauthorized, "requester is not a member of this conversation", requester);
  }
  std::shared_lock lock(t.mutex);
  auto it = std::upper_bound(t.durable.begin(), t.durable.end(), last_seen,
                             [](RecordId v, const ExchangeRecord& r) { return v < r.record_id; });
  return {it, t.durable.end()};
}

std::vector<ExchangeRecord> ConversationStore::recent(const std::string& conversation_id,
                                                      std::size_t count) const {
  const Thread& t = thread(conversation_id);
  std::shared_lock lock(t.mutex);
  const TimestampMs cutoff = options_.clock() - options_.ephemeral_ttl.count();
  std::vector<ExchangeRecord> out;
  for (auto it = t.order.rbegin(); it != t.order.rend() && out.size() < count; ++it) {
    if (it->kind == ExchangeKind::action_only_status && it->timestamp <= cutoff) continue;
    out.push_back(*it);
  }
  std::reverse(out.begin(), out.end());
  return out;
}

std::vector<ExchangeRecord> ConversationStore::export_thread(const std::string& conversation_id) const {
  const Thread& t = thread(conversation_id);
  std::shared_lock lock(t.mutex);
  return t.durable;
}

}  // namespace puppetchat
