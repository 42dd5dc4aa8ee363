#include "puppetchat/service.hpp"

#include <algorithm>
#include <fstream>
#include <random>
#include <sstream>

#include "puppetchat/error.hpp"

namespace puppetchat {

using nlohmann::json;

namespace {

constexpr std::size_t kReplyCacheSize = 1024;
constexpr std::size_t kShownCacheSize = 256;
constexpr std::size_t kMaxChatLength = 4000;

std::shared_ptr<const ActionLibrary> initial_library(const ServiceConfig& c) {
  if (!c.data_dir.empty() && std::filesystem::exists(c.data_dir / "library.json")) {
    return std::make_shared<const ActionLibrary>(ActionLibrary::load_file(c.data_dir / "library.json"));
  }
  if (!c.library_path.empty()) {
    return std::make_shared<const ActionLibrary>(ActionLibrary::load_file(c.library_path));
  }
  return std::make_shared<const ActionLibrary>(canonical_library());
}

std::filesystem::path under(const ServiceConfig& c, const char* name) {
  if (c.data_dir.empty()) return {};
  std::filesystem::create_directories(c.data_dir);
  return c.data_dir / name;
}

ServiceConfig with_defaults(ServiceConfig c) {
  if (!c.clock) c.clock = system_now_ms;
  return c;
}

ConversationStore::Options store_options(const ServiceConfig& c) {
  return {c.data_dir, c.ephemeral_ttl, c.clock, c.fsync};
}

std::string new_token() {
  static std::mutex m;
  static std::mt19937_64 gen{std::random_device{}()};
  std::lock_guard lock(m);
  std::ostringstream out;
  out << std::hex;
  for (int i = 0; i < 2; ++i) out << gen();
  return out.str();
}

std::string_view event_for(const ExchangeRecord& r) {
  return r.kind == ExchangeKind::text ? "chat-message" : "puppet-action";
}

json record_event_payload(const ExchangeRecord& r) {
  return json{{"record", record_to_json(r)}, {"ephemeral", r.kind == ExchangeKind::action_only_status}};
}

std::vector<std::string> string_list(const json& j, const char* key) {
  if (!j.contains(key)) return {};
  if (!j[key].is_array()) throw Error(ErrorCode::schema, std::string(key) + " must be an array of strings", key);
  std::vector<std::string> out;
  for (const auto& e : j[key]) {
    if (!e.is_string()) throw Error(ErrorCode::schema, std::string(key) + " must be an array of strings", key);
    out.push_back(e.get<std::string>());
  }
  return out;
}

json parse_body(const std::string& body) {
  if (body.empty()) return json::object();
  try {
    auto j = json::parse(body);
    if (!j.is_object()) throw Error(ErrorCode::schema, "request body must be a JSON object");
    return j;
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::schema, std::string("request body is not valid JSON: ") + e.what());
  }
}

std::optional<std::string> opt_string(const json& j, const char* key) {
  if (!j.contains(key) || j[key].is_null()) return std::nullopt;
  if (!j[key].is_string()) throw Error(ErrorCode::schema, std::string(key) + " must be a string", key);
  return j[key].get<std::string>();
}

std::uint64_t parse_uint(const std::string& s, const char* what) {
  try {
    std::size_t used = 0;
    const auto v = std::stoull(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::logic_error&) {
    throw Error(ErrorCode::invalid_argument, std::string(what) + " must be a non-negative integer", s);
  }
}

const std::string& query_param(const HttpRequest& r, const char* key) {
  auto it = r.query.find(key);
  if (it == r.query.end() || it->second.empty()) {
    throw Error(ErrorCode::invalid_argument, std::string("missing query parameter ") + key, key);
  }
  return it->second;
}

}  // namespace

int http_status_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::invalid_argument:
    case ErrorCode::invalid_library:
    case ErrorCode::schema: return 400;
    case ErrorCode::unauthorized: return 403;
    case ErrorCode::not_found: return 404;
    case ErrorCode::ephemeral_record: return 410;
    case ErrorCode::provider_unavailable: return 503;
    case ErrorCode::configuration:
    case ErrorCode::storage: return 500;
    case ErrorCode::network: return 502;
  }
  return 500;
}

struct Service::UserSlot {
  std::mutex mutex;
  std::unordered_map<std::string, std::vector<std::string>> replies;  // request_id -> frames
  std::deque<std::string> reply_order;
  std::unordered_map<std::string, std::vector<std::string>> shown;  // recommendation_id -> ids
  std::deque<std::string> shown_order;
};

Service::Service(ServiceConfig config)
    : config_(with_defaults(std::move(config))),
      library_(initial_library(config_)),
      interpreter_(TextInterpreter::from_config(config_.provider, library_->embedding_dimension())),
      narrator_(interpreter_.provider_ptr(), PhraseTable::canonical(),
                config_.prompts_dir.empty() ? PromptTemplates::defaults() : PromptTemplates::load(config_.prompts_dir)),
      stories_(under(config_, "stories.jsonl")),
      preferences_(under(config_, "preferences.jsonl")),
      store_(store_options(config_)) {
  config_.weights.validate();
}

Service::~Service() = default;

// ---------------------------------------------------------------------------
// library

std::shared_ptr<const ActionLibrary> Service::library() const {
  std::shared_lock lock(library_mutex_);
  return library_;
}

void Service::replace_library(ActionLibrary next) {
  edit_library([&](const ActionLibrary&) { return std::move(next); });
}

std::shared_ptr<const ActionLibrary> Service::edit_library(
    const std::function<ActionLibrary(const ActionLibrary&)>& change) {
  std::unique_lock lock(library_mutex_);
  auto ptr = std::make_shared<const ActionLibrary>(change(*library_));
  if (ptr->embedding_dimension() != interpreter_.dimension()) {
    throw Error(ErrorCode::configuration, "library embedding dimension does not match the provider");
  }
  if (!config_.data_dir.empty()) {
    const auto path = config_.data_dir / "library.json";
    const auto tmp = config_.data_dir / "library.json.tmp";
    {
      std::ofstream out(tmp, std::ios::trunc);
      out << ptr->serialize() << '\n';
      if (!out) throw Error(ErrorCode::storage, "cannot write " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
  }
  library_ = ptr;
  return ptr;
}

// ---------------------------------------------------------------------------
// auth and sessions

std::pair<std::string, User> Service::login(const std::string& user_id, const std::string& display_name) {
  User u = store_.upsert_user(user_id, display_name);
  std::string token = new_token();
  std::lock_guard lock(auth_mutex_);
  tokens_[token] = user_id;
  return {token, u};
}

std::optional<std::string> Service::user_for_token(const std::string& token) const {
  std::lock_guard lock(auth_mutex_);
  if (auto it = tokens_.find(token); it != tokens_.end()) return it->second;
  return std::nullopt;
}

std::shared_ptr<Session> Service::open_session(std::shared_ptr<FrameSink> sink) {
  return std::make_shared<Session>(std::move(sink));
}

void Service::close_session(const std::shared_ptr<Session>& session) {
  if (!session->authenticated()) return;
  bool last = false;
  {
    std::lock_guard lock(sessions_mutex_);
    auto& list = sessions_[session->user_id()];
    std::erase_if(list, [&](const std::weak_ptr<Session>& w) {
      auto s = w.lock();
      return !s || s == session;
    });
    last = list.empty();
  }
  if (last) notify_presence(session->user_id(), "disconnected");
}

Service::UserSlot& Service::slot(const std::string& user_id) {
  std::lock_guard lock(slots_mutex_);
  auto& p = slots_[user_id];
  if (!p) p = std::make_unique<UserSlot>();
  return *p;
}

void Service::send_to_user(const std::string& user_id, const std::string& frame, const Session* except) {
  std::lock_guard lock(sessions_mutex_);
  auto it = sessions_.find(user_id);
  if (it == sessions_.end()) return;
  for (const auto& w : it->second) {
    if (auto s = w.lock(); s && s.get() != except) s->send(frame);
  }
}

void Service::broadcast(const Conversation& conv, const std::string& frame) {
  send_to_user(conv.members[0], frame);
  send_to_user(conv.members[1], frame);
}

void Service::notify_presence(const std::string& user_id, std::string_view status) {
  for (const auto& conv : store_.conversations_of(user_id)) {
    Envelope env{"exchange-status", "",
                 json{{"conversation_id", conv.conversation_id}, {"user_id", user_id}, {"status", status}},
                 store_.now()};
    send_to_user(conv.partner_of(user_id), env.dump());
  }
}

void Service::reply(const std::shared_ptr<Session>& session, UserSlot* s, const std::string& request_id,
                    const std::string& event, json payload) {
  std::string frame = Envelope{event, request_id, std::move(payload), store_.now()}.dump();
  if (s != nullptr && !request_id.empty()) {
    auto [it, inserted] = s->replies.try_emplace(request_id);
    it->second.push_back(frame);
    if (inserted) {
      s->reply_order.push_back(request_id);
      if (s->reply_order.size() > kReplyCacheSize) {
        s->replies.erase(s->reply_order.front());
        s->reply_order.pop_front();
      }
    }
  }
  session->send(std::move(frame));
}

// ---------------------------------------------------------------------------
// socket frames

void Service::handle_frame(const std::shared_ptr<Session>& session, std::string_view frame) {
  Envelope env;
  try {
    env = Envelope::parse(frame);
  } catch (const Error& e) {
    std::string rid;
    try {
      auto j = json::parse(frame);
      if (j.is_object() && j.contains("request_id") && j["request_id"].is_string()) rid = j["request_id"];
    } catch (const json::exception&) {
    }
    reply(session, nullptr, rid, "error", error_payload(e.code(), e.what(), e.subject()));
    return;
  }

  if (env.event == "auth") {
    std::vector<std::pair<std::string, RecordId>> resume;
    try {
      validate_payload(env.event, env.payload);
      const auto user = user_for_token(env.payload["token"].get<std::string>());
      if (!user) throw Error(ErrorCode::unauthorized, "unknown or expired token");
      if (session->authenticated() && session->user_id() != *user) {
        throw Error(ErrorCode::unauthorized, "session is already bound to another user");
      }
      if (env.payload.contains("resume")) {
        for (const auto& [conv, last] : env.payload["resume"].items()) {
          member_conversation(*user, conv);
          resume.emplace_back(conv, last.get<RecordId>());
        }
      }
      const bool fresh = !session->authenticated();
      session->user_id_ = *user;
      bool first = false;
      if (fresh) {
        std::lock_guard lock(sessions_mutex_);
        auto& list = sessions_[*user];
        std::erase_if(list, [](const std::weak_ptr<Session>& w) { return w.expired(); });
        first = list.empty();
        list.push_back(session);
      }
      json convs = json::array();
      for (const auto& c : store_.conversations_of(*user)) {
        convs.push_back({{"conversation_id", c.conversation_id}, {"partner", c.partner_of(*user)}});
      }
      reply(session, nullptr, env.request_id, "ack", json{{"user_id", *user}, {"conversations", convs}});
      if (first) notify_presence(*user, "connected");
    } catch (const Error& e) {
      reply(session, nullptr, env.request_id, "error", error_payload(e.code(), e.what(), e.subject()));
      return;
    }
    for (const auto& [conv, last] : resume) {
      for (const auto& r : store_.history_after(conv, session->user_id(), last)) {
        json payload = record_event_payload(r);
        payload["replayed"] = true;
        session->send(Envelope{std::string(event_for(r)), "", std::move(payload), store_.now()}.dump());
      }
    }
    return;
  }

  if (!session->authenticated()) {
    reply(session, nullptr, env.request_id, "error",
          error_payload(ErrorCode::unauthorized, "authenticate before sending " + env.event));
    return;
  }

  UserSlot& s = slot(session->user_id());
  std::lock_guard lock(s.mutex);
  if (!env.request_id.empty()) {
    if (auto it = s.replies.find(env.request_id); it != s.replies.end()) {
      for (const auto& f : it->second) session->send(f);
      return;
    }
  }
  dispatch(session, env, s);
}

void Service::dispatch(const std::shared_ptr<Session>& session, const Envelope& env, UserSlot& s) {
  try {
    validate_payload(env.event, env.payload);
    if (env.event == "chat-message") {
      reply(session, &s, env.request_id, "ack", on_chat(*session, env));
    } else if (env.event == "puppet-action") {
      reply(session, &s, env.request_id, "ack", on_puppet_action(*session, env, s));
    } else if (env.event == "emn-update") {
      reply(session, &s, env.request_id, "ack", on_emn_update(*session, env));
    } else if (env.event == "recommend-request") {
      const auto& p = env.payload;
      if (p.contains("report")) {
        const auto& r = p["report"];
        report_locked(s, session->user_id(),
                      {r["recommendation_id"], opt_string(r, "chosen"), opt_string(r, "hidden")});
      }
      RecommendRequest req;
      req.conversation_id = opt_string(p, "conversation_id");
      req.draft_text = opt_string(p, "draft_text");
      if (p.contains("seed")) req.seed = p["seed"].get<std::uint64_t>();
      reply(session, &s, env.request_id, "recommend-response", recommend_locked(s, session->user_id(), req));
    }
  } catch (const Error& e) {
    reply(session, &s, env.request_id, "error", error_payload(e.code(), e.what(), e.subject()));
  } catch (const json::exception& e) {
    reply(session, &s, env.request_id, "error", error_payload(ErrorCode::schema, e.what()));
  }
}

Conversation Service::member_conversation(const std::string& user_id, const std::string& conversation_id) const {
  auto conv = store_.conversation(conversation_id);
  if (!conv) throw Error(ErrorCode::not_found, "unknown conversation '" + conversation_id + "'", conversation_id);
  if (!conv->has_member(user_id)) {
    throw Error(ErrorCode::unauthorized, "not a member of " + conversation_id, conversation_id);
  }
  return *conv;
}

ExchangeRecord Service::append_and_broadcast(ExchangeRecord draft, const std::string& request_id) {
  const Conversation conv = member_conversation(draft.sender_id, draft.conversation_id);
  return store_.append(std::move(draft), [&](const ExchangeRecord& r) {
    broadcast(conv, Envelope{std::string(event_for(r)), request_id, record_event_payload(r), r.timestamp}.dump());
  });
}

json Service::on_chat(const Session& session, const Envelope& env) {
  ExchangeRecord r;
  r.conversation_id = env.payload["conversation_id"];
  r.sender_id = session.user_id();
  r.kind = ExchangeKind::text;
  r.text = env.payload["text"].get<std::string>();
  if (utf8_length(*r.text) > kMaxChatLength) throw Error(ErrorCode::invalid_argument, "message is too long");
  r = append_and_broadcast(std::move(r), env.request_id);
  return json{{"record", record_to_json(r)}};
}

json Service::on_puppet_action(const Session& session, const Envelope& env, UserSlot& s) {
  const auto& p = env.payload;
  const std::string user = session.user_id();
  const std::string conv_id = p["conversation_id"];
  const std::string action_id = p["action"];
  member_conversation(user, conv_id);
  const auto lib = library();
  if (!lib->contains(action_id)) throw Error(ErrorCode::not_found, "unknown action id '" + action_id + "'", action_id);

  std::optional<std::vector<std::string>> shown;
  if (p.contains("recommendation_id")) {
    auto it = s.shown.find(p["recommendation_id"].get<std::string>());
    if (it == s.shown.end()) {
      throw Error(ErrorCode::not_found, "unknown recommendation_id", p["recommendation_id"].get<std::string>());
    }
    shown = it->second;
  }

  ExchangeRecord r;
  r.conversation_id = conv_id;
  r.sender_id = user;
  r.action_id = action_id;
  if (!p["persist"].get<bool>()) {
    if (p.contains("micronarrative")) throw Error(ErrorCode::invalid_argument, "an action-only status carries no micronarrative");
    if (p.contains("paired_with")) throw Error(ErrorCode::invalid_argument, "only a sent action can answer a record");
    r.kind = ExchangeKind::action_only_status;
  } else {
    const auto& m = p.contains("micronarrative") ? p["micronarrative"] : json();
    if (m.is_string()) {
      Micronarrative base;
      base.action_id = action_id;
      base.story_version = stories_.latest(user).version;
      r.micronarrative = NarrativeEngine::apply_user_edit(base, m.get<std::string>());
    } else if (m.is_object()) {
      Micronarrative given = micronarrative_from_json(m);
      if (given.action_id.empty()) given.action_id = action_id;
      if (given.action_id != action_id) throw Error(ErrorCode::invalid_argument, "micronarrative belongs to another action");
      if (given.text.empty()) throw Error(ErrorCode::invalid_argument, "caption must not be empty");
      if (utf8_length(given.text) > kMaxCaptionLength) throw Error(ErrorCode::invalid_argument, "caption exceeds 200 characters");
      r.micronarrative = std::move(given);
    } else {
      r.micronarrative = narrate(user, NarrateRequest{action_id, conv_id, std::nullopt, std::nullopt, std::nullopt});
    }
    if (p.contains("paired_with")) {
      r.kind = ExchangeKind::dyadic_exchange;
      r.paired_with = p["paired_with"].get<RecordId>();
    } else {
      r.kind = ExchangeKind::action_with_narrative;
    }
  }

  r = append_and_broadcast(std::move(r), env.request_id);
  if (shown) {
    const bool listed = std::find(shown->begin(), shown->end(), action_id) != shown->end();
    report_locked(s, user, {p["recommendation_id"], listed ? std::optional(action_id) : std::nullopt, std::nullopt});
  }
  return json{{"record", record_to_json(r)}};
}

json Service::on_emn_update(const Session& session, const Envelope& env) {
  const std::string user = session.user_id();
  json ack;
  if (env.payload.contains("story")) {
    const auto story = update_story(user, env.payload["story"]);
    ack = json{{"story", story_to_json(story)}};
  } else {
    const auto& t = env.payload["tags"];
    ack = json{{"tags", tagset_to_json(update_tags(user, string_list(t, "selected"), string_list(t, "custom")))}};
  }
  // stories are private: only the owner's other devices hear about it
  send_to_user(user, Envelope{"emn-update", env.request_id, ack, store_.now()}.dump(), &session);
  return ack;
}

// ---------------------------------------------------------------------------
// recommendation and narration

RecommendationContext Service::context_for(const std::string& user_id,
                                           const std::optional<std::string>& conversation_id) const {
  RecommendationContext ctx;
  ctx.user_id = user_id;
  if (!conversation_id) return ctx;
  member_conversation(user_id, *conversation_id);
  const auto recent = store_.recent(*conversation_id, kContextWindow);
  if (recent.empty()) return ctx;
  const auto& last = recent.back();
  if (!last.is_action()) {
    ctx.conversation_state = ConversationState::idle;
  } else {
    ctx.conversation_state =
        last.sender_id == user_id ? ConversationState::self_acted_last : ConversationState::partner_acted_last;
  }
  for (auto it = recent.rbegin(); it != recent.rend(); ++it) {
    if (it->is_action() && it->sender_id != user_id) {
      ctx.partner_last_action = it->action_id;
      break;
    }
  }
  // a partner action that has since left the library gives no context
  if (ctx.partner_last_action && !library()->contains(*ctx.partner_last_action)) {
    ctx.partner_last_action.reset();
    if (ctx.conversation_state == ConversationState::partner_acted_last) {
      ctx.conversation_state = ConversationState::idle;
    }
  }
  return ctx;
}

json Service::recommend(const std::string& user_id, const RecommendRequest& request) {
  UserSlot& s = slot(user_id);
  std::lock_guard lock(s.mutex);
  return recommend_locked(s, user_id, request);
}

json Service::recommend_locked(UserSlot& s, const std::string& user_id, const RecommendRequest& request) {
  const auto lib = library();
  RecommendationContext ctx = context_for(user_id, request.conversation_id);
  ctx.draft_text = request.draft_text;
  ctx.seed = request.seed ? *request.seed : std::random_device{}() * 0x9E3779B97F4A7C15ULL;
  Weights w = config_.weights;
  if (request.no_noise) w.noise_amplitude = 0.0;
  const Recommendation rec = recommend_detailed(ctx, *lib, w, preferences_, interpreter_);

  const std::string rid = "rec-" + std::to_string(next_recommendation_++);
  std::vector<std::string> shown;
  json items = json::array();
  for (const auto& b : rec.top) {
    const Action& a = lib->at(b.action_id);
    json item = breakdown_to_json(b);
    item["name"] = a.name;
    item["emotion"] = to_string(a.emotion);
    item["interaction_role"] = to_string(a.interaction_role);
    items.push_back(std::move(item));
    shown.push_back(b.action_id);
  }
  s.shown[rid] = std::move(shown);
  s.shown_order.push_back(rid);
  if (s.shown_order.size() > kShownCacheSize) {
    s.shown.erase(s.shown_order.front());
    s.shown_order.pop_front();
  }

  json out{{"recommendation_id", rid},
           {"conversation_state", to_string(ctx.conversation_state)},
           {"seed", ctx.seed},
           {"degraded", rec.degraded},
           {"items", std::move(items)}};
  if (request.conversation_id) out["conversation_id"] = *request.conversation_id;
  if (ctx.partner_last_action) out["partner_last_action"] = *ctx.partner_last_action;
  return out;
}

void Service::report_outcome(const std::string& user_id, const OutcomeReport& report) {
  UserSlot& s = slot(user_id);
  std::lock_guard lock(s.mutex);
  report_locked(s, user_id, report);
}

void Service::report_locked(UserSlot& s, const std::string& user_id, const OutcomeReport& report) {
  auto it = s.shown.find(report.recommendation_id);
  if (it == s.shown.end()) {
    throw Error(ErrorCode::not_found, "unknown recommendation_id", report.recommendation_id);
  }
  preferences_.record_outcome(user_id, it->second, report.chosen, report.hidden);
  // one outcome per recommendation
  s.shown.erase(it);
  std::erase(s.shown_order, report.recommendation_id);
}

Micronarrative Service::narrate(const std::string& user_id, const NarrateRequest& request) {
  const auto lib = library();
  const Action& action = lib->at(request.action_id);
  const PersonalStory story = stories_.latest(user_id);
  std::vector<ExchangeRecord> context;
  if (request.conversation_id) {
    member_conversation(user_id, *request.conversation_id);
    context = store_.recent(*request.conversation_id, kContextWindow);
  }
  if (request.edit) {
    Micronarrative base;
    if (request.previous) {
      base = *request.previous;
    } else {
      base.action_id = action.id;
      base.story_version = story.version;
    }
    if (base.action_id != action.id) throw Error(ErrorCode::invalid_argument, "edit must keep the action", action.id);
    return NarrativeEngine::apply_user_edit(base, *request.edit);
  }
  std::vector<std::string> tags;
  if (request.tags) {
    tags = *request.tags;
  } else if (auto sel = stories_.tag_selection(user_id)) {
    tags = sel->selected;
  }
  if (request.previous) return narrator_.regenerate(*request.previous, action, tags, story, context, lib.get());
  return narrator_.generate(action, story, context, tags, lib.get());
}

PersonalStory Service::update_story(const std::string& user_id, const std::string& text) {
  PersonalStory s = stories_.update(user_id, text, store_.now());
  store_.set_story_version(user_id, s.version);
  return s;
}

TagSet Service::current_tags(const std::string& user_id) const {
  TagSet proposed = narrator_.propose_tags(stories_.latest(user_id));
  if (auto stored = stories_.tag_selection(user_id)) {
    for (const auto& c : stored->custom) proposed.add_custom(c);
    // tags no longer proposed after a story edit drop out of the selection
    std::vector<std::string> keep;
    for (const auto& t : stored->selected) {
      if (proposed.is_proposed(t) || std::find(proposed.custom.begin(), proposed.custom.end(), t) != proposed.custom.end()) {
        keep.push_back(t);
      }
    }
    proposed.select(std::move(keep));
  }
  return proposed;
}

TagSet Service::update_tags(const std::string& user_id, const std::vector<std::string>& selected,
                            const std::vector<std::string>& custom) {
  TagSet tags = narrator_.propose_tags(stories_.latest(user_id));
  for (const auto& c : custom) tags.add_custom(c);
  tags.select(selected);
  stories_.set_tag_selection(user_id, tags);
  return tags;
}

// ---------------------------------------------------------------------------
// HTTP

std::string Service::require_user(const HttpRequest& request) const {
  if (request.bearer.empty()) throw Error(ErrorCode::unauthorized, "missing bearer token");
  auto user = user_for_token(request.bearer);
  if (!user) throw Error(ErrorCode::unauthorized, "unknown or expired token");
  return *user;
}

HttpResponse Service::handle_http(const HttpRequest& request) {
  try {
    return route(request);
  } catch (const Error& e) {
    int status = http_status_for(e.code());
    if (e.code() == ErrorCode::unauthorized && request.bearer.empty()) status = 401;
    return {status, error_payload(e.code(), e.what(), e.subject())};
  } catch (const json::exception& e) {
    return {400, error_payload(ErrorCode::schema, e.what())};
  }
}

HttpResponse Service::route(const HttpRequest& request) {
  const std::string& m = request.method;
  const std::string& path = request.path;
  auto method_not_allowed = [&] { return HttpResponse{405, error_payload(ErrorCode::invalid_argument, "method not allowed")}; };

  if (path == "/health") {
    return {200, json{{"status", "ok"}, {"actions", library()->size()}, {"provider", interpreter_.provider().id()}}};
  }
  if (path == "/login") {
    if (m != "POST") return method_not_allowed();
    const json body = parse_body(request.body);
    const auto user_id = opt_string(body, "user_id");
    if (!user_id) throw Error(ErrorCode::schema, "missing user_id", "user_id");
    auto [token, user] = login(*user_id, opt_string(body, "display_name").value_or(""));
    return {200, json{{"token", token}, {"user", user_to_json(user)}}};
  }
  if (path == "/library") {
    if (m == "GET") return {200, library()->to_json()};
    require_user(request);
    std::shared_ptr<const ActionLibrary> next;
    if (m == "POST") {
      Action a = action_from_json(parse_body(request.body));
      next = edit_library([&](const ActionLibrary& lib) { return lib.upsert(a); });
    } else if (m == "DELETE") {
      const std::string id = query_param(request, "id");
      next = edit_library([&](const ActionLibrary& lib) { return lib.remove(id); });
    } else {
      return method_not_allowed();
    }
    return {200, json{{"version", next->version()}, {"action_count", next->size()}}};
  }

  const std::string user = require_user(request);
  if (path == "/contacts") {
    if (m == "GET") {
      json out = json::array();
      for (const auto& c : store_.contacts_of(user)) out.push_back(contact_to_json(c));
      return {200, json{{"contacts", out}}};
    }
    if (m != "POST") return method_not_allowed();
    const json body = parse_body(request.body);
    const auto peer = opt_string(body, "peer_id");
    if (!peer) throw Error(ErrorCode::schema, "missing peer_id", "peer_id");
    auto [contact, conv] = store_.add_contact(
        user, *peer, RelationshipIcon::parse(opt_string(body, "relationship_icon").value_or("friend")));
    return {200, json{{"contact", contact_to_json(contact)},
                      {"conversation", {{"conversation_id", conv.conversation_id}, {"members", conv.members}}}}};
  }
  if (path == "/conversations") {
    json out = json::array();
    for (const auto& c : store_.conversations_of(user)) {
      out.push_back({{"conversation_id", c.conversation_id}, {"partner", c.partner_of(user)}});
    }
    return {200, json{{"conversations", out}}};
  }
  if (path == "/history" || path == "/export") {
    const auto& conv = query_param(request, "conversation_id");
    std::vector<ExchangeRecord> records;
    if (path == "/export") {
      member_conversation(user, conv);
      records = store_.export_thread(conv);
    } else {
      Page page;
      if (request.query.contains("page")) page.index = parse_uint(request.query.at("page"), "page");
      if (request.query.contains("size")) page.size = parse_uint(request.query.at("size"), "size");
      records = store_.history(conv, user, page);
    }
    json out = json::array();
    for (const auto& r : records) out.push_back(record_to_json(r));
    return {200, json{{"conversation_id", conv}, {"records", out}}};
  }
  if (path == "/replay") {
    return {200, replay_to_json(store_.replay(parse_uint(query_param(request, "record_id"), "record_id"), user))};
  }
  if (path == "/recommend") {
    if (m != "POST") return method_not_allowed();
    const json body = parse_body(request.body);
    UserSlot& s = slot(user);
    std::lock_guard lock(s.mutex);
    if (body.contains("report")) {
      const auto& r = body["report"];
      const auto rid = opt_string(r, "recommendation_id");
      if (!rid) throw Error(ErrorCode::schema, "report needs a recommendation_id");
      report_locked(s, user, {*rid, opt_string(r, "chosen"), opt_string(r, "hidden")});
    }
    RecommendRequest req;
    req.conversation_id = opt_string(body, "conversation_id");
    req.draft_text = opt_string(body, "draft_text");
    if (body.contains("seed")) req.seed = body["seed"].get<std::uint64_t>();
    req.no_noise = body.value("no_noise", false);
    return {200, recommend_locked(s, user, req)};
  }
  if (path == "/narrate") {
    if (m != "POST") return method_not_allowed();
    const json body = parse_body(request.body);
    NarrateRequest req;
    const auto action = opt_string(body, "action_id");
    if (!action) throw Error(ErrorCode::schema, "missing action_id", "action_id");
    req.action_id = *action;
    req.conversation_id = opt_string(body, "conversation_id");
    if (body.contains("tags")) req.tags = string_list(body, "tags");
    if (body.contains("previous")) req.previous = micronarrative_from_json(body["previous"]);
    req.edit = opt_string(body, "edit");
    return {200, micronarrative_to_json(narrate(user, req))};
  }
  if (path == "/tags") {
    if (m == "GET") return {200, tagset_to_json(current_tags(user))};
    if (m != "POST") return method_not_allowed();
    const json body = parse_body(request.body);
    return {200, tagset_to_json(update_tags(user, string_list(body, "selected"), string_list(body, "custom")))};
  }
  if (path == "/story") {
    if (m == "GET") {
      json versions = json::array();
      for (const auto& s : stories_.history(user)) versions.push_back(story_to_json(s));
      return {200, json{{"latest", story_to_json(stories_.latest(user))}, {"versions", versions}}};
    }
    if (m != "POST") return method_not_allowed();
    const json body = parse_body(request.body);
    const auto text = opt_string(body, "text");
    if (!text) throw Error(ErrorCode::schema, "missing text", "text");
    const auto story = update_story(user, *text);
    send_to_user(user, Envelope{"emn-update", "", json{{"story", story_to_json(story)}}, store_.now()}.dump());
    return {200, story_to_json(story)};
  }
  return {404, error_payload(ErrorCode::not_found, "no route for " + path, path)};
}

}  // namespace puppetchat
