#pragma once

#include <atomic>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "puppetchat/action_library.hpp"
#include "puppetchat/conversation_store.hpp"
#include "puppetchat/micronarrative.hpp"
#include "puppetchat/protocol.hpp"
#include "puppetchat/recommendation.hpp"
#include "puppetchat/text_interpreter.hpp"

namespace puppetchat {

/// Outbound side of one live connection. `send` must not block: the
/// transport queues the frame and writes it later, in call order.
class FrameSink {
 public:
  virtual ~FrameSink() = default;
  virtual void send(std::string frame) = 0;
};

/// A connected socket as the service sees it.
class Session {
 public:
  explicit Session(std::shared_ptr<FrameSink> sink) : sink_(std::move(sink)) {}

  const std::string& user_id() const { return user_id_; }
  bool authenticated() const { return !user_id_.empty(); }
  void send(std::string frame) const { sink_->send(std::move(frame)); }

 private:
  friend class Service;
  std::shared_ptr<FrameSink> sink_;
  std::string user_id_;
};

struct HttpRequest {
  std::string method;  // GET, POST, DELETE
  std::string path;
  std::map<std::string, std::string> query;
  std::string body;
  std::string bearer;  // token from the Authorization header
};

struct HttpResponse {
  int status = 200;
  nlohmann::json body = nlohmann::json::object();
};

int http_status_for(ErrorCode code);

struct RecommendRequest {
  std::optional<std::string> conversation_id;
  std::optional<std::string> draft_text;
  std::optional<std::uint64_t> seed;
  bool no_noise = false;
};

struct OutcomeReport {
  std::string recommendation_id;
  std::optional<std::string> chosen;
  std::optional<std::string> hidden;
};

struct NarrateRequest {
  std::string action_id;
  std::optional<std::string> conversation_id;
  std::optional<std::vector<std::string>> tags;  // absent = the stored selection
  std::optional<Micronarrative> previous;        // regenerate from this caption
  std::optional<std::string> edit;               // replace previous with user text
};

/// Everything behind the socket and the HTTP routes, independent of the
/// transport: sessions, tokens, the store, recommendation, narration.
///
/// Requests from one user are handled one at a time; a repeated request_id
/// from the same user is answered from a cache without re-running it.
/// Records are broadcast from inside the store's append, so every session
/// sees a conversation's events in append order.
class Service {
 public:
  explicit Service(ServiceConfig config);
  ~Service();

  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  // ---- sessions and auth
  std::pair<std::string, User> login(const std::string& user_id, const std::string& display_name = {});
  std::optional<std::string> user_for_token(const std::string& token) const;

  std::shared_ptr<Session> open_session(std::shared_ptr<FrameSink> sink);
  void handle_frame(const std::shared_ptr<Session>& session, std::string_view frame);
  void close_session(const std::shared_ptr<Session>& session);

  HttpResponse handle_http(const HttpRequest& request);

  // ---- operations shared by both transports
  RecommendationContext context_for(const std::string& user_id,
                                    const std::optional<std::string>& conversation_id) const;
  /// Scores, remembers what was shown, returns the response payload.
  nlohmann::json recommend(const std::string& user_id, const RecommendRequest& request);
  void report_outcome(const std::string& user_id, const OutcomeReport& report);
  Micronarrative narrate(const std::string& user_id, const NarrateRequest& request);
  PersonalStory update_story(const std::string& user_id, const std::string& text);
  TagSet update_tags(const std::string& user_id, const std::vector<std::string>& selected,
                     const std::vector<std::string>& custom);
  TagSet current_tags(const std::string& user_id) const;

  std::shared_ptr<const ActionLibrary> library() const;
  void replace_library(ActionLibrary next);

  ConversationStore& store() { return store_; }
  const ConversationStore& store() const { return store_; }
  PreferenceStore& preferences() { return preferences_; }
  const Weights& weights() const { return config_.weights; }
  const TextInterpreter& interpreter() const { return interpreter_; }

 private:
  struct UserSlot;

  UserSlot& slot(const std::string& user_id);
  void dispatch(const std::shared_ptr<Session>& session, const Envelope& env, UserSlot& slot);
  void reply(const std::shared_ptr<Session>& session, UserSlot* slot, const std::string& request_id,
             const std::string& event, nlohmann::json payload);
  void broadcast(const Conversation& conv, const std::string& frame);
  void send_to_user(const std::string& user_id, const std::string& frame,
                    const Session* except = nullptr);
  void notify_presence(const std::string& user_id, std::string_view status);

  nlohmann::json on_chat(const Session& session, const Envelope& env);
  nlohmann::json on_puppet_action(const Session& session, const Envelope& env, UserSlot& slot);
  nlohmann::json on_emn_update(const Session& session, const Envelope& env);

  nlohmann::json recommend_locked(UserSlot& slot, const std::string& user_id, const RecommendRequest& request);
  void report_locked(UserSlot& slot, const std::string& user_id, const OutcomeReport& report);
  std::shared_ptr<const ActionLibrary> edit_library(
      const std::function<ActionLibrary(const ActionLibrary&)>& change);

  ExchangeRecord append_and_broadcast(ExchangeRecord draft, const std::string& request_id);
  Conversation member_conversation(const std::string& user_id, const std::string& conversation_id) const;
  std::string require_user(const HttpRequest& request) const;
  HttpResponse route(const HttpRequest& request);

  ServiceConfig config_;
  mutable std::shared_mutex library_mutex_;
  std::shared_ptr<const ActionLibrary> library_;
  TextInterpreter interpreter_;
  NarrativeEngine narrator_;
  StoryBook stories_;
  PreferenceStore preferences_;
  ConversationStore store_;

  mutable std::mutex auth_mutex_;
  std::unordered_map<std::string, std::string> tokens_;  // token -> user

  mutable std::mutex sessions_mutex_;
  std::unordered_map<std::string, std::vector<std::weak_ptr<Session>>> sessions_;

  std::mutex slots_mutex_;
  std::unordered_map<std::string, std::unique_ptr<UserSlot>> slots_;
  std::atomic<std::uint64_t> next_recommendation_{1};
};

}  // namespace puppetchat
