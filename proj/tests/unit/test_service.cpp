#include <doctest.h>

#include <mutex>
#include <thread>

#include "puppetchat/error.hpp"
#include "puppetchat/service.hpp"
#include "support.hpp"

using namespace puppetchat;
using nlohmann::json;

namespace {

class CaptureSink final : public FrameSink {
 public:
  void send(std::string frame) override {
    std::lock_guard lock(mutex_);
    frames_.push_back(Envelope::parse(frame));
  }
  std::vector<Envelope> take() {
    std::lock_guard lock(mutex_);
    return std::exchange(frames_, {});
  }

 private:
  std::mutex mutex_;
  std::vector<Envelope> frames_;
};

struct Client {
  std::shared_ptr<CaptureSink> sink = std::make_shared<CaptureSink>();
  std::shared_ptr<Session> session;
  int next = 0;

  void raw(Service& svc, const std::string& frame) { svc.handle_frame(session, frame); }

  Envelope call(Service& svc, const std::string& event, json payload, std::string rid = {}) {
    if (rid.empty()) rid = "r" + std::to_string(++next);
    svc.handle_frame(session, Envelope{event, rid, std::move(payload), 0}.dump());
    for (const auto& e : sink->take()) {
      if (e.request_id == rid && (e.event == "ack" || e.event == "error" || e.event == "recommend-response")) {
        return e;
      }
    }
    FAIL("no reply to " << rid);
    return {};
  }
};

struct World {
  pctest::FakeClock clock;
  Service svc;
  Client alice, bob;
  std::string conv;

  static ServiceConfig config(const pctest::FakeClock& clock, std::filesystem::path dir = {}) {
    ServiceConfig c;
    c.data_dir = std::move(dir);
    c.clock = clock;
    c.fsync = false;
    return c;
  }

  explicit World(std::filesystem::path dir = {}) : svc(config(clock, std::move(dir))) {
    alice = connect("alice");
    bob = connect("bob");
    conv = svc.store().add_contact("alice", "bob", RelationshipIcon{}).second.conversation_id;
    alice.sink->take();
    bob.sink->take();
  }

  Client connect(const std::string& user) {
    Client c;
    c.session = svc.open_session(c.sink);
    const auto token = svc.login(user).first;
    const auto ack = c.call(svc, "auth", json{{"token", token}});
    REQUIRE(ack.event == "ack");
    return c;
  }

  Envelope act(Client& c, const std::string& action, bool persist, json extra = json::object()) {
    json p{{"conversation_id", conv}, {"action", action}, {"persist", persist}};
    p.update(extra);
    return c.call(svc, "puppet-action", p);
  }

  std::size_t history_size(const std::string& user = "alice") {
    return svc.store().history(conv, user, Page{0, 1000}).size();
  }
};

std::vector<std::string> item_ids(const Envelope& e) {
  std::vector<std::string> out;
  for (const auto& i : e.payload["items"]) out.push_back(i["action_id"]);
  return out;
}

bool has(const std::vector<std::string>& v, const std::string& x) {
  return std::find(v.begin(), v.end(), x) != v.end();
}

std::vector<Envelope> events(std::vector<Envelope> frames, const std::string& name) {
  std::erase_if(frames, [&](const Envelope& e) { return e.event != name; });
  return frames;
}

}  // namespace

TEST_CASE("a sent action reaches both clients and stays in history") {
  World w;
  const auto ack = w.act(w.alice, "hug", true, {{"micronarrative", "thinking of you"}});
  REQUIRE(ack.event == "ack");
  CHECK(ack.payload["record"]["kind"] == "action_with_narrative");

  const auto to_bob = events(w.bob.sink->take(), "puppet-action");
  REQUIRE(to_bob.size() == 1);
  CHECK(to_bob[0].payload["record"]["micronarrative"]["text"] == "thinking of you");
  CHECK(to_bob[0].payload["ephemeral"] == false);
  CHECK(to_bob[0].request_id == ack.request_id);
  CHECK(w.history_size() == 1);
}

TEST_CASE("an action-only status reaches both clients but not history") {
  World w;
  const auto ack = w.act(w.alice, "hug", false);
  REQUIRE(ack.event == "ack");
  const auto to_bob = events(w.bob.sink->take(), "puppet-action");
  REQUIRE(to_bob.size() == 1);
  CHECK(to_bob[0].payload["ephemeral"] == true);
  CHECK_FALSE(to_bob[0].payload["record"].contains("micronarrative"));
  CHECK(w.history_size() == 0);
  CHECK(w.act(w.alice, "hug", false, {{"micronarrative", "nope"}}).event == "error");
}

TEST_CASE("server-generated caption when none is supplied") {
  World w;
  const auto ack = w.act(w.alice, "hug", true);
  REQUIRE(ack.event == "ack");
  CHECK(ack.payload["record"]["micronarrative"]["text"] == "Sending you a warm hug");
  CHECK(ack.payload["record"]["micronarrative"]["generated_by"] == "offline_template");
}

TEST_CASE("malformed payloads get an error with the same request_id and store nothing") {
  World w;
  const std::vector<json> bad{
      json{{"conversation_id", w.conv}, {"action", "hug"}},                              // missing persist
      json{{"conversation_id", w.conv}, {"action", "hug"}, {"persist", "yes"}},          // wrong type
      json{{"conversation_id", w.conv}, {"action", "hug"}, {"persist", true}, {"x", 1}}, // unknown field
      json{{"conversation_id", w.conv}, {"action", "no-such-action"}, {"persist", true}},
      json::array({1, 2})};
  int i = 0;
  for (const auto& p : bad) {
    const std::string rid = "bad-" + std::to_string(i++);
    const auto reply = w.alice.call(w.svc, "puppet-action", p, rid);
    CHECK(reply.event == "error");
    CHECK(reply.request_id == rid);
  }
  CHECK(w.history_size() == 0);
  CHECK(events(w.bob.sink->take(), "puppet-action").empty());

  w.alice.raw(w.svc, R"({"event":"puppet-action","request_id":"q1","payload":)");
  auto frames = w.alice.sink->take();
  REQUIRE(frames.size() == 1);
  CHECK(frames[0].event == "error");

  w.alice.raw(w.svc, R"({"event":"teleport","request_id":"q2","payload":{}})");
  frames = w.alice.sink->take();
  REQUIRE(frames.size() == 1);
  CHECK(frames[0].event == "error");
  CHECK(frames[0].request_id == "q2");
  CHECK(frames[0].payload["code"] == "schema");
}

TEST_CASE("unauthenticated sessions are refused") {
  World w;
  Client c;
  c.session = w.svc.open_session(c.sink);
  const auto reply = c.call(w.svc, "chat-message", json{{"conversation_id", w.conv}, {"text", "hi"}});
  CHECK(reply.event == "error");
  CHECK(reply.payload["code"] == "unauthorized");
  CHECK(c.call(w.svc, "auth", json{{"token", "forged"}}).event == "error");
}

TEST_CASE("a repeated request_id is answered once and stored once") {
  World w;
  const json p{{"conversation_id", w.conv}, {"text", "hello"}};
  const auto first = w.alice.call(w.svc, "chat-message", p, "same");
  const auto second = w.alice.call(w.svc, "chat-message", p, "same");
  CHECK(first.event == "ack");
  CHECK(first.payload == second.payload);
  CHECK(w.history_size() == 1);
  CHECK(events(w.bob.sink->take(), "chat-message").size() == 1);
}

TEST_CASE("outsiders cannot read or write a dyad") {
  World w;
  auto carol = w.connect("carol");
  const auto reply = carol.call(w.svc, "chat-message", json{{"conversation_id", w.conv}, {"text", "hi"}});
  CHECK(reply.event == "error");
  CHECK(reply.payload["code"] == "unauthorized");
  w.alice.call(w.svc, "chat-message", json{{"conversation_id", w.conv}, {"text", "private"}});
  CHECK(events(carol.sink->take(), "chat-message").empty());
  CHECK(carol.call(w.svc, "recommend-request", json{{"conversation_id", w.conv}}).event == "error");
}

TEST_CASE("story updates stay with the owner and versions are serialized") {
  World w;
  auto alice_phone = w.connect("alice");
  w.alice.sink->take();
  w.bob.sink->take();

  const auto ack = w.alice.call(w.svc, "emn-update", json{{"story", "I adopted a cat"}});
  REQUIRE(ack.event == "ack");
  CHECK(ack.payload["story"]["version"] == 1);
  CHECK(events(alice_phone.sink->take(), "emn-update").size() == 1);
  CHECK(w.bob.sink->take().empty());

  std::thread t1([&] { w.alice.call(w.svc, "emn-update", json{{"story", "from laptop"}}, "l1"); });
  std::thread t2([&] { alice_phone.call(w.svc, "emn-update", json{{"story", "from phone"}}, "p1"); });
  t1.join();
  t2.join();
  CHECK(w.svc.store().find_user("alice")->current_story_version == 3);

  const auto tags = w.svc.current_tags("alice");
  const auto& likes = tags.likes_dislikes;
  CHECK(std::find(likes.begin(), likes.end(), "cat") == likes.end());
}

TEST_CASE("tag selection must be proposed or custom") {
  World w;
  w.alice.call(w.svc, "emn-update", json{{"story", "My cat runs the house"}});
  auto ok = w.alice.call(w.svc, "emn-update", json{{"tags", {{"selected", {"cat"}}}}});
  REQUIRE(ok.event == "ack");
  CHECK(ok.payload["tags"]["selected"] == json::array({"cat"}));

  auto bad = w.alice.call(w.svc, "emn-update", json{{"tags", {{"selected", {"dragons"}}}}});
  CHECK(bad.event == "error");
  auto custom = w.alice.call(w.svc, "emn-update", json{{"tags", {{"selected", {"dragons"}}, {"custom", {"dragons"}}}}});
  CHECK(custom.event == "ack");
  CHECK(w.alice.call(w.svc, "emn-update", json{{"story", "x"}, {"tags", json::object()}}).event == "error");
}

TEST_CASE("recommend after the partner cried offers wipe-others-tears") {
  World w;
  w.act(w.alice, "cry", false);
  const auto rec = w.bob.call(w.svc, "recommend-request", json{{"conversation_id", w.conv}, {"seed", 1}});
  REQUIRE(rec.event == "recommend-response");
  CHECK(rec.payload["conversation_state"] == "partner_acted_last");
  CHECK(rec.payload["partner_last_action"] == "cry");
  const auto ids = item_ids(rec);
  CHECK(ids.size() == 4);
  CHECK(has(ids, "wipe-others-tears"));
}

TEST_CASE("recommend with I love you offers a heart action") {
  World w;
  const auto rec = w.alice.call(w.svc, "recommend-request",
                                json{{"conversation_id", w.conv}, {"draft_text", "I love you"}, {"seed", 9}});
  REQUIRE(rec.event == "recommend-response");
  bool heart = false;
  for (const auto& item : rec.payload["items"]) {
    heart = heart || (item["emotion"] == "positive" &&
                      item["action_id"].get<std::string>().find("heart") != std::string::npos);
  }
  CHECK(heart);
  CHECK(rec.payload["degraded"] == false);
}

TEST_CASE("same state and seed give identical recommendations") {
  World w;
  w.act(w.alice, "throw-heart", true);
  const json p{{"conversation_id", w.conv}, {"draft_text", "yay"}, {"seed", 1234}};
  auto a = w.bob.call(w.svc, "recommend-request", p);
  auto b = w.bob.call(w.svc, "recommend-request", p);
  a.payload.erase("recommendation_id");
  b.payload.erase("recommendation_id");
  CHECK(a.payload == b.payload);
}

TEST_CASE("outcomes feed preferences once per recommendation") {
  World w;
  const auto rec = w.bob.call(w.svc, "recommend-request", json{{"conversation_id", w.conv}, {"seed", 3}});
  const auto ids = item_ids(rec);
  const std::string rid = rec.payload["recommendation_id"];
  const auto sent = w.act(w.bob, ids[1], true, {{"recommendation_id", rid}});
  REQUIRE(sent.event == "ack");
  CHECK(w.svc.preferences().counts("bob", ids[1]).selected == 1);
  CHECK(w.svc.preferences().counts("bob", ids[0]).ignored == 1);
  CHECK(w.act(w.bob, ids[1], true, {{"recommendation_id", rid}}).event == "error");
  CHECK(w.svc.preferences().counts("bob", ids[1]).selected == 1);
}

TEST_CASE("answering the partner's action records a dyadic exchange") {
  World w;
  const auto thrown = w.act(w.alice, "throw-heart", true);
  const RecordId id = thrown.payload["record"]["record_id"];
  const auto caught = w.act(w.bob, "catch-heart", true, {{"paired_with", id}});
  REQUIRE(caught.event == "ack");
  CHECK(caught.payload["record"]["kind"] == "dyadic_exchange");
  CHECK(w.act(w.bob, "catch-heart", false, {{"paired_with", id}}).event == "error");
}

TEST_CASE("presence is announced to contacts") {
  World w;
  auto second_device = w.connect("alice");
  CHECK(events(w.bob.sink->take(), "exchange-status").empty());
  w.svc.close_session(w.alice.session);
  w.svc.close_session(second_device.session);
  const auto status = events(w.bob.sink->take(), "exchange-status");
  REQUIRE(status.size() == 1);
  CHECK(status[0].payload["user_id"] == "alice");
  CHECK(status[0].payload["status"] == "disconnected");
}

TEST_CASE("HTTP routes") {
  World w;
  auto http = [&](std::string method, std::string path, json body = nullptr, std::string token = {},
                  std::map<std::string, std::string> query = {}) {
    HttpRequest r;
    r.method = std::move(method);
    r.path = std::move(path);
    r.body = body.is_null() ? "" : body.dump();
    r.bearer = std::move(token);
    r.query = std::move(query);
    return w.svc.handle_http(r);
  };
  CHECK(http("GET", "/health").status == 200);
  CHECK(http("GET", "/library").body["actions"].size() == 42);
  CHECK(http("GET", "/history").status == 401);

  const std::string token = http("POST", "/login", json{{"user_id", "alice"}}).body["token"];
  CHECK(http("POST", "/login", json{{"user_id", "bad id"}}).status == 400);

  w.act(w.alice, "hug", true);
  const auto status_ack = w.act(w.alice, "cry", false);
  const auto history = http("GET", "/history", nullptr, token, {{"conversation_id", w.conv}});
  REQUIRE(history.status == 200);
  CHECK(history.body["records"].size() == 1);

  const RecordId hug_id = history.body["records"][0]["record_id"];
  const RecordId cry_id = status_ack.payload["record"]["record_id"];
  CHECK(http("GET", "/replay", nullptr, token, {{"record_id", std::to_string(hug_id)}}).status == 200);
  CHECK(http("GET", "/replay", nullptr, token, {{"record_id", std::to_string(cry_id)}}).status == 410);
  CHECK(http("GET", "/replay", nullptr, token, {{"record_id", "777"}}).status == 404);

  const auto rec = http("POST", "/recommend", json{{"conversation_id", w.conv}, {"seed", 1}}, token);
  CHECK(rec.status == 200);
  CHECK(rec.body["items"].size() == 4);

  const auto narr = http("POST", "/narrate", json{{"action_id", "hug"}, {"tags", json::array()}}, token);
  CHECK(narr.body["text"] == "Sending you a warm hug");

  CHECK(http("POST", "/library", json{{"id", "wiggle"}, {"name", "Wiggle"}, {"description", "Wiggles."},
                                      {"keywords", {"wiggle"}}, {"emotion", "positive"},
                                      {"interaction_role", "self_oriented"}},
             token)
            .body["action_count"] == 43);
  CHECK(http("DELETE", "/library", nullptr, token, {{"id", "agony"}}).status == 400);
  CHECK(http("GET", "/nowhere", nullptr, token).status == 404);
  const auto carol_token = w.svc.login("carol").first;
  CHECK(http("GET", "/history", nullptr, carol_token, {{"conversation_id", w.conv}}).status == 403);
}

TEST_CASE("everything survives a restart of the service") {
  pctest::TempDir dir;
  std::string conv;
  {
    World w(dir.path());
    conv = w.conv;
    w.act(w.alice, "hug", true);
    w.alice.call(w.svc, "emn-update", json{{"story", "I love my cat"}});
    Action wiggle;
    wiggle.id = "wiggle";
    wiggle.name = "Wiggle";
    wiggle.description = "Wiggles.";
    w.svc.replace_library(w.svc.library()->upsert(wiggle));
  }
  ServiceConfig c;
  c.data_dir = dir.path();
  c.fsync = false;
  Service again(c);
  CHECK(again.store().history(conv, "bob", Page{}).size() == 1);
  CHECK(again.library()->contains("wiggle"));
  CHECK(again.store().find_user("alice")->current_story_version == 1);
}

TEST_CASE("a dead remote provider degrades recommendations instead of failing them") {
  ServiceConfig c;
  c.provider.provider_kind = ProviderKind::remote;
  c.provider.endpoint = "http://127.0.0.1:9";
  Service svc(c);
  RecommendRequest r;
  r.draft_text = "I love you";
  r.seed = 1;
  const auto out = svc.recommend("alice", r);
  CHECK(out["degraded"] == true);
  CHECK(out["items"].size() == 4);
  NarrateRequest n;
  n.action_id = "hug";
  CHECK(svc.narrate("alice", n).text == "Sending you a warm hug");
}

TEST_CASE("error codes map to HTTP statuses") {
  CHECK(http_status_for(ErrorCode::schema) == 400);
  CHECK(http_status_for(ErrorCode::unauthorized) == 403);
  CHECK(http_status_for(ErrorCode::not_found) == 404);
  CHECK(http_status_for(ErrorCode::ephemeral_record) == 410);
  CHECK(http_status_for(ErrorCode::provider_unavailable) == 503);
}
