#include <doctest.h>

#include <fstream>

#include "puppetchat/error.hpp"
#include "puppetchat/gateway.hpp"
#include "support.hpp"

using namespace puppetchat;
using nlohmann::json;
using namespace std::chrono_literals;

namespace {

struct Running {
  Service svc;
  Server server;

  explicit Running(ServiceConfig c = {}) : svc(std::move(c)), server(svc, "127.0.0.1", 0, 2) { server.start(); }
  ~Running() { server.stop(); }

  unsigned short port() const { return server.port(); }

  std::string token(const std::string& user) {
    const auto res = http_call("127.0.0.1", port(), "POST", "/login", json{{"user_id", user}});
    REQUIRE(res.status == 200);
    return res.body["token"];
  }

  std::unique_ptr<GatewayClient> client(const std::string& user, json resume = nullptr) {
    auto c = std::make_unique<GatewayClient>("127.0.0.1", port());
    c->connect();
    json p{{"token", token(user)}};
    if (!resume.is_null()) p["resume"] = resume;
    const auto ack = c->request("auth", p);
    REQUIRE(ack.event == "ack");
    return c;
  }
};

bool is_record_event(const Envelope& e) { return e.event == "chat-message" || e.event == "puppet-action"; }

}  // namespace

TEST_CASE("HTTP over the socket") {
  Running r;
  auto health = http_call("127.0.0.1", r.port(), "GET", "/health");
  CHECK(health.status == 200);
  CHECK(health.body["actions"] == 42);

  const auto token = r.token("alice");
  r.token("bob");
  const auto contact = http_call("127.0.0.1", r.port(), "POST", "/contacts",
                                 json{{"peer_id", "bob"}, {"relationship_icon", "family"}}, token);
  REQUIRE(contact.status == 200);
  const std::string conv = contact.body["conversation"]["conversation_id"];
  CHECK(http_call("127.0.0.1", r.port(), "GET", "/conversations", nullptr, token).body["conversations"].size() == 1);
  CHECK(http_call("127.0.0.1", r.port(), "GET", "/history?conversation_id=" + conv, nullptr, token).status == 200);
  CHECK(http_call("127.0.0.1", r.port(), "GET", "/history?conversation_id=" + conv).status == 401);
  CHECK(http_call("127.0.0.1", r.port(), "GET", "/history?conversation_id=" + conv + "&token=" + token).status ==
        200);
}

TEST_CASE("a dyad exchanges events over WebSockets") {
  Running r;
  r.svc.store().upsert_user("alice", "");
  r.svc.store().upsert_user("bob", "");
  r.svc.store().add_contact("alice", "bob", RelationshipIcon{});
  const std::string conv = conversation_id_for("alice", "bob");
  auto alice = r.client("alice");
  auto bob = r.client("bob");

  const auto ack = alice->request("puppet-action", json{{"conversation_id", conv}, {"action", "throw-heart"}, {"persist", true}});
  REQUIRE(ack.event == "ack");
  const auto got = bob->wait_for([](const Envelope& e) { return e.event == "puppet-action"; }, 5s);
  REQUIRE(got);
  CHECK(got->envelope.payload["record"]["action_id"] == "throw-heart");

  const auto rec = bob->request("recommend-request", json{{"conversation_id", conv}, {"seed", 1}});
  REQUIRE(rec.event == "recommend-response");
  bool has_catch = false;
  for (const auto& i : rec.payload["items"]) has_catch = has_catch || i["action_id"] == "catch-heart";
  CHECK(has_catch);

  const auto err = bob->request("puppet-action", json{{"conversation_id", conv}});
  CHECK(err.event == "error");
  CHECK(err.payload["code"] == "schema");
}

TEST_CASE("resume replays durable records missed while away") {
  Running r;
  r.svc.store().upsert_user("alice", "");
  r.svc.store().upsert_user("bob", "");
  r.svc.store().add_contact("alice", "bob", RelationshipIcon{});
  const std::string conv = conversation_id_for("alice", "bob");
  auto alice = r.client("alice");

  RecordId seen = 0;
  {
    auto bob = r.client("bob");
    const auto first = alice->request("chat-message", json{{"conversation_id", conv}, {"text", "one"}});
    seen = first.payload["record"]["record_id"];
    REQUIRE(bob->wait_for(is_record_event, 5s));
    bob->close();
  }
  alice->request("chat-message", json{{"conversation_id", conv}, {"text", "two"}});
  alice->request("puppet-action", json{{"conversation_id", conv}, {"action", "wave-hello"}, {"persist", false}});
  alice->request("puppet-action", json{{"conversation_id", conv}, {"action", "hug"}, {"persist", true}});

  auto bob = r.client("bob", json{{conv, seen}});
  std::vector<Envelope> replayed;
  while (auto e = bob->wait_for(is_record_event, 1s)) replayed.push_back(e->envelope);
  REQUIRE(replayed.size() == 2);
  CHECK(replayed[0].payload["record"]["text"] == "two");
  CHECK(replayed[1].payload["record"]["action_id"] == "hug");
  CHECK(replayed[0].payload["replayed"] == true);
}

TEST_CASE("clients see one conversation in one order") {
  Running r;
  r.svc.store().upsert_user("alice", "");
  r.svc.store().upsert_user("bob", "");
  r.svc.store().add_contact("alice", "bob", RelationshipIcon{});
  const std::string conv = conversation_id_for("alice", "bob");
  auto alice = r.client("alice");
  auto bob = r.client("bob");

  constexpr int kEach = 40;
  for (int i = 0; i < kEach; ++i) {
    alice->send("chat-message", "a" + std::to_string(i), json{{"conversation_id", conv}, {"text", "a"}});
    bob->send("chat-message", "b" + std::to_string(i), json{{"conversation_id", conv}, {"text", "b"}});
  }
  auto collect = [&](GatewayClient& c) {
    std::vector<RecordId> ids;
    while (ids.size() < 2 * kEach) {
      auto e = c.wait_for(is_record_event, 5s);
      if (!e) break;
      ids.push_back(e->envelope.payload["record"]["record_id"]);
    }
    return ids;
  };
  const auto seen_a = collect(*alice);
  const auto seen_b = collect(*bob);
  REQUIRE(seen_a.size() == 2 * kEach);
  CHECK(seen_a == seen_b);
  std::vector<RecordId> durable;
  for (const auto& rec : r.svc.store().export_thread(conv)) durable.push_back(rec.record_id);
  CHECK(durable == seen_a);
}

TEST_CASE("the config file and environment") {
  pctest::TempDir dir;
  const auto file = dir.path() / "config.json";
  {
    std::ofstream out(file);
    out << json{{"listen", "127.0.0.1:9911"}, {"ephemeral_ttl_ms", 1500}, {"weights", {{"w_pref", 0.25}}}}.dump();
  }
  auto c = GatewayConfig::load(file);
  CHECK(c.port == 9911);
  CHECK(c.service.ephemeral_ttl == 1500ms);
  CHECK(c.service.weights.w_pref == 0.25);
  CHECK(c.service.weights.w_text == 1.0);

  {
    std::ofstream out(file);
    out << json{{"provider", {{"kind", "remote"}, {"endpoint", "http://x"}, {"credentials", "leaked"}}}}.dump();
  }
  CHECK_THROWS_AS(GatewayConfig::load(file), Error);

  ::setenv("PUPPETCHAT_W_TEXT", "2.5", 1);
  ::setenv("PUPPETCHAT_LISTEN", "0.0.0.0:7000", 1);
  GatewayConfig e;
  e.apply_env();
  CHECK(e.service.weights.w_text == 2.5);
  CHECK(e.port == 7000);
  CHECK(e.address == "0.0.0.0");
  ::setenv("PUPPETCHAT_W_TEXT", "lots", 1);
  CHECK_THROWS_AS(e.apply_env(), Error);
  ::unsetenv("PUPPETCHAT_W_TEXT");
  ::unsetenv("PUPPETCHAT_LISTEN");
}
