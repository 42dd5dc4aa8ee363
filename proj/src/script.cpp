#include "puppetchat/script.hpp"

#include <algorithm>
#include <cctype>
#include <set>
#include <sstream>
#include <thread>

#include "puppetchat/error.hpp"
#include "puppetchat/gateway.hpp"
#include "puppetchat/service.hpp"

namespace puppetchat {

using nlohmann::json;

namespace {

const std::set<std::string, std::less<>> kVerbs{"say",    "send",  "action_only", "recommend", "select",
                                               "narrate", "story", "wait",        "assert"};

[[noreturn]] void fail_at(int line, const std::string& msg) {
  throw Error(ErrorCode::invalid_argument, "line " + std::to_string(line) + ": " + msg, std::to_string(line));
}

std::vector<std::string> split_words(std::string_view line, int lineno) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < line.size()) {
    if (std::isspace(static_cast<unsigned char>(line[i]))) {
      ++i;
      continue;
    }
    if (line[i] == '#') break;
    std::string word;
    if (line[i] == '"') {
      ++i;
      bool closed = false;
      while (i < line.size()) {
        if (line[i] == '\\' && i + 1 < line.size()) {
          word += line[i + 1];
          i += 2;
        } else if (line[i] == '"') {
          closed = true;
          ++i;
          break;
        } else {
          word += line[i++];
        }
      }
      if (!closed) fail_at(lineno, "unterminated quote");
      out.push_back("\"" + word);  // leading quote marks a literal
    } else {
      while (i < line.size() && !std::isspace(static_cast<unsigned char>(line[i]))) word += line[i++];
      out.push_back(word);
    }
  }
  return out;
}

bool is_literal(const std::string& w) { return !w.empty() && w[0] == '"'; }
std::string literal(const std::string& w) { return is_literal(w) ? w.substr(1) : w; }

std::uint64_t parse_number(const std::string& w, int line, const char* what) {
  try {
    std::size_t used = 0;
    const auto v = std::stoull(w, &used);
    if (used != w.size()) throw std::invalid_argument(w);
    return v;
  } catch (const std::logic_error&) {
    fail_at(line, std::string(what) + " must be a non-negative integer, got '" + w + "'");
  }
}

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
  return s;
}

}  // namespace

Script parse_script(std::string_view text) {
  Script script;
  std::istringstream in{std::string(text)};
  std::string raw;
  int lineno = 0;
  while (std::getline(in, raw)) {
    ++lineno;
    auto words = split_words(raw, lineno);
    if (words.empty()) continue;
    const std::string head = words[0];
    if (head == "seed") {
      if (words.size() != 2) fail_at(lineno, "usage: seed <n>");
      script.seed = parse_number(words[1], lineno, "seed");
      continue;
    }
    if (head == "ttl") {
      if (words.size() != 2) fail_at(lineno, "usage: ttl <ms>");
      script.ttl_ms = static_cast<std::int64_t>(parse_number(words[1], lineno, "ttl"));
      continue;
    }
    if (head == "actor") {
      if (words.size() != 3 || (words[1] != "A" && words[1] != "B")) fail_at(lineno, "usage: actor A|B <user_id>");
      if (!is_valid_user_id(words[2])) fail_at(lineno, "bad user id '" + words[2] + "'");
      script.actors[words[1]] = words[2];
      continue;
    }
    if (head != "A" && head != "B") fail_at(lineno, "expected A or B, got '" + head + "'");
    if (words.size() < 2) fail_at(lineno, "missing step after actor");

    ScriptStep step;
    step.line = lineno;
    step.actor = head;
    step.verb = words[1];
    step.source = raw;
    if (!kVerbs.contains(step.verb)) fail_at(lineno, "unknown step '" + step.verb + "'");
    for (std::size_t i = 2; i < words.size(); ++i) step.args.push_back(words[i]);
    // a trailing @name labels the step's output; @names elsewhere are references
    if (!step.args.empty() && step.verb != "assert" && step.args.back().starts_with("@") &&
        !(step.verb == "select" && step.args.size() == 1) &&
        !(step.args.size() >= 2 && step.args[step.args.size() - 2] == "answers")) {
      step.label = step.args.back().substr(1);
      step.args.pop_back();
      if (step.label->empty()) fail_at(lineno, "empty label");
    }

    const auto n = step.args.size();
    auto need = [&](bool ok, const char* usage) {
      if (!ok) fail_at(lineno, std::string("usage: ") + usage);
    };
    if (step.verb == "say") need(n == 1 && is_literal(step.args[0]), "A say \"text\" [@label]");
    if (step.verb == "story") need(n == 1 && is_literal(step.args[0]), "A story \"text\"");
    if (step.verb == "wait") {
      need(n == 1, "A wait <ms>");
      parse_number(step.args[0], lineno, "wait");
    }
    if (step.verb == "action_only") need(n == 1 && !is_literal(step.args[0]), "A action_only <action> [@label]");
    if (step.verb == "send") {
      need(n >= 1 && !is_literal(step.args[0]), "A send <action> [\"caption\"] [answers @label] [@label]");
    }
    if (step.verb == "select") {
      need(n >= 2 && step.args[0].starts_with("@"), "A select @recommendation <action> [\"caption\"] [@label]");
    }
    if (step.verb == "narrate") need(n == 1 || (n == 3 && step.args[1] == "tags"), "A narrate <action> [tags a,b] [@label]");
    if (step.verb == "recommend") need(n == 0 || (n == 2 && step.args[0] == "text" && is_literal(step.args[1])),
                                       "A recommend [text \"draft\"] [@label]");
    if (step.verb == "assert") need(n >= 2, "A assert <subject> <predicate> ...");
    script.steps.push_back(std::move(step));
  }
  return script;
}

namespace {

struct Actor {
  std::string user_id;
  std::string token;
  std::unique_ptr<GatewayClient> client;
};

class Runner {
 public:
  Runner(const Script& script, ServiceConfig config, std::ostream& log)
      : script_(script), service_(std::move(config)), server_(service_, "127.0.0.1", 0, 4), log_(log) {}

  ScriptReport run() {
    server_.start();
    for (const auto& [name, user] : script_.actors) {
      Actor a;
      a.user_id = user;
      auto res = http_call("127.0.0.1", server_.port(), "POST", "/login", json{{"user_id", user}});
      if (res.status != 200) throw Error(ErrorCode::network, "login failed for " + user);
      a.token = res.body["token"];
      actors_[name] = std::move(a);
    }
    auto added = http_call("127.0.0.1", server_.port(), "POST", "/contacts",
                           json{{"peer_id", actors_["B"].user_id}, {"relationship_icon", "friend"}},
                           actors_["A"].token);
    if (added.status != 200) throw Error(ErrorCode::network, "could not open the dyad: " + added.body.dump());
    conversation_ = added.body["conversation"]["conversation_id"];
    for (auto& [name, a] : actors_) {
      a.client = std::make_unique<GatewayClient>("127.0.0.1", server_.port());
      a.client->connect();
      auto ack = a.client->request("auth", json{{"token", a.token}});
      if (ack.event != "ack") throw Error(ErrorCode::network, "auth failed for " + a.user_id);
    }

    for (const auto& step : script_.steps) {
      ++report_.steps_run;
      try {
        execute(step);
      } catch (const Error& e) {
        fail(step, std::string("step failed: ") + e.what());
        break;
      }
    }
    for (auto& [name, a] : actors_) a.client->close();
    server_.stop();
    log_ << (report_.passed ? "PASS" : "FAIL") << " (" << report_.steps_run << " steps)\n";
    return report_;
  }

 private:
  void fail(const ScriptStep& step, const std::string& detail) {
    report_.passed = false;
    std::string msg = "line " + std::to_string(step.line) + ": " + step.source + "\n  " + detail;
    report_.failures.push_back(msg);
    log_ << msg << "\n";
  }

  const json& labelled(const ScriptStep& step, const std::string& ref) {
    if (!ref.starts_with("@")) fail_at(step.line, "expected a @label, got '" + ref + "'");
    auto it = labels_.find(ref.substr(1));
    if (it == labels_.end()) fail_at(step.line, "no earlier step is labelled " + ref);
    return it->second;
  }

  void keep(const ScriptStep& step, json value) {
    if (step.label) labels_[*step.label] = std::move(value);
  }

  json checked(const Envelope& reply, const ScriptStep& step) {
    if (reply.event == "error") {
      throw Error(ErrorCode::invalid_argument,
                  "server rejected " + step.verb + ": " + reply.payload.value("message", reply.payload.dump()));
    }
    return reply.payload;
  }

  void execute(const ScriptStep& step) {
    Actor& a = actors_.at(step.actor);
    const std::string& v = step.verb;
    if (v == "say") {
      auto p = checked(a.client->request("chat-message", {{"conversation_id", conversation_}, {"text", literal(step.args[0])}}), step);
      log_ << "line " << step.line << ": " << step.actor << " said record " << p["record"]["record_id"] << "\n";
      keep(step, p["record"]);
    } else if (v == "send" || v == "action_only" || v == "select") {
      json payload{{"conversation_id", conversation_}, {"persist", v != "action_only"}};
      std::size_t i = 0;
      if (v == "select") {
        payload["recommendation_id"] = labelled(step, step.args[0]).at("recommendation_id");
        i = 1;
      }
      payload["action"] = step.args[i++];
      for (; i < step.args.size(); ++i) {
        if (is_literal(step.args[i])) {
          payload["micronarrative"] = literal(step.args[i]);
        } else if (step.args[i] == "answers" && i + 1 < step.args.size()) {
          payload["paired_with"] = labelled(step, step.args[++i]).at("record_id");
        } else {
          fail_at(step.line, "unexpected argument '" + step.args[i] + "'");
        }
      }
      auto p = checked(a.client->request("puppet-action", payload), step);
      const auto& rec = p["record"];
      log_ << "line " << step.line << ": " << step.actor << " " << v << " " << payload["action"].get<std::string>()
           << " -> record " << rec["record_id"] << " (" << rec["kind"].get<std::string>() << ")\n";
      keep(step, rec);
    } else if (v == "recommend") {
      json payload{{"conversation_id", conversation_}, {"seed", script_.seed}};
      if (!step.args.empty()) payload["draft_text"] = literal(step.args[1]);
      auto p = checked(a.client->request("recommend-request", payload), step);
      std::vector<std::string> ids;
      for (const auto& item : p["items"]) ids.push_back(item["action_id"]);
      log_ << "line " << step.line << ": " << step.actor << " recommended";
      for (const auto& id : ids) log_ << " " << id;
      log_ << "\n";
      keep(step, p);
    } else if (v == "narrate") {
      json body{{"action_id", step.args[0]}, {"conversation_id", conversation_}};
      if (step.args.size() == 3) {
        json tags = json::array();
        std::stringstream ss(step.args[2]);
        std::string t;
        while (std::getline(ss, t, ',')) {
          if (!t.empty()) tags.push_back(t);
        }
        body["tags"] = tags;
      }
      auto res = http_call("127.0.0.1", server_.port(), "POST", "/narrate", body, a.token);
      if (res.status != 200) throw Error(ErrorCode::invalid_argument, "narrate failed: " + res.body.dump());
      log_ << "line " << step.line << ": " << step.actor << " narrated \"" << res.body["text"].get<std::string>() << "\"\n";
      keep(step, res.body);
    } else if (v == "story") {
      checked(a.client->request("emn-update", {{"story", literal(step.args[0])}}), step);
    } else if (v == "wait") {
      std::this_thread::sleep_for(std::chrono::milliseconds(parse_number(step.args[0], step.line, "wait")));
    } else if (v == "assert") {
      assert_step(step, a);
    }
  }

  std::vector<std::string> history_ids(const Actor& a) {
    auto res = http_call("127.0.0.1", server_.port(), "GET", "/history?conversation_id=" + conversation_ + "&size=1000",
                         nullptr, a.token);
    if (res.status != 200) throw Error(ErrorCode::invalid_argument, "history failed: " + res.body.dump());
    std::vector<std::string> out;
    for (const auto& r : res.body["records"]) out.push_back(std::to_string(r["record_id"].get<RecordId>()));
    return out;
  }

  static std::string join(const std::vector<std::string>& v) {
    std::string s = "[";
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? ", " : "") + v[i];
    return s + "]";
  }

  void assert_step(const ScriptStep& step, Actor& a) {
    const auto& args = step.args;
    const std::string& subject = args[0];
    const std::string& pred = args[1];
    auto arity = [&](std::size_t n) {
      if (args.size() != n) fail_at(step.line, "wrong number of arguments for '" + pred + "'");
    };

    if (subject == "history") {
      const auto ids = history_ids(a);
      if (pred == "count") {
        arity(3);
        const auto want = parse_number(args[2], step.line, "count");
        if (ids.size() != want) {
          fail(step, "expected " + std::to_string(want) + " durable records\n  actual:   " +
                         std::to_string(ids.size()) + " " + join(ids));
        }
        return;
      }
      if (pred == "contains" || pred == "excludes") {
        arity(3);
        const json& rec = labelled(step, args[2]);
        const std::string id = std::to_string(rec.at("record_id").get<RecordId>());
        const bool present = std::find(ids.begin(), ids.end(), id) != ids.end();
        if (present != (pred == "contains")) {
          std::string why = pred == "contains" ? "expected record " + id + " in history" : "expected record " + id + " absent from history";
          if (rec.value("kind", "") == "action_only_status") why += " (record " + id + " is an action-only status, which is never kept in history)";
          fail(step, why + "\n  actual:   " + join(ids));
        }
        return;
      }
      fail_at(step.line, "unknown history predicate '" + pred + "'");
    }

    if (subject == "replay") {
      const json& rec = labelled(step, pred);
      if (args.size() < 3) fail_at(step.line, "usage: assert replay @label ok|fails [code]");
      const std::string id = std::to_string(rec.at("record_id").get<RecordId>());
      auto res = http_call("127.0.0.1", server_.port(), "GET", "/replay?record_id=" + id, nullptr, a.token);
      const std::string outcome = res.status == 200 ? "ok" : res.body.value("code", "error");
      if (args[2] == "ok") {
        if (res.status != 200) fail(step, "expected replay of record " + id + " to succeed\n  actual:   " + res.body.dump());
        else if (rec.contains("action_id") && res.body["action_id"] != rec["action_id"]) fail(step, "replayed a different action: " + res.body.dump());
      } else if (args[2] == "fails") {
        if (res.status == 200) {
          fail(step, "expected replay of record " + id + " to fail\n  actual:   " + res.body.dump());
        } else if (args.size() == 4 && outcome != args[3]) {
          fail(step, "expected error " + args[3] + "\n  actual:   " + outcome);
        }
      } else {
        fail_at(step.line, "replay outcome must be ok or fails");
      }
      return;
    }

    if (subject == "received") {
      arity(2);
      const json& rec = labelled(step, pred);
      const auto id = rec.at("record_id").get<RecordId>();
      auto got = a.client->wait_for(
          [&](const Envelope& e) {
            return e.payload.contains("record") && e.payload["record"].value("record_id", RecordId{0}) == id;
          },
          std::chrono::seconds(2));
      if (!got) fail(step, "expected " + a.user_id + " to receive record " + std::to_string(id) + " live");
      return;
    }

    const json& value = labelled(step, subject);
    if (pred == "contains" || pred == "excludes" || pred == "top") {
      arity(3);
      if (!value.contains("items")) fail_at(step.line, subject + " is not a recommendation");
      std::vector<std::string> ids;
      for (const auto& item : value["items"]) ids.push_back(item["action_id"]);
      const bool in = std::find(ids.begin(), ids.end(), args[2]) != ids.end();
      if (pred == "contains" && !in) fail(step, "expected " + args[2] + " in the top 4\n  actual:   " + join(ids));
      if (pred == "excludes" && in) fail(step, "expected " + args[2] + " outside the top 4\n  actual:   " + join(ids));
      if (pred == "top" && (ids.empty() || ids[0] != args[2])) fail(step, "expected " + args[2] + " first\n  actual:   " + join(ids));
      return;
    }
    if (pred == "state") {
      arity(3);
      const auto got = value.value("conversation_state", "");
      if (got != args[2]) fail(step, "expected state " + args[2] + "\n  actual:   " + got);
      return;
    }
    if (pred == "mentions") {
      arity(3);
      std::string text = value.contains("text") ? value["text"].get<std::string>()
                         : value.contains("micronarrative") ? value["micronarrative"]["text"].get<std::string>()
                                                            : "";
      if (lower(text).find(lower(literal(args[2]))) == std::string::npos) {
        fail(step, "expected the caption to mention '" + literal(args[2]) + "'\n  actual:   \"" + text + "\"");
      }
      return;
    }
    if (pred == "kind") {
      arity(3);
      if (value.value("kind", "") != args[2]) fail(step, "expected kind " + args[2] + "\n  actual:   " + value.value("kind", ""));
      return;
    }
    fail_at(step.line, "unknown predicate '" + pred + "'");
  }

  const Script& script_;
  Service service_;
  Server server_;
  std::ostream& log_;
  std::map<std::string, Actor> actors_;
  std::map<std::string, json> labels_;
  std::string conversation_;
  ScriptReport report_;
};

}  // namespace

ScriptReport run_script(const Script& script, ServiceConfig config, std::ostream& log) {
  config.provider = ProviderConfig{};  // scripted sessions never leave the machine
  if (script.ttl_ms) config.ephemeral_ttl = std::chrono::milliseconds(*script.ttl_ms);
  Runner runner(script, std::move(config), log);
  return runner.run();
}

}  // namespace puppetchat
