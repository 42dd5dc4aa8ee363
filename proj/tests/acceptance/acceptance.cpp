// Acceptance checks: one PASS/FAIL line per criterion, exit status 1 if any fail.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "oracle.hpp"
#include "puppetchat/action_library.hpp"
#include "puppetchat/error.hpp"
#include "puppetchat/gateway.hpp"
#include "puppetchat/micronarrative.hpp"
#include "puppetchat/recommendation.hpp"
#include "puppetchat/script.hpp"
#include "support.hpp"

using namespace puppetchat;
using nlohmann::json;
using Steady = std::chrono::steady_clock;

namespace {

// Pinned tolerances and bounds.
constexpr double kDecompositionTolerance = 1e-9;
constexpr double kWorkedArithmeticBudgetS = 1.0;
constexpr double kReactionCaseBudgetS = 1.0;
constexpr double kLatencyP95BudgetMs = 200.0;
constexpr double kProtocolBudgetS = 120.0;
constexpr int kRandomCases = 1000;
constexpr std::size_t kMaxRandomActions = 50;
constexpr int kDyads = 10;
constexpr int kEventsPerDyad = 100;

struct Outcome {
  bool ok = true;
  std::string detail;

  void require(bool cond, const std::string& what) {
    if (!cond && ok) {
      ok = false;
      detail = what;
    }
  }
};

double seconds_since(Steady::time_point t0) {
  return std::chrono::duration<double>(Steady::now() - t0).count();
}

const TextInterpreter& interp() {
  static const TextInterpreter t = TextInterpreter::offline(canonical_library().embedding_dimension());
  return t;
}

Weights quiet() {
  Weights w;
  w.noise_amplitude = 0.0;
  return w;
}

// ---------------------------------------------------------------------------

Outcome worked_arithmetic() {
  Outcome o;
  const auto t0 = Steady::now();
  const auto& lib = canonical_library();
  const auto& heart = lib.at("throw-heart");
  const EmbeddingLookup lookup = [&](const Action& a) { return interp().action_embedding(a, lib); };
  const double love = score_text(interp().analyze("I love you"), heart, lookup);
  const double not_love = score_text(interp().analyze("I don't love you"), heart, lookup);
  const double elapsed = seconds_since(t0);
  o.require(love == 5.0, "score_text(\"I love you\") = " + std::to_string(love));
  o.require(not_love == -1.0, "score_text(\"I don't love you\") = " + std::to_string(not_love));
  o.require(elapsed < kWorkedArithmeticBudgetS, "took " + std::to_string(elapsed) + " s");
  if (o.ok) {
    std::ostringstream d;
    d << "5 and -1 exactly, " << elapsed * 1000 << " ms";
    o.detail = d.str();
  }
  return o;
}

Outcome reaction_dominance() {
  Outcome o;
  const auto& lib = canonical_library();
  const std::vector<std::pair<std::string, std::vector<std::string>>> pairings{
      {"throw-heart", {"catch-heart", "carry-heart"}},
      {"hit-with-object", {"agony"}},
      {"cry", {"wipe-others-tears"}}};
  double worst = 0;
  for (const auto& [partner, listed] : pairings) {
    const auto t0 = Steady::now();
    RecommendationContext ctx;
    ctx.user_id = "tester";
    ctx.partner_last_action = partner;
    ctx.conversation_state = ConversationState::partner_acted_last;
    PreferenceStore fresh;
    auto engine = pctest::ids_of(recommend(ctx, lib, quiet(), fresh, interp()));
    auto oracle = pctest::oracle_top(pctest::oracle_rank(ctx, lib, quiet(), fresh, interp()));
    const double elapsed = seconds_since(t0);
    worst = std::max(worst, elapsed);
    const bool hit = std::any_of(listed.begin(), listed.end(), [&](const std::string& id) {
      return std::find(engine.begin(), engine.end(), id) != engine.end();
    });
    o.require(hit, partner + ": no listed candidate in the top 4");
    std::sort(engine.begin(), engine.end());
    std::sort(oracle.begin(), oracle.end());
    o.require(engine == oracle, partner + ": engine top 4 differs from the brute-force oracle");
    o.require(elapsed < kReactionCaseBudgetS, partner + ": took " + std::to_string(elapsed) + " s");
  }
  if (o.ok) o.detail = "3 pairings, oracle sets equal, slowest case " + std::to_string(worst * 1000) + " ms";
  return o;
}

Outcome decomposition() {
  Outcome o;
  std::mt19937_64 gen(0xACCE55);
  double worst = 0;
  for (int i = 0; i < kRandomCases && o.ok; ++i) {
    const auto lib = pctest::random_library(gen, kMaxRandomActions);
    const auto ctx = pctest::random_context(gen, lib);
    PreferenceStore prefs;
    pctest::random_preferences(gen, lib, prefs, ctx.user_id);
    const auto w = pctest::random_weights(gen);
    for (const auto& b : recommend(ctx, lib, w, prefs, interp())) {
      const double err =
          std::abs(b.total - (w.w_text * b.s_text + w.w_ctx * b.s_ctx + w.w_pref * b.preference + b.noise));
      worst = std::max(worst, err);
      o.require(err <= kDecompositionTolerance, "case " + std::to_string(i) + ": total off by " + std::to_string(err));
    }
    auto wq = w;
    wq.noise_amplitude = 0.0;
    const auto engine = pctest::ids_of(recommend(ctx, lib, wq, prefs, interp()));
    const auto oracle = pctest::oracle_top(pctest::oracle_rank(ctx, lib, wq, prefs, interp()));
    o.require(engine == oracle, "case " + std::to_string(i) + ": noise-off ranking differs from the oracle");
  }
  if (o.ok) {
    std::ostringstream d;
    d << kRandomCases << " cases, max |error| " << worst << ", rankings equal";
    o.detail = d.str();
  }
  return o;
}

Outcome preference_monotonicity() {
  Outcome o;
  std::mt19937_64 gen(0xBEEF);
  int cases = 0;
  for (int round = 0; round < 500 && o.ok; ++round, ++cases) {
    const auto lib = pctest::random_library(gen, 30);
    const auto ctx = pctest::random_context(gen, lib);
    Weights w = pctest::random_weights(gen);
    w.noise_amplitude = 0.0;
    PreferenceStore prefs;
    std::vector<std::string> ids;
    for (const auto& [id, a] : lib.actions()) ids.push_back(id);
    std::uniform_int_distribution<std::size_t> pick(0, ids.size() - 1);
    std::uniform_int_distribution<int> steps(1, 40), coin(0, 3);

    const int n = steps(gen);
    for (int s = 0; s < n; ++s) {
      std::vector<std::string> shown;
      for (int k = 0; k < 4; ++k) {
        const auto& id = ids[pick(gen)];
        if (std::find(shown.begin(), shown.end(), id) == shown.end()) shown.push_back(id);
      }
      std::optional<std::string> chosen, hidden;
      if (coin(gen) != 0) chosen = shown.front();
      if (coin(gen) == 0) hidden = shown.back();
      prefs.record_outcome(ctx.user_id, shown, chosen, hidden);
      for (const auto& id : ids) {
        const double v = prefs.value(ctx.user_id, id);
        o.require(v >= -1.0 && v <= 1.0, "preference_value out of range: " + std::to_string(v));
      }
    }

    const auto& target = ids[pick(gen)];
    auto rank = [&](const PreferenceStore& p) {
      const auto r = pctest::oracle_rank(ctx, lib, w, p, interp());
      return std::find_if(r.begin(), r.end(), [&](const auto& s) { return s.id == target; }) - r.begin();
    };
    auto position = [&](const PreferenceStore& p) {
      const auto top = pctest::ids_of(recommend(ctx, lib, w, p, interp()));
      return std::find(top.begin(), top.end(), target) - top.begin();
    };
    PreferenceStore more = prefs;
    more.record_outcome(ctx.user_id, {target}, target, std::nullopt);
    o.require(rank(more) <= rank(prefs), "a selection lowered the rank of " + target);
    o.require(position(more) <= position(prefs), "a selection pushed " + target + " down the top 4");
  }
  if (o.ok) o.detail = std::to_string(cases) + " random outcome sequences, clamp and monotonicity hold";
  return o;
}

Outcome ephemeral_semantics() {
  Outcome o;
  const std::string text =
      "A action_only hug @quick\n"
      "A send hug \"Sending you a warm hug\" @kept\n"
      "B assert received @quick\n"
      "B assert received @kept\n"
      "B assert history count 1\n"
      "B assert history contains @kept\n"
      "B assert history excludes @quick\n"
      "B assert replay @kept ok\n"
      "B assert replay @quick fails ephemeral_record\n";
  std::ostringstream log;
  const auto report = run_script(parse_script(text), ServiceConfig{}, log);
  o.require(report.passed, report.failures.empty() ? "script failed" : report.failures.front());
  if (o.ok) o.detail = "scripted session, " + std::to_string(report.steps_run) + " steps";
  return o;
}

Outcome tags_and_templates() {
  Outcome o;
  const NarrativeEngine engine(std::make_shared<OfflineProvider>(canonical_library().embedding_dimension()));
  const std::vector<std::string> stories{"", "I love my cat and I run marathons on weekends.",
                                         "Night owl, coffee addict, shy at parties but loyal."};
  for (const auto& text : stories) {
    PersonalStory s;
    s.user_id = "tester";
    s.text = text;
    s.version = text.empty() ? 0 : 1;
    const auto a = engine.propose_tags(s);
    for (auto c : kTagCategories) {
      o.require(a.category(c).size() == kTagsPerCategory,
                std::string(to_string(c)) + " has " + std::to_string(a.category(c).size()) + " tags");
    }
    o.require(tagset_to_json(engine.propose_tags(s)).dump() == tagset_to_json(a).dump(),
              "repeated propose_tags differs");
  }
  const PersonalStory empty;
  for (const auto& [id, action] : canonical_library().actions()) {
    const auto m = engine.generate(action, empty, {}, {}, &canonical_library());
    o.require(m.text == PhraseTable::canonical().phrase_for(action), id + ": caption is not the neutral template");
    o.require(engine.generate(action, empty, {}, {}, &canonical_library()).text == m.text,
              id + ": caption not deterministic");
  }
  o.require(engine.generate(canonical_library().at("hug"), empty, {}, {}, &canonical_library()).text ==
                "Sending you a warm hug",
            "hug neutral caption changed");
  if (o.ok) o.detail = "4x5 tags, byte-identical repeats, 42 neutral captions exact";
  return o;
}

Outcome protocol_ordering() {
  Outcome o;
  const auto t0 = Steady::now();
  pctest::TempDir dir;
  ServiceConfig config;
  config.data_dir = dir.path();
  Service service(config);
  Server server(service, "127.0.0.1", 0, 4);
  server.start();
  const auto port = server.port();

  struct Member {
    std::string user;
    std::unique_ptr<GatewayClient> client;
    std::map<std::string, Steady::time_point> sent;  // request_id -> send time
  };
  struct Dyad {
    std::string conv;
    Member a, b;
  };
  std::vector<Dyad> dyads(kDyads);
  for (int i = 0; i < kDyads; ++i) {
    auto& d = dyads[static_cast<std::size_t>(i)];
    d.a.user = "a" + std::to_string(i);
    d.b.user = "b" + std::to_string(i);
    std::map<std::string, std::string> tokens;
    for (Member* m : {&d.a, &d.b}) {
      tokens[m->user] = http_call("127.0.0.1", port, "POST", "/login", json{{"user_id", m->user}}).body["token"];
    }
    d.conv = service.store().add_contact(d.a.user, d.b.user, RelationshipIcon{}).second.conversation_id;
    for (Member* m : {&d.a, &d.b}) {
      m->client = std::make_unique<GatewayClient>("127.0.0.1", port);
      m->client->connect();
      m->client->request("auth", json{{"token", tokens[m->user]}});
    }
  }

  // Each member sends half of the dyad's events: text, sent actions and statuses.
  std::vector<std::thread> senders;
  for (auto& d : dyads) {
    for (Member* m : {&d.a, &d.b}) {
      senders.emplace_back([&d, m] {
        for (int k = 0; k < kEventsPerDyad / 2; ++k) {
          const std::string rid = m->user + "-" + std::to_string(k);
          json payload;
          std::string event;
          switch (k % 3) {
            case 0:
              event = "chat-message";
              payload = {{"conversation_id", d.conv}, {"text", "message " + std::to_string(k)}};
              break;
            case 1:
              event = "puppet-action";
              payload = {{"conversation_id", d.conv}, {"action", "hug"}, {"persist", true}};
              break;
            default:
              event = "puppet-action";
              payload = {{"conversation_id", d.conv}, {"action", "wave-hello"}, {"persist", false}};
          }
          m->sent[rid] = m->client->send(event, rid, payload);
          std::this_thread::sleep_for(std::chrono::milliseconds(5));
        }
      });
    }
  }
  for (auto& t : senders) t.join();

  std::vector<double> latencies;
  auto is_record = [](const Envelope& e) { return e.event == "chat-message" || e.event == "puppet-action"; };
  for (auto& d : dyads) {
    std::vector<std::vector<RecordId>> seen(2);
    std::vector<std::vector<RecordId>> seen_durable(2);
    int side = 0;
    for (Member* m : {&d.a, &d.b}) {
      Member* other = m == &d.a ? &d.b : &d.a;
      while (seen[static_cast<std::size_t>(side)].size() < static_cast<std::size_t>(kEventsPerDyad)) {
        auto got = m->client->wait_for(is_record, std::chrono::seconds(10));
        if (!got) break;
        const auto& p = got->envelope.payload;
        const RecordId id = p["record"]["record_id"];
        seen[static_cast<std::size_t>(side)].push_back(id);
        if (!p["ephemeral"].get<bool>()) seen_durable[static_cast<std::size_t>(side)].push_back(id);
        if (auto it = other->sent.find(got->envelope.request_id); it != other->sent.end()) {
          latencies.push_back(std::chrono::duration<double, std::milli>(got->at - it->second).count());
        }
      }
      ++side;
    }
    o.require(seen[0].size() == static_cast<std::size_t>(kEventsPerDyad),
              d.conv + ": " + d.a.user + " observed " + std::to_string(seen[0].size()) + " events");
    o.require(seen[0] == seen[1], d.conv + ": members observed different orders");
    std::vector<RecordId> durable;
    for (const auto& r : service.store().export_thread(d.conv)) durable.push_back(r.record_id);
    o.require(seen_durable[0] == durable, d.conv + ": observed order differs from durable order");
  }
  for (auto& d : dyads) {
    d.a.client->close();
    d.b.client->close();
  }
  server.stop();

  std::sort(latencies.begin(), latencies.end());
  const double p95 =
      latencies.empty() ? 1e9 : latencies[std::min(latencies.size() - 1, latencies.size() * 95 / 100)];
  const double elapsed = seconds_since(t0);
  o.require(latencies.size() == static_cast<std::size_t>(kDyads * kEventsPerDyad),
            "measured " + std::to_string(latencies.size()) + " deliveries");
  o.require(p95 <= kLatencyP95BudgetMs, "p95 delivery latency " + std::to_string(p95) + " ms");
  o.require(elapsed < kProtocolBudgetS, "took " + std::to_string(elapsed) + " s");
  std::ostringstream d;
  d << kDyads << " dyads x " << kEventsPerDyad << " events, p95 " << p95 << " ms, max " << latencies.back()
    << " ms, " << elapsed << " s";
  if (o.ok) o.detail = d.str();
  return o;
}

Outcome library_lint() {
  Outcome o;
  const json doc = json::parse(canonical_library_document());
  const auto lib = ActionLibrary::from_json(doc);
  o.require(ActionLibrary::lint(doc).empty(), "canonical library has lint findings");
  o.require(lib.size() == 42, "canonical library has " + std::to_string(lib.size()) + " actions");
  o.require(missing_reference_actions(lib).empty(), "reference actions missing");

  auto index_of = [&](const json& d, const std::string& id) {
    for (std::size_t i = 0; i < d["actions"].size(); ++i) {
      if (d["actions"][i]["id"] == id) return i;
    }
    return std::size_t{0};
  };
  auto named = [](const json& d, const std::string& id, const std::string& token) {
    for (const auto& issue : ActionLibrary::lint(d)) {
      if (issue.action_id == id && issue.message.find(token) != std::string::npos) return true;
    }
    return false;
  };

  json dup = doc;
  dup["actions"].push_back(dup["actions"][index_of(doc, "hug")]);
  o.require(named(dup, "hug", "duplicate"), "duplicate id not reported against hug");

  json dangling = doc;
  dangling["actions"][index_of(doc, "cry")]["reaction_candidates"].push_back("ghost-action");
  o.require(named(dangling, "cry", "ghost-action"), "dangling candidate not reported against cry");

  json bad_enum = doc;
  bad_enum["actions"][index_of(doc, "agony")]["emotion"] = "furious";
  o.require(named(bad_enum, "agony", "furious"), "bad emotion not reported against agony");

  json bad_role = doc;
  bad_role["actions"][index_of(doc, "vomit")]["interaction_role"] = "bystander";
  o.require(named(bad_role, "vomit", "bystander"), "bad interaction_role not reported against vomit");

  if (o.ok) o.detail = "42 actions, 17 reference actions present, 4 seeded defects named";
  return o;
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"worked-arithmetic", worked_arithmetic},
      {"reaction-dominance", reaction_dominance},
      {"weighted-sum-decomposition", decomposition},
      {"preference-clamp-monotonicity", preference_monotonicity},
      {"ephemeral-persistent-semantics", ephemeral_semantics},
      {"tag-cardinality-offline-determinism", tags_and_templates},
      {"protocol-ordering-latency", protocol_ordering},
      {"library-lint", library_lint},
  };
  int failed = 0;
  for (const auto& [name, check] : criteria) {
    Outcome o;
    try {
      o = check();
    } catch (const std::exception& e) {
      o.ok = false;
      o.detail = std::string("exception: ") + e.what();
    }
    if (!o.ok) ++failed;
    std::cout << (o.ok ? "PASS " : "FAIL ") << name << ": " << o.detail << std::endl;
  }
  std::cout << (criteria.size() - static_cast<std::size_t>(failed)) << "/" << criteria.size() << " criteria passed"
            << std::endl;
  return failed == 0 ? 0 : 1;
}
