// puppetchat: server, library linter, offline recommender/narrator, exporter
// and scripted-session runner.

#include <csignal>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "puppetchat/action_library.hpp"
#include "puppetchat/conversation_store.hpp"
#include "puppetchat/error.hpp"
#include "puppetchat/gateway.hpp"
#include "puppetchat/micronarrative.hpp"
#include "puppetchat/protocol.hpp"
#include "puppetchat/recommendation.hpp"
#include "puppetchat/script.hpp"
#include "puppetchat/service.hpp"
#include "puppetchat/text_interpreter.hpp"

using namespace puppetchat;
using nlohmann::json;

namespace {

constexpr int kOk = 0;
constexpr int kFailed = 1;
constexpr int kUsage = 2;

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::invalid_argument, "cannot read " + path, path);
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

ActionLibrary load_library(const std::string& path) {
  return path.empty() ? canonical_library() : ActionLibrary::load_file(path);
}

int cmd_serve(const std::string& config_path, const std::string& listen, const std::string& data_dir) {
  GatewayConfig config = config_path.empty() ? GatewayConfig{} : GatewayConfig::load(config_path);
  config.apply_env();
  if (!listen.empty()) {
    const auto parsed = GatewayConfig::from_json(json{{"listen", listen}});
    config.address = parsed.address;
    config.port = parsed.port;
  }
  if (!data_dir.empty()) config.service.data_dir = data_dir;
  config.validate();

  sigset_t signals;
  sigemptyset(&signals);
  sigaddset(&signals, SIGINT);
  sigaddset(&signals, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &signals, nullptr);  // workers inherit the mask

  Service service(config.service);
  Server server(service, config.address, config.port, config.threads);
  server.start();
  std::cout << "listening on " << config.address << ":" << server.port() << " (provider "
            << service.interpreter().provider().id() << ", " << service.library()->size() << " actions)"
            << std::endl;
  int sig = 0;
  sigwait(&signals, &sig);
  std::cout << "shutting down" << std::endl;
  server.stop();
  return kOk;
}

int cmd_lint(const std::string& file, bool as_json) {
  json doc;
  try {
    doc = json::parse(read_file(file));
  } catch (const json::parse_error& e) {
    if (as_json) {
      std::cout << json{{"ok", false}, {"issues", {{{"action_id", ""}, {"message", e.what()}}}}}.dump() << "\n";
    } else {
      std::cout << file << ": not valid JSON: " << e.what() << "\n";
    }
    return kFailed;
  }
  const auto issues = ActionLibrary::lint(doc);
  std::vector<std::string> missing;
  std::size_t count = 0;
  if (issues.empty()) {
    const auto lib = ActionLibrary::from_json(doc);
    count = lib.size();
    missing = missing_reference_actions(lib);
  }
  if (as_json) {
    json out{{"ok", issues.empty()}, {"action_count", count}, {"issues", json::array()},
             {"missing_reference_actions", missing}};
    for (const auto& i : issues) out["issues"].push_back({{"action_id", i.action_id}, {"message", i.message}});
    std::cout << out.dump() << "\n";
  } else if (issues.empty()) {
    std::cout << file << ": ok, " << count << " actions";
    if (missing.empty()) {
      std::cout << ", all " << std::size(kReferenceActions) << " reference actions present\n";
    } else {
      std::cout << ", missing reference actions:";
      for (const auto& m : missing) std::cout << " " << m;
      std::cout << "\n";
    }
  } else {
    for (const auto& i : issues) {
      std::cout << file << ": " << (i.action_id.empty() ? "" : i.action_id + ": ") << i.message << "\n";
    }
  }
  return issues.empty() ? kOk : kFailed;
}

int cmd_embed(const std::string& file, const std::string& out_path) {
  const ActionLibrary lib = load_library(file);
  const auto interp = TextInterpreter::from_config(ProviderConfig::from_env(), lib.embedding_dimension());
  std::map<std::string, Embedding> vectors;
  for (const auto& [id, a] : lib.actions()) vectors[id] = interp.embed(action_embedding_text(a));
  const auto next = lib.with_embeddings(std::string(interp.provider().id()), vectors);
  if (out_path.empty() || out_path == "-") {
    std::cout << next.serialize() << "\n";
  } else {
    std::ofstream out(out_path);
    out << next.serialize() << "\n";
    if (!out) throw Error(ErrorCode::storage, "cannot write " + out_path, out_path);
  }
  return kOk;
}

struct RecommendArgs {
  std::string text;
  bool has_text = false;
  std::string partner_last;
  std::string state;
  std::string user = "cli";
  std::uint64_t seed = 0;
  bool no_noise = false;
  std::string library;
  std::string preferences;
  std::string format = "table";
  bool offline = false;
};

int cmd_recommend(const RecommendArgs& a) {
  const ActionLibrary lib = load_library(a.library);
  ProviderConfig pc = a.offline ? ProviderConfig{} : ProviderConfig::from_env();
  const auto interp = TextInterpreter::from_config(pc, lib.embedding_dimension());
  PreferenceStore prefs = a.preferences.empty() ? PreferenceStore() : PreferenceStore(a.preferences);

  RecommendationContext ctx;
  ctx.user_id = a.user;
  ctx.seed = a.seed;
  if (a.has_text) ctx.draft_text = a.text;
  if (!a.partner_last.empty()) {
    ctx.partner_last_action = a.partner_last;
    ctx.conversation_state = ConversationState::partner_acted_last;
  }
  if (!a.state.empty()) {
    auto s = parse_conversation_state(a.state);
    if (!s) throw Error(ErrorCode::invalid_argument, "unknown conversation state '" + a.state + "'", a.state);
    ctx.conversation_state = *s;
  }
  Weights w;
  if (a.no_noise) w.noise_amplitude = 0.0;
  const Recommendation rec = recommend_detailed(ctx, lib, w, prefs, interp);

  if (a.format == "json") {
    json items = json::array();
    for (const auto& b : rec.top) items.push_back(breakdown_to_json(b));
    std::cout << json{{"seed", a.seed}, {"degraded", rec.degraded}, {"items", items}}.dump() << "\n";
    return kOk;
  }
  std::cout << std::left << std::setw(5) << "rank" << std::setw(20) << "action" << std::right << std::setw(9)
            << "s_text" << std::setw(9) << "s_ctx" << std::setw(9) << "pref" << std::setw(9) << "noise"
            << std::setw(10) << "total" << "\n";
  int rank = 1;
  for (const auto& b : rec.top) {
    std::cout << std::left << std::setw(5) << rank++ << std::setw(20) << b.action_id << std::right << std::fixed
              << std::setprecision(4) << std::setw(9) << b.s_text << std::setw(9) << b.s_ctx << std::setw(9)
              << b.preference << std::setw(9) << b.noise << std::setw(10) << b.total << "\n";
  }
  if (rec.degraded) std::cout << "(provider unavailable: offline analysis used)\n";
  return kOk;
}

int cmd_narrate(const std::string& action_id, const std::string& story_file, const std::string& tags_csv,
                bool offline, const std::string& library, bool as_json) {
  const ActionLibrary lib = load_library(library);
  const Action& action = lib.at(action_id);
  PersonalStory story;
  story.user_id = "cli";
  if (!story_file.empty()) {
    story.text = read_file(story_file);
    while (!story.text.empty() && (story.text.back() == '\n' || story.text.back() == '\r')) story.text.pop_back();
    if (utf8_length(story.text) > kMaxStoryLength) {
      throw Error(ErrorCode::invalid_argument, "personal story exceeds 1000 characters", story_file);
    }
    story.version = 1;
  }
  std::vector<std::string> tags;
  std::stringstream ss(tags_csv);
  for (std::string t; std::getline(ss, t, ',');) {
    if (!t.empty()) tags.push_back(t);
  }
  ProviderConfig pc = offline ? ProviderConfig{} : ProviderConfig::from_env();
  const auto interp = TextInterpreter::from_config(pc, lib.embedding_dimension());
  NarrativeEngine engine(interp.provider_ptr());
  const Micronarrative m = engine.generate(action, story, {}, tags, &lib);
  if (as_json) {
    std::cout << micronarrative_to_json(m).dump() << "\n";
  } else {
    std::cout << m.text << "\n";
  }
  return kOk;
}

int cmd_export(const std::string& conversation_id, const std::string& data_dir) {
  ConversationStore::Options opts;
  opts.data_dir = data_dir;
  opts.fsync = false;
  if (!std::filesystem::exists(data_dir)) throw Error(ErrorCode::not_found, "no data directory " + data_dir, data_dir);
  ConversationStore store(opts);
  for (const auto& r : store.export_thread(conversation_id)) std::cout << record_to_json(r).dump() << "\n";
  return kOk;
}

int cmd_run_script(const std::string& file, bool quiet) {
  const Script script = parse_script(read_file(file));
  std::ostringstream sink;
  std::ostream& log = quiet ? static_cast<std::ostream&>(sink) : std::cout;
  const ScriptReport report = run_script(script, ServiceConfig{}, log);
  if (quiet && !report.passed) {
    for (const auto& f : report.failures) std::cout << f << "\n";
  }
  if (quiet) std::cout << (report.passed ? "PASS" : "FAIL") << " (" << report.steps_run << " steps)\n";
  return report.passed ? kOk : kFailed;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"PuppetChat dyadic expressive messaging service"};
  app.require_subcommand(1);

  std::string config_path, listen, data_dir;
  auto* serve = app.add_subcommand("serve", "Run the gateway (HTTP and WebSocket on one port)");
  serve->add_option("--config", config_path, "JSON config file")->check(CLI::ExistingFile);
  serve->add_option("--listen", listen, "host:port, overrides the config");
  serve->add_option("--data-dir", data_dir, "directory for durable state");

  auto* library = app.add_subcommand("library", "Action library tools");
  library->require_subcommand(1);
  std::string lint_file;
  bool lint_json = false;
  auto* lint = library->add_subcommand("lint", "Validate a library document");
  lint->add_option("file", lint_file, "library JSON")->required();
  lint->add_flag("--json", lint_json, "structured output");
  std::string embed_file, embed_out;
  auto* embed = library->add_subcommand("embed", "Store provider embeddings in a library document");
  embed->add_option("file", embed_file, "library JSON")->required();
  embed->add_option("-o,--output", embed_out, "output file (default stdout)");

  RecommendArgs ra;
  auto* recommend = app.add_subcommand("recommend", "Score the library and print the top four");
  recommend->add_option("--text", ra.text, "draft message");
  recommend->add_option("--partner-last", ra.partner_last, "partner's last action id");
  recommend->add_option("--state", ra.state, "opening|partner_acted_last|self_acted_last|idle");
  recommend->add_option("--seed", ra.seed, "noise seed");
  recommend->add_flag("--no-noise", ra.no_noise, "noise amplitude 0");
  recommend->add_option("--user", ra.user, "user id for preferences");
  recommend->add_option("--preferences", ra.preferences, "preference log (JSON lines)");
  recommend->add_option("--library", ra.library, "library JSON (default: canonical)");
  recommend->add_option("--format", ra.format, "table or json")->check(CLI::IsMember({"table", "json"}));
  recommend->add_flag("--offline", ra.offline, "force the offline provider");

  std::string n_action, n_story, n_tags, n_library;
  bool n_offline = false, n_json = false;
  auto* narrate = app.add_subcommand("narrate", "Generate a micronarrative caption");
  narrate->add_option("--action", n_action, "action id")->required();
  narrate->add_option("--story-file", n_story, "personal story text file")->check(CLI::ExistingFile);
  narrate->add_option("--tags", n_tags, "comma-separated tags");
  narrate->add_flag("--offline", n_offline, "force the offline template");
  narrate->add_option("--library", n_library, "library JSON (default: canonical)");
  narrate->add_flag("--json", n_json, "print the full micronarrative");

  std::string e_conv, e_dir = "data";
  auto* exp = app.add_subcommand("export", "Dump a conversation's durable thread as JSON lines");
  exp->add_option("conversation_id", e_conv, "conversation id")->required();
  exp->add_option("--data-dir", e_dir, "server data directory");

  std::string s_file;
  bool s_quiet = false;
  auto* run = app.add_subcommand("run-script", "Run a scripted dyad session against an in-process server");
  run->add_option("file", s_file, "script file")->required();
  run->add_flag("-q,--quiet", s_quiet, "print only failures and the verdict");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kUsage;
  }

  try {
    if (*serve) return cmd_serve(config_path, listen, data_dir);
    if (*lint) return cmd_lint(lint_file, lint_json);
    if (*embed) return cmd_embed(embed_file, embed_out);
    if (*recommend) {
      ra.has_text = recommend->count("--text") > 0;
      return cmd_recommend(ra);
    }
    if (*narrate) return cmd_narrate(n_action, n_story, n_tags, n_offline, n_library, n_json);
    if (*exp) return cmd_export(e_conv, e_dir);
    if (*run) return cmd_run_script(s_file, s_quiet);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.code() == ErrorCode::configuration ? kUsage : kFailed;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kFailed;
  }
  return kUsage;
}
