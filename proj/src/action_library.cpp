#include "puppetchat/action_library.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <regex>
#include <set>
#include <sstream>

#include "puppetchat/error.hpp"

namespace puppetchat {

using nlohmann::json;

std::string_view to_string(Polarity p) {
  switch (p) {
    case Polarity::positive: return "positive";
    case Polarity::negative: return "negative";
    case Polarity::neutral: return "neutral";
  }
  return "neutral";
}

std::string_view to_string(InteractionRole r) {
  return r == InteractionRole::responsive ? "responsive" : "self_oriented";
}

std::optional<Polarity> parse_polarity(std::string_view s) {
  if (s == "positive") return Polarity::positive;
  if (s == "negative") return Polarity::negative;
  if (s == "neutral") return Polarity::neutral;
  return std::nullopt;
}

std::optional<InteractionRole> parse_role(std::string_view s) {
  if (s == "self_oriented") return InteractionRole::self_oriented;
  if (s == "responsive") return InteractionRole::responsive;
  return std::nullopt;
}

namespace {

constexpr double kNormTolerance = 1e-6;

bool is_kebab_id(const std::string& id) {
  static const std::regex pattern("^[a-z0-9]+(-[a-z0-9]+)*$");
  return std::regex_match(id, pattern);
}

bool is_lowercase_term(const std::string& term) {
  if (term.empty()) return false;
  return std::none_of(term.begin(), term.end(),
                      [](unsigned char c) { return std::isupper(c) || std::isspace(c); });
}

std::string id_of(const json& a) {
  if (a.is_object() && a.contains("id") && a["id"].is_string()) return a["id"].get<std::string>();
  return {};
}

// Field-level checks for one action entry; graph checks happen afterwards.
void lint_action(const json& a, int dimension, std::vector<LibraryIssue>& out) {
  const std::string id = id_of(a);
  auto issue = [&](std::string msg) { out.push_back({id, std::move(msg)}); };

  if (!a.is_object()) {
    issue("action entry must be an object");
    return;
  }
  if (id.empty()) {
    issue("action is missing a string id");
  } else if (!is_kebab_id(id)) {
    issue("action id '" + id + "' is not a lowercase-kebab token");
  }
  for (const char* field : {"name", "description"}) {
    if (!a.contains(field) || !a[field].is_string() || a[field].get<std::string>().empty()) {
      issue("action '" + id + "' needs a nonempty " + field);
    }
  }
  if (!a.contains("keywords") || !a["keywords"].is_array()) {
    issue("action '" + id + "' needs a keywords array");
  } else {
    std::set<std::string> seen;
    for (const auto& k : a["keywords"]) {
      if (!k.is_string() || !is_lowercase_term(k.get<std::string>())) {
        issue("action '" + id + "' has a keyword that is not a lowercase term");
      } else if (!seen.insert(k.get<std::string>()).second) {
        issue("action '" + id + "' repeats keyword '" + k.get<std::string>() + "'");
      }
    }
  }
  if (!a.contains("emotion") || !a["emotion"].is_string() ||
      !parse_polarity(a["emotion"].get<std::string>())) {
    issue("action '" + id + "' has unknown emotion value " +
          (a.contains("emotion") ? a["emotion"].dump() : std::string("(missing)")));
  }
  if (!a.contains("interaction_role") || !a["interaction_role"].is_string() ||
      !parse_role(a["interaction_role"].get<std::string>())) {
    issue("action '" + id + "' has unknown interaction_role value " +
          (a.contains("interaction_role") ? a["interaction_role"].dump()
                                          : std::string("(missing)")));
  }
  if (a.contains("embedding") && !a["embedding"].is_null()) {
    const auto& e = a["embedding"];
    if (!e.is_array() || std::any_of(e.begin(), e.end(), [](const json& v) { return !v.is_number(); })) {
      issue("action '" + id + "' embedding must be an array of numbers");
    } else if (static_cast<int>(e.size()) != dimension) {
      issue("action '" + id + "' embedding has dimension " + std::to_string(e.size()) +
            ", library declares " + std::to_string(dimension));
    } else {
      double sq = 0.0;
      for (const auto& v : e) sq += v.get<double>() * v.get<double>();
      if (std::abs(std::sqrt(sq) - 1.0) > kNormTolerance) {
        issue("action '" + id + "' embedding is not unit-norm");
      }
    }
  }
  if (a.contains("reaction_candidates")) {
    const auto& rc = a["reaction_candidates"];
    if (!rc.is_array() ||
        std::any_of(rc.begin(), rc.end(), [](const json& v) { return !v.is_string(); })) {
      issue("action '" + id + "' reaction_candidates must be an array of ids");
    }
  }
}

}  // namespace

std::vector<LibraryIssue> ActionLibrary::lint(const json& doc) {
  std::vector<LibraryIssue> out;
  if (!doc.is_object()) {
    out.push_back({"", "library document must be an object"});
    return out;
  }
  if (!doc.contains("actions") || !doc["actions"].is_array() || doc["actions"].empty()) {
    out.push_back({"", "library must contain at least one action"});
    return out;
  }
  if (!doc.contains("version") || !doc["version"].is_number_integer() ||
      doc["version"].get<std::int64_t>() < 1) {
    out.push_back({"", "library version must be a positive integer"});
  }
  int dimension = 0;
  if (!doc.contains("embedding_dimension") || !doc["embedding_dimension"].is_number_integer() ||
      (dimension = doc["embedding_dimension"].get<int>()) <= 0) {
    out.push_back({"", "embedding_dimension must be a positive integer"});
  }
  if (doc.contains("embedding_provider") && !doc["embedding_provider"].is_string()) {
    out.push_back({"", "embedding_provider must be a string"});
  }

  const auto& actions = doc["actions"];
  if (doc.contains("action_count") &&
      (!doc["action_count"].is_number_integer() ||
       doc["action_count"].get<std::size_t>() != actions.size())) {
    out.push_back({"", "library declares action_count " + doc["action_count"].dump() +
                           " but contains " + std::to_string(actions.size()) + " actions"});
  }

  std::set<std::string> ids;
  for (const auto& a : actions) {
    lint_action(a, dimension, out);
    const std::string id = id_of(a);
    if (!id.empty() && !ids.insert(id).second) {
      out.push_back({id, "duplicate action id '" + id + "'"});
    }
  }
  for (const auto& a : actions) {
    const std::string id = id_of(a);
    if (!a.is_object() || !a.contains("reaction_candidates") || !a["reaction_candidates"].is_array()) continue;
    for (const auto& c : a["reaction_candidates"]) {
      if (!c.is_string()) continue;
      const auto target = c.get<std::string>();
      if (target == id) {
        out.push_back({id, "action '" + id + "' lists itself as a reaction candidate"});
      } else if (!ids.contains(target)) {
        out.push_back({id, "action '" + id + "' lists unknown reaction candidate '" + target + "'"});
      }
    }
  }
  return out;
}

nlohmann::json action_to_json(const Action& a) {
  json j{{"id", a.id},
         {"name", a.name},
         {"description", a.description},
         {"keywords", a.keywords},
         {"emotion", to_string(a.emotion)},
         {"interaction_role", to_string(a.interaction_role)},
         {"reaction_candidates", a.reaction_candidates}};
  if (a.embedding) j["embedding"] = *a.embedding;
  return j;
}

Action action_from_json(const json& j) {
  Action a;
  a.id = j.at("id").get<std::string>();
  a.name = j.at("name").get<std::string>();
  a.description = j.at("description").get<std::string>();
  a.keywords = j.at("keywords").get<std::vector<std::string>>();
  const auto emotion = parse_polarity(j.at("emotion").get<std::string>());
  const auto role = parse_role(j.at("interaction_role").get<std::string>());
  if (!emotion || !role) {
    throw Error(ErrorCode::invalid_library, "action '" + a.id + "' has an unknown enum value", a.id);
  }
  a.emotion = *emotion;
  a.interaction_role = *role;
  if (j.contains("embedding") && !j["embedding"].is_null()) {
    a.embedding = j["embedding"].get<Embedding>();
  }
  if (j.contains("reaction_candidates")) {
    a.reaction_candidates = j["reaction_candidates"].get<std::vector<std::string>>();
  }
  return a;
}

ActionLibrary ActionLibrary::build(const json& doc) {
  ActionLibrary lib;
  lib.version_ = doc.at("version").get<std::int64_t>();
  lib.embedding_dimension_ = doc.at("embedding_dimension").get<int>();
  lib.embedding_provider_ = doc.value("embedding_provider", std::string{});
  for (const auto& a : doc.at("actions")) {
    auto action = action_from_json(a);
    std::string id = action.id;
    lib.actions_.emplace(std::move(id), std::move(action));
  }
  return lib;
}

ActionLibrary ActionLibrary::from_json(const json& doc) {
  const auto issues = lint(doc);
  if (!issues.empty()) {
    throw Error(ErrorCode::invalid_library, issues.front().message, issues.front().action_id);
  }
  return build(doc);
}

ActionLibrary ActionLibrary::parse(std::string_view text) {
  const bool blank = std::all_of(text.begin(), text.end(),
                                 [](unsigned char c) { return std::isspace(c); });
  if (blank) throw Error(ErrorCode::invalid_library, "library must contain at least one action");
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::invalid_library, std::string("library document is not valid JSON: ") + e.what());
  }
  return from_json(doc);
}

ActionLibrary ActionLibrary::load_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::not_found, "cannot open library file " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse(buf.str());
}

json ActionLibrary::to_json() const {
  json actions = json::array();
  for (const auto& [id, a] : actions_) actions.push_back(action_to_json(a));
  json doc{{"version", version_},
           {"embedding_dimension", embedding_dimension_},
           {"action_count", actions_.size()},
           {"actions", std::move(actions)}};
  if (!embedding_provider_.empty()) doc["embedding_provider"] = embedding_provider_;
  return doc;
}

std::string ActionLibrary::serialize() const { return to_json().dump(2); }

bool ActionLibrary::contains(std::string_view id) const { return actions_.find(id) != actions_.end(); }

const Action* ActionLibrary::find(std::string_view id) const {
  auto it = actions_.find(id);
  return it == actions_.end() ? nullptr : &it->second;
}

const Action& ActionLibrary::at(std::string_view id) const {
  if (const auto* a = find(id)) return *a;
  throw Error(ErrorCode::not_found, "unknown action id '" + std::string(id) + "'", std::string(id));
}

std::vector<const Action*> ActionLibrary::reaction_candidates_of(std::string_view id) const {
  const Action& a = at(id);
  std::vector<const Action*> out;
  out.reserve(a.reaction_candidates.size());
  for (const auto& c : a.reaction_candidates) out.push_back(&at(c));
  return out;
}

std::vector<std::string> ActionLibrary::referrers_of(std::string_view id) const {
  std::vector<std::string> out;
  for (const auto& [other, a] : actions_) {
    if (std::find(a.reaction_candidates.begin(), a.reaction_candidates.end(), id) !=
        a.reaction_candidates.end()) {
      out.push_back(other);
    }
  }
  return out;
}

void ActionLibrary::check() const {
  const auto issues = lint(to_json());
  if (!issues.empty()) {
    throw Error(ErrorCode::invalid_library, issues.front().message, issues.front().action_id);
  }
}

ActionLibrary ActionLibrary::upsert(Action action) const {
  ActionLibrary next = *this;
  std::string id = action.id;
  next.actions_.insert_or_assign(std::move(id), std::move(action));
  next.check();
  next.version_ = version_ + 1;
  return next;
}

ActionLibrary ActionLibrary::remove(std::string_view id) const {
  at(id);
  const auto refs = referrers_of(id);
  if (!refs.empty()) {
    throw Error(ErrorCode::invalid_library,
                "cannot remove '" + std::string(id) + "': still referenced by '" + refs.front() + "'",
                std::string(id));
  }
  if (actions_.size() == 1) {
    throw Error(ErrorCode::invalid_library, "library must contain at least one action", std::string(id));
  }
  ActionLibrary next = *this;
  next.actions_.erase(next.actions_.find(id));
  next.version_ = version_ + 1;
  return next;
}

ActionLibrary ActionLibrary::with_embeddings(std::string provider_id,
                                             const std::map<std::string, Embedding>& vectors) const {
  ActionLibrary next = *this;
  next.embedding_provider_ = std::move(provider_id);
  for (auto& [id, a] : next.actions_) {
    if (auto it = vectors.find(id); it != vectors.end()) a.embedding = it->second;
  }
  next.check();
  next.version_ = version_ + 1;
  return next;
}

const ActionLibrary& canonical_library() {
  static const ActionLibrary lib = ActionLibrary::parse(canonical_library_document());
  return lib;
}

std::vector<std::string> missing_reference_actions(const ActionLibrary& library) {
  std::vector<std::string> out;
  for (auto id : kReferenceActions) {
    if (!library.contains(id)) out.emplace_back(id);
  }
  return out;
}

}  // namespace puppetchat
