#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace puppetchat {

/// Affective category shared by actions (emotion) and analysed text (valence).
enum class Polarity { positive, negative, neutral };
using Emotion = Polarity;
using Valence = Polarity;

enum class InteractionRole { self_oriented, responsive };

std::string_view to_string(Polarity p);
std::string_view to_string(InteractionRole r);
std::optional<Polarity> parse_polarity(std::string_view s);
std::optional<InteractionRole> parse_role(std::string_view s);

using Embedding = std::vector<double>;

struct Action {
  std::string id;
  std::string name;
  std::string description;
  std::vector<std::string> keywords;
  Emotion emotion = Emotion::neutral;
  InteractionRole interaction_role = InteractionRole::self_oriented;
  std::optional<Embedding> embedding;
  std::vector<std::string> reaction_candidates;

  bool operator==(const Action&) const = default;
};

/// One validation finding. `action_id` is empty for document-level problems.
struct LibraryIssue {
  std::string action_id;
  std::string message;
};

/// Immutable, validated snapshot of the expressive action library.
///
/// Mutations (`upsert`, `remove`) return a new snapshot with the version
/// bumped, so readers holding an older snapshot are never disturbed.
class ActionLibrary {
 public:
  /// Validates and builds; throws Error(invalid_library) naming the first
  /// offending action.
  static ActionLibrary from_json(const nlohmann::json& doc);
  static ActionLibrary parse(std::string_view text);
  static ActionLibrary load_file(const std::filesystem::path& path);

  /// Every problem in a document, without stopping at the first one.
  static std::vector<LibraryIssue> lint(const nlohmann::json& doc);

  nlohmann::json to_json() const;
  std::string serialize() const;

  std::size_t size() const noexcept { return actions_.size(); }
  std::int64_t version() const noexcept { return version_; }
  int embedding_dimension() const noexcept { return embedding_dimension_; }
  const std::string& embedding_provider() const noexcept { return embedding_provider_; }

  /// Ordered by id; recommendation noise is drawn in this order.
  const std::map<std::string, Action, std::less<>>& actions() const noexcept { return actions_; }

  bool contains(std::string_view id) const;
  const Action* find(std::string_view id) const;
  const Action& at(std::string_view id) const;

  std::vector<const Action*> reaction_candidates_of(std::string_view id) const;
  /// Ids of actions listing `id` among their reaction candidates.
  std::vector<std::string> referrers_of(std::string_view id) const;

  ActionLibrary upsert(Action action) const;
  ActionLibrary remove(std::string_view id) const;
  /// Attaches precomputed embeddings tagged with the provider that made them.
  ActionLibrary with_embeddings(std::string provider_id,
                                const std::map<std::string, Embedding>& vectors) const;

 private:
  ActionLibrary() = default;
  static ActionLibrary build(const nlohmann::json& doc);
  void check() const;

  std::map<std::string, Action, std::less<>> actions_;
  int embedding_dimension_ = 0;
  std::int64_t version_ = 1;
  std::string embedding_provider_;
};

nlohmann::json action_to_json(const Action& action);
Action action_from_json(const nlohmann::json& j);

/// Actions every shipped library must keep: the gestures the original
/// PuppetChat study worked with.
inline constexpr std::string_view kReferenceActions[] = {
    "throw-heart", "catch-heart", "carry-heart", "split-heart",    "throw-back-heart", "hug",
    "knees-hug",   "pat-shoulder", "cry",       "wipe-own-tears", "wipe-others-tears", "hit-with-object",
    "agony",       "high-five",   "fan-self",  "take-photo",     "vomit"};

/// Reference actions absent from `library`.
std::vector<std::string> missing_reference_actions(const ActionLibrary& library);

/// The shipped 42-action library, compiled into the binary.
const ActionLibrary& canonical_library();
std::string_view canonical_library_document();

}  // namespace puppetchat
