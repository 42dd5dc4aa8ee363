#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "puppetchat/action_library.hpp"
#include "puppetchat/exchange.hpp"
#include "puppetchat/text_interpreter.hpp"

namespace puppetchat {

inline constexpr std::size_t kMaxStoryLength = 1000;
inline constexpr std::size_t kMaxCaptionLength = 200;
inline constexpr std::size_t kTagsPerCategory = 5;
inline constexpr std::size_t kContextWindow = 6;

struct PersonalStory {
  std::string user_id;
  std::string text;
  std::int64_t version = 0;  // 0 = no story yet
  TimestampMs created_at = 0;
};

nlohmann::json story_to_json(const PersonalStory& s);

enum class TagCategory { likes_dislikes, habits, social_style, emotion };
inline constexpr std::array kTagCategories{TagCategory::likes_dislikes, TagCategory::habits,
                                           TagCategory::social_style, TagCategory::emotion};
std::string_view to_string(TagCategory c);

struct TagSet {
  std::vector<std::string> likes_dislikes;
  std::vector<std::string> habits;
  std::vector<std::string> social_style;
  std::vector<std::string> emotion;
  std::vector<std::string> selected;
  std::vector<std::string> custom;

  const std::vector<std::string>& category(TagCategory c) const;
  std::vector<std::string>& category(TagCategory c);

  bool is_proposed(std::string_view tag) const;
  /// Replaces the selection; every tag must be proposed or custom.
  void select(std::vector<std::string> tags);
  void add_custom(std::string tag);

  bool operator==(const TagSet&) const = default;
};

nlohmann::json tagset_to_json(const TagSet& t);
TagSet tagset_from_json(const nlohmann::json& j);

/// First-person phrase per action id; the neutral caption for that action.
class PhraseTable {
 public:
  static PhraseTable parse(std::string_view document);
  static const PhraseTable& canonical();

  /// Falls back to a phrase built from the action name when the id is missing.
  std::string phrase_for(const Action& action) const;
  bool contains(std::string_view id) const { return phrases_.find(std::string(id)) != phrases_.end(); }

 private:
  std::map<std::string, std::string> phrases_;
};

struct PromptTemplates {
  std::string narration;
  std::string tags;

  static PromptTemplates defaults();
  /// Reads micronarrative.v1.txt and tags.v1.txt from a directory.
  static PromptTemplates load(const std::filesystem::path& dir);
};

/// Replaces every {{key}} with its value.
std::string render_template(std::string_view tmpl, const std::map<std::string, std::string>& values);

/// Caption and tag generation. With an offline provider every output is a
/// pure function of its inputs; a remote provider is tried first and any
/// failure or invalid reply falls back to the offline path.
class NarrativeEngine {
 public:
  explicit NarrativeEngine(std::shared_ptr<const TextProvider> provider,
                           PhraseTable phrases = PhraseTable::canonical(),
                           PromptTemplates prompts = PromptTemplates::defaults());

  TagSet propose_tags(const PersonalStory& story) const;
  static TagSet offline_tags(const PersonalStory& story);

  /// `context` is the thread tail, oldest first; only the last six records are used.
  Micronarrative generate(const Action& action, const PersonalStory& story,
                          std::span<const ExchangeRecord> context,
                          const std::vector<std::string>& tags,
                          const ActionLibrary* library = nullptr) const;

  Micronarrative regenerate(const Micronarrative& previous, const Action& action,
                            const std::vector<std::string>& new_tags, const PersonalStory& story,
                            std::span<const ExchangeRecord> context,
                            const ActionLibrary* library = nullptr) const;

  /// Offline template caption: the action phrase, then an optional tag
  /// clause, then an optional echo of the thread. At most 200 characters.
  std::string template_caption(const Action& action, const PersonalStory& story,
                               std::span<const ExchangeRecord> context,
                               const std::vector<std::string>& tags,
                               const ActionLibrary* library) const;

  static Micronarrative apply_user_edit(const Micronarrative& previous, std::string text);

 private:
  std::optional<std::string> provider_caption(const Action& action, const PersonalStory& story,
                                              std::span<const ExchangeRecord> context,
                                              const std::vector<std::string>& tags,
                                              const ActionLibrary* library) const;

  std::shared_ptr<const TextProvider> provider_;
  PhraseTable phrases_;
  PromptTemplates prompts_;
};

/// Versioned personal stories and the last tag selection, per user.
/// Version assignment is serialized; history is kept in full.
class StoryBook {
 public:
  StoryBook() = default;
  /// Appends every change to a JSON-lines log and replays it on construction.
  explicit StoryBook(std::filesystem::path log_path);

  PersonalStory update(const std::string& user_id, std::string text, TimestampMs now);
  PersonalStory latest(const std::string& user_id) const;
  std::vector<PersonalStory> history(const std::string& user_id) const;

  void set_tag_selection(const std::string& user_id, const TagSet& tags);
  std::optional<TagSet> tag_selection(const std::string& user_id) const;

 private:
  void append_log(const nlohmann::json& entry);

  std::filesystem::path log_path_;
  mutable std::mutex mutex_;
  std::map<std::string, std::vector<PersonalStory>> stories_;
  std::map<std::string, TagSet> tags_;
};

std::string_view canonical_phrases_document();
std::string_view default_narration_prompt();
std::string_view default_tags_prompt();

}  // namespace puppetchat
