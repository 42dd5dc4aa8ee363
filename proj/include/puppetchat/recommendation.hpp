#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "puppetchat/action_library.hpp"
#include "puppetchat/text_interpreter.hpp"

namespace puppetchat {

enum class ConversationState { opening, partner_acted_last, self_acted_last, idle };

std::string_view to_string(ConversationState s);
std::optional<ConversationState> parse_conversation_state(std::string_view s);

struct RecommendationContext {
  std::optional<std::string> draft_text;  // present = "with input" mode
  std::optional<std::string> partner_last_action;
  ConversationState conversation_state = ConversationState::opening;
  std::string user_id;
  std::uint64_t seed = 0;

  void validate(const ActionLibrary& library) const;
};

struct Weights {
  double w_text = 1.0;
  double w_ctx = 1.0;
  double w_pref = 0.5;
  double noise_amplitude = 0.05;

  void validate() const;
};

/// One action's score, split into the terms of
/// total = w_text*s_text + w_ctx*s_ctx + w_pref*preference + noise.
struct ScoreBreakdown {
  std::string action_id;
  double s_text = 0.0;
  double s_ctx = 0.0;
  double preference = 0.0;
  double noise = 0.0;
  double total = 0.0;
};

nlohmann::json breakdown_to_json(const ScoreBreakdown& b);

/// The three layers of the text channel.
struct TextScore {
  double keyword = 0.0;    // +3 / -3 / 0
  double valence = 0.0;    // +2 aligned, +1 neutral input, 0 otherwise
  double embedding = 0.0;  // 2*max(0, cos) when the first two layers are neutral

  double total() const { return keyword + valence + embedding; }
};

using EmbeddingLookup = std::function<Embedding(const Action&)>;

TextScore score_text_parts(const TextAnalysis& analysis, const Action& action,
                           const EmbeddingLookup& action_embedding);
double score_text(const TextAnalysis& analysis, const Action& action,
                  const EmbeddingLookup& action_embedding);
double score_context(const RecommendationContext& ctx, const Action& action,
                     const ActionLibrary& library);

struct PreferenceCounts {
  std::uint64_t selected = 0;
  std::uint64_t ignored = 0;
  std::uint64_t hidden = 0;
};

/// clamp(0.1*selected - 0.05*ignored - 0.2*hidden, -1, 1)
double preference_value(const PreferenceCounts& counts);

/// Per-(user, action) selection statistics. Updates for one user are
/// serialized; reads see a consistent snapshot. With a path, every outcome
/// is appended to a JSON-lines log and replayed on construction.
class PreferenceStore {
 public:
  PreferenceStore() = default;
  explicit PreferenceStore(std::filesystem::path log_path);

  PreferenceStore(const PreferenceStore& other);
  PreferenceStore& operator=(const PreferenceStore& other);

  PreferenceCounts counts(const std::string& user_id, const std::string& action_id) const;
  double value(const std::string& user_id, const std::string& action_id) const;

  /// `chosen` and `hidden` must be among `shown`; shown-but-not-chosen
  /// actions count as ignored.
  void record_outcome(const std::string& user_id, const std::vector<std::string>& shown,
                      const std::optional<std::string>& chosen,
                      const std::optional<std::string>& hidden);

  void set_counts(const std::string& user_id, const std::string& action_id, PreferenceCounts c);

 private:
  void apply(const std::string& user_id, const std::vector<std::string>& shown,
             const std::optional<std::string>& chosen, const std::optional<std::string>& hidden);

  std::filesystem::path log_path_;
  mutable std::mutex mutex_;
  std::map<std::pair<std::string, std::string>, PreferenceCounts> counts_;
};

inline double preference_value(const PreferenceStore& store, const std::string& user_id,
                               const std::string& action_id) {
  return store.value(user_id, action_id);
}

/// One uniform draw in [0, amplitude) per action, in library id order.
std::vector<double> draw_noise(std::uint64_t seed, std::size_t count, double amplitude);

struct Recommendation {
  std::vector<ScoreBreakdown> top;  // at most four, best first
  std::optional<TextAnalysis> analysis;
  bool degraded = false;
};

/// Scores every library action and keeps the best four. Ties after noise
/// are broken by ascending action id.
Recommendation recommend_detailed(const RecommendationContext& ctx, const ActionLibrary& library,
                                  const Weights& weights, const PreferenceStore& store,
                                  const TextInterpreter& interpreter);

std::vector<ScoreBreakdown> recommend(const RecommendationContext& ctx, const ActionLibrary& library,
                                      const Weights& weights, const PreferenceStore& store,
                                      const TextInterpreter& interpreter);

inline constexpr std::size_t kRecommendationCount = 4;

}  // namespace puppetchat
