#include "puppetchat/recommendation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <set>

#include "puppetchat/error.hpp"

namespace puppetchat {

using nlohmann::json;

namespace {

constexpr double kKeywordMatch = 3.0;
constexpr double kAlignedValence = 2.0;
constexpr double kNeutralValence = 1.0;
constexpr double kEmbeddingScale = 2.0;
constexpr double kCandidateBonus = 5.0;
constexpr double kResponsiveBonus = 1.0;

constexpr double kSelectedStep = 0.1;
constexpr double kIgnoredStep = 0.05;
constexpr double kHiddenStep = 0.2;

bool keyword_hits(const std::string& term, const std::vector<std::string>& action_keywords,
                  const std::vector<std::string>& action_stems) {
  const std::string s = stem(term);
  for (std::size_t i = 0; i < action_keywords.size(); ++i) {
    if (action_keywords[i] == term || action_stems[i] == s) return true;
  }
  return false;
}

}  // namespace

std::string_view to_string(ConversationState s) {
  switch (s) {
    case ConversationState::opening: return "opening";
    case ConversationState::partner_acted_last: return "partner_acted_last";
    case ConversationState::self_acted_last: return "self_acted_last";
    case ConversationState::idle: return "idle";
  }
  return "idle";
}

std::optional<ConversationState> parse_conversation_state(std::string_view s) {
  if (s == "opening") return ConversationState::opening;
  if (s == "partner_acted_last") return ConversationState::partner_acted_last;
  if (s == "self_acted_last") return ConversationState::self_acted_last;
  if (s == "idle") return ConversationState::idle;
  return std::nullopt;
}

void RecommendationContext::validate(const ActionLibrary& library) const {
  if (partner_last_action && !library.contains(*partner_last_action)) {
    throw Error(ErrorCode::invalid_argument,
                "partner_last_action '" + *partner_last_action + "' is not in the library",
                *partner_last_action);
  }
  if (conversation_state == ConversationState::partner_acted_last && !partner_last_action) {
    throw Error(ErrorCode::invalid_argument,
                "conversation_state partner_acted_last requires a partner_last_action");
  }
}

void Weights::validate() const {
  for (double w : {w_text, w_ctx, w_pref, noise_amplitude}) {
    if (!std::isfinite(w)) throw Error(ErrorCode::configuration, "weights must be finite");
  }
  if (noise_amplitude < 0.0) throw Error(ErrorCode::configuration, "noise_amplitude must be nonnegative");
}

json breakdown_to_json(const ScoreBreakdown& b) {
  return json{{"action_id", b.action_id}, {"s_text", b.s_text}, {"s_ctx", b.s_ctx},
              {"preference", b.preference}, {"noise", b.noise}, {"total", b.total}};
}

TextScore score_text_parts(const TextAnalysis& analysis, const Action& action,
                           const EmbeddingLookup& action_embedding) {
  TextScore score;

  std::vector<std::string> stems;
  stems.reserve(action.keywords.size());
  for (const auto& k : action.keywords) stems.push_back(stem(k));

  bool plain_hit = false;
  bool negated_hit = false;
  for (const auto& k : analysis.keywords) {
    if (!keyword_hits(k, action.keywords, stems)) continue;
    if (analysis.negated_keywords.contains(k)) {
      negated_hit = true;
    } else {
      plain_hit = true;
    }
  }
  if (plain_hit) {
    score.keyword = kKeywordMatch;
  } else if (negated_hit) {
    score.keyword = -kKeywordMatch;
  }

  if (analysis.valence == Valence::neutral) {
    score.valence = kNeutralValence;
  } else if (analysis.affect == action.emotion) {
    score.valence = kAlignedValence;
  }

  if (score.keyword == 0.0 && analysis.valence == Valence::neutral) {
    const bool zero_query = std::all_of(analysis.embedding.begin(), analysis.embedding.end(),
                                        [](double x) { return x == 0.0; });
    if (!zero_query) {
      const Embedding target = action_embedding(action);
      score.embedding = kEmbeddingScale * std::max(0.0, cosine(analysis.embedding, target));
    }
  }
  return score;
}

double score_text(const TextAnalysis& analysis, const Action& action,
                  const EmbeddingLookup& action_embedding) {
  return score_text_parts(analysis, action, action_embedding).total();
}

double score_context(const RecommendationContext& ctx, const Action& action,
                     const ActionLibrary& library) {
  double score = 0.0;
  if (ctx.partner_last_action) {
    if (const Action* partner = library.find(*ctx.partner_last_action)) {
      const auto& rc = partner->reaction_candidates;
      if (std::find(rc.begin(), rc.end(), action.id) != rc.end()) score += kCandidateBonus;
    }
  }
  if (ctx.conversation_state == ConversationState::partner_acted_last &&
      action.interaction_role == InteractionRole::responsive) {
    score += kResponsiveBonus;
  }
  return score;
}

double preference_value(const PreferenceCounts& c) {
  const double raw = kSelectedStep * static_cast<double>(c.selected) -
                     kIgnoredStep * static_cast<double>(c.ignored) -
                     kHiddenStep * static_cast<double>(c.hidden);
  return std::clamp(raw, -1.0, 1.0);
}

// ---------------------------------------------------------------------------
// PreferenceStore

PreferenceStore::PreferenceStore(std::filesystem::path log_path) : log_path_(std::move(log_path)) {
  std::ifstream in(log_path_);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    try {
      const auto j = json::parse(line);
      std::optional<std::string> chosen, hidden;
      if (j.contains("chosen") && j["chosen"].is_string()) chosen = j["chosen"].get<std::string>();
      if (j.contains("hidden") && j["hidden"].is_string()) hidden = j["hidden"].get<std::string>();
      apply(j.at("user_id").get<std::string>(), j.at("shown").get<std::vector<std::string>>(), chosen,
            hidden);
    } catch (const json::exception&) {
      break;
    }
  }
}

PreferenceStore::PreferenceStore(const PreferenceStore& other) {
  std::lock_guard lock(other.mutex_);
  counts_ = other.counts_;
}

PreferenceStore& PreferenceStore::operator=(const PreferenceStore& other) {
  if (this == &other) return *this;
  std::scoped_lock lock(mutex_, other.mutex_);
  counts_ = other.counts_;
  log_path_.clear();
  return *this;
}

PreferenceCounts PreferenceStore::counts(const std::string& user_id, const std::string& action_id) const {
  std::lock_guard lock(mutex_);
  if (auto it = counts_.find({user_id, action_id}); it != counts_.end()) return it->second;
  return {};
}

double PreferenceStore::value(const std::string& user_id, const std::string& action_id) const {
  return preference_value(counts(user_id, action_id));
}

void PreferenceStore::apply(const std::string& user_id, const std::vector<std::string>& shown,
                            const std::optional<std::string>& chosen,
                            const std::optional<std::string>& hidden) {
  for (const auto& id : shown) {
    auto& c = counts_[{user_id, id}];
    if (chosen && *chosen == id) {
      ++c.selected;
    } else {
      ++c.ignored;
    }
    if (hidden && *hidden == id) ++c.hidden;
  }
}

void PreferenceStore::record_outcome(const std::string& user_id, const std::vector<std::string>& shown,
                                     const std::optional<std::string>& chosen,
                                     const std::optional<std::string>& hidden) {
  if (shown.empty()) throw Error(ErrorCode::invalid_argument, "an outcome needs the shown actions");
  if (std::set<std::string>(shown.begin(), shown.end()).size() != shown.size()) {
    throw Error(ErrorCode::invalid_argument, "shown actions must be distinct");
  }
  auto in_shown = [&](const std::string& id) {
    return std::find(shown.begin(), shown.end(), id) != shown.end();
  };
  if (chosen && !in_shown(*chosen)) {
    throw Error(ErrorCode::invalid_argument, "chosen action '" + *chosen + "' was not shown", *chosen);
  }
  if (hidden && !in_shown(*hidden)) {
    throw Error(ErrorCode::invalid_argument, "hidden action '" + *hidden + "' was not shown", *hidden);
  }

  std::lock_guard lock(mutex_);
  if (!log_path_.empty()) {
    std::ofstream out(log_path_, std::ios::app);
    if (!out) throw Error(ErrorCode::storage, "cannot append to preference log " + log_path_.string());
    json j{{"user_id", user_id}, {"shown", shown}};
    if (chosen) j["chosen"] = *chosen;
    if (hidden) j["hidden"] = *hidden;
    out << j.dump() << '\n';
  }
  apply(user_id, shown, chosen, hidden);
}

void PreferenceStore::set_counts(const std::string& user_id, const std::string& action_id,
                                 PreferenceCounts c) {
  std::lock_guard lock(mutex_);
  counts_[{user_id, action_id}] = c;
}

// ---------------------------------------------------------------------------
// Ranking

std::vector<double> draw_noise(std::uint64_t seed, std::size_t count, double amplitude) {
  std::mt19937_64 gen(seed);
  std::vector<double> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    // 53 random mantissa bits -> [0, 1); portable across standard libraries.
    const double u = static_cast<double>(gen() >> 11) * 0x1.0p-53;
    out.push_back(u * amplitude);
  }
  return out;
}

Recommendation recommend_detailed(const RecommendationContext& ctx, const ActionLibrary& library,
                                  const Weights& weights, const PreferenceStore& store,
                                  const TextInterpreter& interpreter) {
  if (library.size() == 0) throw Error(ErrorCode::invalid_library, "library is empty");
  ctx.validate(library);
  weights.validate();

  Recommendation result;
  if (ctx.draft_text) {
    Interpretation interp = interpreter.interpret(*ctx.draft_text);
    result.analysis = std::move(interp.analysis);
    result.degraded = interp.degraded;
  }
  const bool offline_embeddings = result.degraded;
  const EmbeddingLookup lookup = [&](const Action& a) {
    return interpreter.action_embedding(a, library, offline_embeddings);
  };

  const auto noise = draw_noise(ctx.seed, library.size(), weights.noise_amplitude);
  std::vector<ScoreBreakdown> scored;
  scored.reserve(library.size());
  std::size_t i = 0;
  for (const auto& [id, action] : library.actions()) {
    ScoreBreakdown b;
    b.action_id = id;
    b.s_text = result.analysis ? score_text(*result.analysis, action, lookup) : 0.0;
    b.s_ctx = score_context(ctx, action, library);
    b.preference = store.value(ctx.user_id, id);
    b.noise = noise[i++];
    b.total = weights.w_text * b.s_text + weights.w_ctx * b.s_ctx + weights.w_pref * b.preference + b.noise;
    scored.push_back(std::move(b));
  }

  const std::size_t keep = std::min(kRecommendationCount, scored.size());
  std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(keep), scored.end(),
                    [](const ScoreBreakdown& a, const ScoreBreakdown& b) {
                      if (a.total != b.total) return a.total > b.total;
                      return a.action_id < b.action_id;
                    });
  scored.resize(keep);
  result.top = std::move(scored);
  return result;
}

std::vector<ScoreBreakdown> recommend(const RecommendationContext& ctx, const ActionLibrary& library,
                                      const Weights& weights, const PreferenceStore& store,
                                      const TextInterpreter& interpreter) {
  return recommend_detailed(ctx, library, weights, store, interpreter).top;
}

}  // namespace puppetchat
