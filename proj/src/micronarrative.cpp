#include "puppetchat/micronarrative.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <set>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "puppetchat/error.hpp"

namespace puppetchat {

using nlohmann::json;

namespace {

const std::unordered_set<std::string_view>& habit_words() {
  static const std::unordered_set<std::string_view> words{
      "running", "run",    "jogging", "marathon", "gym",     "workout",  "yoga",     "hiking",
      "swimming", "cycling", "coffee", "tea",     "reading", "cooking",  "baking",   "gaming",
      "walking", "walks",  "morning", "mornings", "night",   "nights",   "late",     "early",
      "sleep",   "nap",    "naps",    "journal",  "journaling", "meditation", "commute", "study",
      "studying", "practice", "training", "shower", "breakfast", "snacking", "knitting", "gardening",
      "painting", "drawing", "writing", "dancing", "singing", "binge",  "scrolling", "daily",
  };
  return words;
}

const std::unordered_set<std::string_view>& social_words() {
  static const std::unordered_set<std::string_view> words{
      "introvert", "introverted", "extrovert", "extroverted", "shy",      "outgoing",  "chatty",
      "quiet",     "friendly",    "playful",   "sarcastic",   "caring",   "honest",    "talkative",
      "reserved",  "teasing",     "supportive", "listener",   "loyal",    "goofy",     "direct",
      "polite",    "awkward",     "social",    "sociable",    "witty",    "flirty",    "clingy",
      "independent", "affectionate", "gentle", "blunt",       "warm",     "joker",     "silly",
  };
  return words;
}

const std::unordered_set<std::string_view>& emotion_words() {
  static const std::unordered_set<std::string_view> words{
      "calm",   "cheerful", "anxious", "moody",  "nervous", "hopeful",  "grumpy",  "sensitive",
      "emotional", "optimistic", "pessimistic", "relaxed", "stressed", "excited", "content",
      "nostalgic", "dramatic", "melancholy", "bubbly",  "chill",   "lonely",   "curious", "grateful",
  };
  return words;
}

const std::array<std::array<std::string_view, kTagsPerCategory>, 4>& fallback_tags() {
  static const std::array<std::array<std::string_view, kTagsPerCategory>, 4> table{{
      {"music", "food", "movies", "travel", "pets"},
      {"coffee", "reading", "walking", "night-owl", "cooking"},
      {"friendly", "playful", "thoughtful", "listener", "humorous"},
      {"cheerful", "calm", "caring", "curious", "hopeful"},
  }};
  return table;
}

constexpr std::array<std::string_view, 5> kTagClauses{
    "the {} way", "with a little {} flair", "like a true {} lover", "{} style",
    "straight from my {} heart",
};

std::string lowercase(std::string_view s) {
  std::string out(s);
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

std::string trim(std::string_view s) {
  auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

std::string singular(const std::string& w) {
  if (w.size() > 4 && w.ends_with("ies")) return w.substr(0, w.size() - 3) + "y";
  if (w.size() > 3 && w.back() == 's' && !w.ends_with("ss") && !w.ends_with("us") &&
      !w.ends_with("is")) {
    return w.substr(0, w.size() - 1);
  }
  return w;
}

bool is_alpha_word(const std::string& w) {
  return !w.empty() && std::all_of(w.begin(), w.end(), [](unsigned char c) { return std::isalpha(c) || c == '-'; });
}

TagCategory classify(const std::string& word) {
  if (social_words().contains(word)) return TagCategory::social_style;
  if (emotion_words().contains(word) || lexicon_polarity(word) != 0) return TagCategory::emotion;
  if (habit_words().contains(word) || habit_words().contains(singular(word)) ||
      (word.size() > 5 && word.ends_with("ing"))) {
    return TagCategory::habits;
  }
  return TagCategory::likes_dislikes;
}

struct StoryTerm {
  std::string term;
  TagCategory category;
};

// Content words of a story ranked by frequency, ties by first occurrence.
std::vector<StoryTerm> story_terms(std::string_view text) {
  std::vector<std::string> order;
  std::unordered_map<std::string, int> freq;
  for (const auto& tok : tokenize(text)) {
    if (tok.boundary || tok.text.size() < 3 || is_stopword(tok.text) || is_negation_cue(tok.text) ||
        !is_alpha_word(tok.text)) {
      continue;
    }
    const bool keep_form = habit_words().contains(tok.text) || social_words().contains(tok.text) ||
                           emotion_words().contains(tok.text) || lexicon_polarity(tok.text) != 0;
    std::string w = keep_form ? tok.text : singular(tok.text);
    if (freq[w]++ == 0) order.push_back(w);
  }
  std::stable_sort(order.begin(), order.end(),
                   [&](const std::string& a, const std::string& b) { return freq[a] > freq[b]; });
  std::vector<StoryTerm> out;
  out.reserve(order.size());
  for (auto& w : order) out.push_back({w, classify(w)});
  return out;
}

std::string join(const std::vector<std::string>& items, std::string_view sep, std::string_view last_sep) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (i > 0) out += (i + 1 == items.size()) ? last_sep : sep;
    out += items[i];
  }
  return out;
}

std::string truncate_caption(std::string caption) {
  if (utf8_length(caption) <= kMaxCaptionLength) return caption;
  // byte offset of the code point limit
  std::size_t count = 0, cut = caption.size();
  for (std::size_t i = 0; i < caption.size(); ++i) {
    if ((static_cast<unsigned char>(caption[i]) & 0xC0U) != 0x80U) {
      if (count == kMaxCaptionLength) {
        cut = i;
        break;
      }
      ++count;
    }
  }
  caption.resize(cut);
  if (auto sp = caption.find_last_of(' '); sp != std::string::npos && sp > kMaxCaptionLength / 2) {
    caption.resize(sp);
  }
  while (!caption.empty() && (caption.back() == ',' || caption.back() == ' ')) caption.pop_back();
  return caption;
}

const ExchangeRecord* partner_tail(std::span<const ExchangeRecord> context, const std::string& self) {
  for (auto it = context.rbegin(); it != context.rend(); ++it) {
    if (self.empty() || it->sender_id != self) return &*it;
  }
  return nullptr;
}

std::span<const ExchangeRecord> window(std::span<const ExchangeRecord> context) {
  if (context.size() <= kContextWindow) return context;
  return context.subspan(context.size() - kContextWindow);
}

std::string context_echo(std::span<const ExchangeRecord> context, const std::string& self,
                         const ActionLibrary* library) {
  const ExchangeRecord* r = partner_tail(context, self);
  if (r == nullptr) return {};
  if (r->action_id) {
    std::string name = *r->action_id;
    if (library != nullptr) {
      if (const Action* a = library->find(*r->action_id)) name = a->name;
    }
    for (char& c : name) {
      if (c == '-') c = ' ';
    }
    return "answering your " + lowercase(name);
  }
  if (r->text) {
    std::vector<std::string> words;
    for (const auto& t : tokenize(*r->text)) {
      if (t.boundary || is_stopword(t.text) || is_negation_cue(t.text)) continue;
      words.push_back(t.text);
      if (words.size() == 3) break;
    }
    if (!words.empty()) return "re: " + join(words, " ", " ");
  }
  return {};
}

std::string describe_context(std::span<const ExchangeRecord> context, const std::string& self) {
  if (context.empty()) return "(no messages yet)";
  std::string out;
  for (const auto& r : context) {
    out += (r.sender_id == self ? "me" : "partner");
    out += ": ";
    if (r.text) {
      out += *r.text;
    } else if (r.action_id) {
      out += "[" + *r.action_id + "]";
      if (r.micronarrative) out += " " + r.micronarrative->text;
    }
    out += "\n";
  }
  return out;
}

std::vector<std::string> clean_tags(const std::vector<std::string>& tags) {
  std::vector<std::string> out;
  for (const auto& t : tags) {
    std::string c = lowercase(trim(t));
    if (!c.empty() && std::find(out.begin(), out.end(), c) == out.end()) out.push_back(std::move(c));
  }
  return out;
}

}  // namespace

json story_to_json(const PersonalStory& s) {
  return json{{"user_id", s.user_id}, {"text", s.text}, {"version", s.version}, {"created_at", s.created_at}};
}

std::string_view to_string(TagCategory c) {
  switch (c) {
    case TagCategory::likes_dislikes: return "likes_dislikes";
    case TagCategory::habits: return "habits";
    case TagCategory::social_style: return "social_style";
    case TagCategory::emotion: return "emotion";
  }
  return "likes_dislikes";
}

// ---------------------------------------------------------------------------
// TagSet

const std::vector<std::string>& TagSet::category(TagCategory c) const {
  switch (c) {
    case TagCategory::likes_dislikes: return likes_dislikes;
    case TagCategory::habits: return habits;
    case TagCategory::social_style: return social_style;
    case TagCategory::emotion: return emotion;
  }
  return likes_dislikes;
}

std::vector<std::string>& TagSet::category(TagCategory c) {
  return const_cast<std::vector<std::string>&>(std::as_const(*this).category(c));
}

bool TagSet::is_proposed(std::string_view tag) const {
  for (auto c : kTagCategories) {
    const auto& v = category(c);
    if (std::find(v.begin(), v.end(), tag) != v.end()) return true;
  }
  return false;
}

void TagSet::select(std::vector<std::string> tags) {
  for (const auto& t : tags) {
    if (!is_proposed(t) && std::find(custom.begin(), custom.end(), t) == custom.end()) {
      throw Error(ErrorCode::invalid_argument, "tag '" + t + "' is neither proposed nor custom", t);
    }
  }
  selected = std::move(tags);
}

void TagSet::add_custom(std::string tag) {
  tag = lowercase(trim(tag));
  if (tag.empty()) throw Error(ErrorCode::invalid_argument, "custom tag must not be empty");
  if (std::find(custom.begin(), custom.end(), tag) == custom.end()) custom.push_back(std::move(tag));
}

json tagset_to_json(const TagSet& t) {
  return json{{"likes_dislikes", t.likes_dislikes}, {"habits", t.habits},
              {"social_style", t.social_style},     {"emotion", t.emotion},
              {"selected", t.selected},             {"custom", t.custom}};
}

TagSet tagset_from_json(const json& j) {
  TagSet t;
  for (auto c : kTagCategories) {
    t.category(c) = j.value(std::string(to_string(c)), std::vector<std::string>{});
  }
  t.custom = j.value("custom", std::vector<std::string>{});
  t.select(j.value("selected", std::vector<std::string>{}));
  return t;
}

// ---------------------------------------------------------------------------
// PhraseTable / prompts

PhraseTable PhraseTable::parse(std::string_view document) {
  PhraseTable table;
  const auto j = json::parse(document);
  for (const auto& [id, phrase] : j.at("phrases").items()) {
    table.phrases_[id] = phrase.get<std::string>();
  }
  return table;
}

const PhraseTable& PhraseTable::canonical() {
  static const PhraseTable table = parse(canonical_phrases_document());
  return table;
}

std::string PhraseTable::phrase_for(const Action& action) const {
  if (auto it = phrases_.find(action.id); it != phrases_.end()) return it->second;
  return "Here's my " + lowercase(action.name);
}

PromptTemplates PromptTemplates::defaults() {
  return {std::string(default_narration_prompt()), std::string(default_tags_prompt())};
}

PromptTemplates PromptTemplates::load(const std::filesystem::path& dir) {
  auto read = [&](const char* name) {
    std::ifstream in(dir / name);
    if (!in) throw Error(ErrorCode::configuration, "missing prompt template " + (dir / name).string());
    std::stringstream buf;
    buf << in.rdbuf();
    return buf.str();
  };
  return {read("micronarrative.v1.txt"), read("tags.v1.txt")};
}

std::string render_template(std::string_view tmpl, const std::map<std::string, std::string>& values) {
  std::string out;
  std::size_t pos = 0;
  while (pos < tmpl.size()) {
    const auto open = tmpl.find("{{", pos);
    if (open == std::string_view::npos) break;
    const auto close = tmpl.find("}}", open + 2);
    if (close == std::string_view::npos) break;
    out.append(tmpl.substr(pos, open - pos));
    const std::string key(tmpl.substr(open + 2, close - open - 2));
    if (auto it = values.find(key); it != values.end()) {
      out += it->second;
    } else {
      out.append(tmpl.substr(open, close + 2 - open));
    }
    pos = close + 2;
  }
  out.append(tmpl.substr(pos));
  return out;
}

// ---------------------------------------------------------------------------
// NarrativeEngine

NarrativeEngine::NarrativeEngine(std::shared_ptr<const TextProvider> provider, PhraseTable phrases,
                                 PromptTemplates prompts)
    : provider_(std::move(provider)), phrases_(std::move(phrases)), prompts_(std::move(prompts)) {}

TagSet NarrativeEngine::offline_tags(const PersonalStory& story) {
  TagSet tags;
  for (const auto& t : story_terms(story.text)) {
    auto& bucket = tags.category(t.category);
    if (bucket.size() < kTagsPerCategory) bucket.push_back(t.term);
  }
  for (std::size_t i = 0; i < kTagCategories.size(); ++i) {
    auto& bucket = tags.category(kTagCategories[i]);
    for (auto generic : fallback_tags()[i]) {
      if (bucket.size() == kTagsPerCategory) break;
      if (std::find(bucket.begin(), bucket.end(), generic) == bucket.end()) bucket.emplace_back(generic);
    }
  }
  return tags;
}

TagSet NarrativeEngine::propose_tags(const PersonalStory& story) const {
  if (provider_ && !provider_->is_offline()) {
    try {
      const std::string reply =
          provider_->complete(render_template(prompts_.tags, {{"story", story.text.empty() ? "(none)" : story.text}}));
      const auto j = json::parse(reply);
      TagSet tags;
      bool valid = true;
      for (auto c : kTagCategories) {
        auto cleaned = clean_tags(j.at(std::string(to_string(c))).get<std::vector<std::string>>());
        if (cleaned.size() != kTagsPerCategory) valid = false;
        tags.category(c) = std::move(cleaned);
      }
      if (valid) return tags;
    } catch (const Error&) {
    } catch (const json::exception&) {
    }
  }
  return offline_tags(story);
}

std::string NarrativeEngine::template_caption(const Action& action, const PersonalStory& story,
                                              std::span<const ExchangeRecord> context,
                                              const std::vector<std::string>& tags,
                                              const ActionLibrary* library) const {
  std::string caption = phrases_.phrase_for(action);

  std::vector<std::string> anchors = clean_tags(tags);
  if (anchors.size() > 3) anchors.resize(3);
  if (anchors.empty()) {
    const auto terms = story_terms(story.text);
    if (!terms.empty()) anchors.push_back(terms.front().term);
  }
  if (!anchors.empty()) {
    const std::string_view clause = kTagClauses[fnv1a64(action.id) % kTagClauses.size()];
    const std::string joined = join(anchors, ", ", " and ");
    std::string rendered(clause);
    rendered.replace(rendered.find("{}"), 2, joined);
    caption += ", " + rendered;
  }

  const std::string echo = context_echo(window(context), story.user_id, library);
  if (!echo.empty()) caption += " — " + echo;
  return truncate_caption(std::move(caption));
}

std::optional<std::string> NarrativeEngine::provider_caption(const Action& action, const PersonalStory& story,
                                                             std::span<const ExchangeRecord> context,
                                                             const std::vector<std::string>& tags,
                                                             const ActionLibrary*) const {
  if (!provider_ || provider_->is_offline()) return std::nullopt;
  const auto cleaned = clean_tags(tags);
  const std::string prompt = render_template(
      prompts_.narration, {{"action_name", action.name},
                           {"action_description", action.description},
                           {"story", story.text.empty() ? "(none)" : story.text},
                           {"tags", cleaned.empty() ? "(none)" : join(cleaned, ", ", ", ")},
                           {"context", describe_context(window(context), story.user_id)}});
  try {
    std::string text = trim(provider_->complete(prompt));
    if (text.size() >= 2 && text.front() == '"' && text.back() == '"') text = trim(text.substr(1, text.size() - 2));
    if (text.empty() || utf8_length(text) > kMaxCaptionLength) return std::nullopt;
    return text;
  } catch (const Error&) {
    return std::nullopt;
  }
}

Micronarrative NarrativeEngine::generate(const Action& action, const PersonalStory& story,
                                         std::span<const ExchangeRecord> context,
                                         const std::vector<std::string>& tags,
                                         const ActionLibrary* library) const {
  if (library != nullptr && !library->contains(action.id)) {
    throw Error(ErrorCode::not_found, "unknown action id '" + action.id + "'", action.id);
  }
  Micronarrative m;
  m.action_id = action.id;
  m.story_version = story.version;
  m.tags_used = clean_tags(tags);
  if (auto text = provider_caption(action, story, context, tags, library)) {
    m.text = std::move(*text);
    m.generated_by = GeneratedBy::provider;
  } else {
    m.text = template_caption(action, story, context, tags, library);
    m.generated_by = GeneratedBy::offline_template;
  }
  return m;
}

Micronarrative NarrativeEngine::regenerate(const Micronarrative& previous, const Action& action,
                                           const std::vector<std::string>& new_tags,
                                           const PersonalStory& story,
                                           std::span<const ExchangeRecord> context,
                                           const ActionLibrary* library) const {
  if (previous.action_id != action.id) {
    throw Error(ErrorCode::invalid_argument,
                "regeneration must keep the action '" + previous.action_id + "'", action.id);
  }
  return generate(action, story, context, new_tags, library);
}

Micronarrative NarrativeEngine::apply_user_edit(const Micronarrative& previous, std::string text) {
  if (text.empty()) throw Error(ErrorCode::invalid_argument, "caption must not be empty");
  if (utf8_length(text) > kMaxCaptionLength) {
    throw Error(ErrorCode::invalid_argument, "caption exceeds 200 characters");
  }
  Micronarrative m = previous;
  m.text = std::move(text);
  m.generated_by = GeneratedBy::user_edit;
  m.edited = true;
  return m;
}

// ---------------------------------------------------------------------------
// StoryBook

StoryBook::StoryBook(std::filesystem::path log_path) : log_path_(std::move(log_path)) {
  std::ifstream in(log_path_);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    try {
      const auto j = json::parse(line);
      const auto user = j.at("user_id").get<std::string>();
      if (j.at("type") == "story") {
        PersonalStory s{user, j.at("text").get<std::string>(), j.at("version").get<std::int64_t>(),
                        j.value("created_at", TimestampMs{0})};
        stories_[user].push_back(std::move(s));
      } else if (j.at("type") == "tags") {
        tags_[user] = tagset_from_json(j.at("tags"));
      }
    } catch (const std::exception&) {
      break;
    }
  }
}

void StoryBook::append_log(const json& entry) {
  if (log_path_.empty()) return;
  std::ofstream out(log_path_, std::ios::app);
  if (!out) throw Error(ErrorCode::storage, "cannot append to story log " + log_path_.string());
  out << entry.dump() << '\n';
  out.flush();
}

PersonalStory StoryBook::update(const std::string& user_id, std::string text, TimestampMs now) {
  if (utf8_length(text) > kMaxStoryLength) {
    throw Error(ErrorCode::invalid_argument, "personal story exceeds 1000 characters", user_id);
  }
  std::lock_guard lock(mutex_);
  auto& versions = stories_[user_id];
  PersonalStory s{user_id, std::move(text), versions.empty() ? 1 : versions.back().version + 1, now};
  append_log(json{{"type", "story"}, {"user_id", user_id}, {"text", s.text}, {"version", s.version},
                  {"created_at", s.created_at}});
  versions.push_back(s);
  return s;
}

PersonalStory StoryBook::latest(const std::string& user_id) const {
  std::lock_guard lock(mutex_);
  if (auto it = stories_.find(user_id); it != stories_.end() && !it->second.empty()) return it->second.back();
  return PersonalStory{user_id, "", 0, 0};
}

std::vector<PersonalStory> StoryBook::history(const std::string& user_id) const {
  std::lock_guard lock(mutex_);
  if (auto it = stories_.find(user_id); it != stories_.end()) return it->second;
  return {};
}

void StoryBook::set_tag_selection(const std::string& user_id, const TagSet& tags) {
  std::lock_guard lock(mutex_);
  append_log(json{{"type", "tags"}, {"user_id", user_id}, {"tags", tagset_to_json(tags)}});
  tags_[user_id] = tags;
}

std::optional<TagSet> StoryBook::tag_selection(const std::string& user_id) const {
  std::lock_guard lock(mutex_);
  if (auto it = tags_.find(user_id); it != tags_.end()) return it->second;
  return std::nullopt;
}

}  // namespace puppetchat
