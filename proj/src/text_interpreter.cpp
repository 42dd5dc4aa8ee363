#include "puppetchat/text_interpreter.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <unordered_set>

#include <httplib.h>

#include "puppetchat/error.hpp"

namespace puppetchat {

using nlohmann::json;

namespace {

const std::unordered_set<std::string_view>& stopwords() {
  static const std::unordered_set<std::string_view> words{
      "a",     "an",    "the",   "and",   "or",    "but",   "if",    "to",     "of",
      "in",    "on",    "at",    "for",   "with",  "by",    "from",  "as",     "into",
      "about", "than",  "then",  "i",     "me",    "my",    "mine",  "myself", "you",
      "your",  "yours", "we",    "us",    "our",   "he",    "him",   "his",    "she",
      "her",   "they",  "them",  "their", "it",    "its",   "this",  "that",   "these",
      "those", "is",    "am",    "are",   "was",   "were",  "be",    "been",   "being",
      "do",    "does",  "did",   "have",  "has",   "had",   "will",  "would",  "shall",
      "should", "can",  "could", "may",   "might", "must",  "so",    "just",   "very",
      "really", "what", "which", "who",   "whom",  "how",   "when",  "where",  "why",
      "all",   "any",   "some",  "i'm",   "you're", "it's", "we're", "they're", "i've",
      "i'll",  "you'll", "let's", "gonna", "wanna", "got",  "get",   "up",     "out",
      "over",  "again", "also",  "there's", "here", "oh",   "u",     "ur",
  };
  return words;
}

const std::unordered_map<std::string_view, int>& lexicon() {
  static const std::unordered_map<std::string_view, int> words{
      // positive
      {"love", 1}, {"loves", 1}, {"loved", 1}, {"loving", 1}, {"adore", 1}, {"like", 1},
      {"likes", 1}, {"happy", 1}, {"glad", 1}, {"joy", 1}, {"great", 1}, {"good", 1},
      {"awesome", 1}, {"amazing", 1}, {"wonderful", 1}, {"yay", 1}, {"congrats", 1},
      {"congratulations", 1}, {"proud", 1}, {"thanks", 1}, {"thank", 1}, {"grateful", 1},
      {"excited", 1}, {"fun", 1}, {"funny", 1}, {"haha", 1}, {"lol", 1}, {"sweet", 1},
      {"cute", 1}, {"beautiful", 1}, {"nice", 1}, {"win", 1}, {"won", 1}, {"success", 1},
      {"celebrate", 1}, {"hooray", 1}, {"darling", 1}, {"kiss", 1}, {"hug", 1},
      {"cherish", 1}, {"miss", 1}, {"comfort", 1}, {"care", 1}, {"cool", 1},
      {"best", 1}, {"enjoy", 1}, {"delicious", 1}, {"tasty", 1}, {"bravo", 1}, {"wow", 1},
      // negative
      {"hate", -1}, {"hates", -1}, {"hated", -1}, {"sad", -1}, {"unhappy", -1},
      {"cry", -1}, {"crying", -1}, {"tears", -1}, {"upset", -1}, {"angry", -1}, {"mad", -1},
      {"furious", -1}, {"annoyed", -1}, {"annoying", -1}, {"frustrated", -1}, {"hurt", -1},
      {"pain", -1}, {"ouch", -1}, {"awful", -1}, {"terrible", -1}, {"bad", -1},
      {"horrible", -1}, {"gross", -1}, {"disgusting", -1}, {"sick", -1}, {"yuck", -1},
      {"lonely", -1}, {"alone", -1}, {"tired", -1}, {"exhausted", -1}, {"bored", -1},
      {"broken", -1}, {"heartbroken", -1}, {"jealous", -1}, {"ugh", -1}, {"worst", -1},
      {"scared", -1}, {"afraid", -1}, {"worried", -1}, {"anxious", -1}, {"stressed", -1},
      {"sorry", -1}, {"missing", -1}, {"lost", -1}, {"fail", -1}, {"failed", -1},
  };
  return words;
}

// word -> concept labels used as extra embedding features.
const std::unordered_map<std::string_view, std::vector<std::string_view>>& concepts() {
  static const std::unordered_map<std::string_view, std::vector<std::string_view>> table{
      {"apple", {"fruit", "food"}},      {"banana", {"fruit", "food"}},
      {"orange", {"fruit", "food"}},     {"grape", {"fruit", "food"}},
      {"strawberry", {"fruit", "food"}}, {"peach", {"fruit", "food"}},
      {"fruit", {"fruit", "food"}},      {"cake", {"food", "celebration"}},
      {"cookie", {"food", "sweet"}},     {"candy", {"food", "sweet"}},
      {"chocolate", {"food", "sweet"}},  {"snack", {"food"}},
      {"treat", {"food", "sweet"}},      {"pizza", {"food"}},
      {"food", {"food"}},                {"eat", {"food"}},
      {"hungry", {"food"}},              {"dinner", {"food"}},
      {"lunch", {"food"}},               {"breakfast", {"food"}},
      {"coffee", {"drink"}},             {"tea", {"drink"}},
      {"water", {"drink"}},              {"juice", {"drink"}},
      {"drink", {"drink"}},              {"beer", {"drink"}},
      {"wine", {"drink"}},               {"thirsty", {"drink"}},
      {"bicycle", {"vehicle"}},          {"bike", {"vehicle"}},
      {"car", {"vehicle"}},              {"bus", {"vehicle"}},
      {"train", {"vehicle"}},            {"give", {"gift"}},
      {"gift", {"gift"}},                {"present", {"gift"}},
      {"offer", {"gift"}},               {"heart", {"affection"}},
      {"love", {"affection"}},           {"adore", {"affection"}},
      {"crush", {"affection"}},          {"darling", {"affection"}},
      {"kiss", {"affection"}},           {"hug", {"affection", "comfort"}},
      {"embrace", {"affection", "comfort"}}, {"cuddle", {"affection", "comfort"}},
      {"comfort", {"comfort"}},          {"console", {"comfort"}},
      {"sad", {"sadness"}},              {"cry", {"sadness"}},
      {"tears", {"sadness"}},            {"sob", {"sadness"}},
      {"upset", {"sadness"}},            {"unhappy", {"sadness"}},
      {"happy", {"joy"}},                {"glad", {"joy"}},
      {"joy", {"joy"}},                  {"yay", {"joy"}},
      {"angry", {"anger"}},              {"mad", {"anger"}},
      {"furious", {"anger"}},            {"annoyed", {"anger"}},
      {"tired", {"rest"}},               {"sleepy", {"rest"}},
      {"exhausted", {"rest"}},           {"sleep", {"rest"}},
      {"nap", {"rest"}},                 {"bed", {"rest"}},
      {"night", {"rest"}},               {"party", {"celebration"}},
      {"dance", {"celebration"}},        {"music", {"celebration"}},
      {"celebrate", {"celebration"}},    {"birthday", {"celebration"}},
      {"laugh", {"humor"}},              {"funny", {"humor"}},
      {"joke", {"humor"}},               {"haha", {"humor"}},
      {"lol", {"humor"}},                {"photo", {"photo"}},
      {"picture", {"photo"}},            {"camera", {"photo"}},
      {"selfie", {"photo"}},             {"hot", {"heat"}},
      {"heat", {"heat"}},                {"sun", {"heat"}},
      {"sick", {"disgust"}},             {"gross", {"disgust"}},
      {"disgusting", {"disgust"}},       {"yuck", {"disgust"}},
      {"hello", {"greeting"}},           {"hi", {"greeting"}},
      {"hey", {"greeting"}},             {"greet", {"greeting"}},
      {"bye", {"greeting"}},             {"morning", {"greeting"}},
      {"win", {"achievement"}},          {"success", {"achievement"}},
      {"congrats", {"achievement"}},     {"victory", {"achievement"}},
      {"marathon", {"achievement", "exercise"}}, {"race", {"achievement", "exercise"}},
      {"pain", {"pain"}},                {"hurt", {"pain"}},
      {"ouch", {"pain"}},                {"cat", {"pet"}},
      {"dog", {"pet"}},                  {"kitten", {"pet"}},
      {"puppy", {"pet"}},                {"pet", {"pet"}},
      {"run", {"exercise"}},             {"running", {"exercise"}},
      {"gym", {"exercise"}},             {"workout", {"exercise"}},
  };
  return table;
}

std::string lower_ascii(std::string_view s) {
  std::string out(s);
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

bool is_word_char(unsigned char c) { return std::isalnum(c) || c == '\'' || c >= 0x80; }

bool is_boundary_char(char c) {
  return c == '.' || c == ',' || c == '!' || c == '?' || c == ';' || c == ':';
}

Polarity sign_of(int sum) {
  if (sum > 0) return Polarity::positive;
  if (sum < 0) return Polarity::negative;
  return Polarity::neutral;
}

void add_feature(std::vector<double>& v, std::string_view feature, double weight) {
  const std::uint64_t h = fnv1a64(feature);
  const auto index = static_cast<std::size_t>(h % v.size());
  v[index] += ((h >> 63) != 0U) ? -weight : weight;
}

Embedding normalize(Embedding v) {
  double sq = 0.0;
  for (double x : v) sq += x * x;
  if (sq == 0.0) return v;
  const double n = std::sqrt(sq);
  for (double& x : v) x /= n;
  return v;
}

std::string env_or(const char* name, std::string fallback) {
  if (const char* v = std::getenv(name); v != nullptr && *v != '\0') return v;
  return fallback;
}

}  // namespace

std::vector<Token> tokenize(std::string_view text) {
  // Normalise the typographic apostrophe (U+2019) to ASCII first.
  std::string s;
  s.reserve(text.size());
  for (std::size_t i = 0; i < text.size(); ++i) {
    if (i + 2 < text.size() && static_cast<unsigned char>(text[i]) == 0xE2 &&
        static_cast<unsigned char>(text[i + 1]) == 0x80 &&
        static_cast<unsigned char>(text[i + 2]) == 0x99) {
      s.push_back('\'');
      i += 2;
    } else {
      s.push_back(text[i]);
    }
  }

  std::vector<Token> out;
  std::string cur;
  auto flush = [&] {
    while (!cur.empty() && cur.front() == '\'') cur.erase(cur.begin());
    while (!cur.empty() && cur.back() == '\'') cur.pop_back();
    if (!cur.empty()) out.push_back({lower_ascii(cur), false});
    cur.clear();
  };
  for (char c : s) {
    if (is_word_char(static_cast<unsigned char>(c))) {
      cur.push_back(c);
    } else {
      flush();
      if (is_boundary_char(c) && (out.empty() || !out.back().boundary)) out.push_back({"", true});
    }
  }
  flush();
  return out;
}

std::string stem(std::string_view word) {
  std::string w = lower_ascii(word);
  auto ends_with = [&](std::string_view suf) {
    return w.size() > suf.size() + 2 && w.compare(w.size() - suf.size(), suf.size(), suf) == 0;
  };
  if (ends_with("ies")) {
    w.replace(w.size() - 3, 3, "y");
  } else if (ends_with("ing")) {
    w.erase(w.size() - 3);
  } else if (ends_with("ed")) {
    w.erase(w.size() - 2);
  } else if (ends_with("es") && w[w.size() - 3] != 's') {
    w.erase(w.size() - 1);
  } else if (w.size() > 3 && w.back() == 's' && w[w.size() - 2] != 's') {
    w.pop_back();
  }
  if (w.size() > 3 && w.back() == 'e') w.pop_back();
  if (w.size() > 3 && w[w.size() - 1] == w[w.size() - 2] &&
      std::string_view("bdgmnprt").find(w.back()) != std::string_view::npos) {
    w.pop_back();
  }
  return w;
}

bool is_stopword(std::string_view word) { return stopwords().contains(word); }

bool is_negation_cue(std::string_view w) {
  if (w == "not" || w == "never" || w == "no" || w == "without" || w == "dont" ||
      w == "cant" || w == "wont") {
    return true;
  }
  return w.size() > 3 && w.substr(w.size() - 3) == "n't";
}

int lexicon_polarity(std::string_view word) {
  const auto& lex = lexicon();
  if (auto it = lex.find(word); it != lex.end()) return it->second;
  return 0;
}

double cosine(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    throw Error(ErrorCode::configuration, "cosine of vectors with different dimensions");
  }
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) return 0.0;
  return std::clamp(dot / (std::sqrt(na) * std::sqrt(nb)), -1.0, 1.0);
}

std::uint64_t fnv1a64(std::string_view data) {
  std::uint64_t h = 14695981039346656037ULL;
  for (unsigned char c : data) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

std::string content_hash(std::string_view text) {
  static constexpr char kHex[] = "0123456789abcdef";
  std::uint64_t h = fnv1a64(text);
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[static_cast<std::size_t>(i)] = kHex[h & 0xF];
    h >>= 4;
  }
  return out;
}

json analysis_to_json(const TextAnalysis& a) {
  return json{{"keywords", a.keywords},
              {"negated_keywords", a.negated_keywords},
              {"valence", to_string(a.valence)},
              {"affect", to_string(a.affect)},
              {"embedding", a.embedding}};
}

TextAnalysis analysis_from_json(const json& j) {
  TextAnalysis a;
  a.keywords = j.value("keywords", std::set<std::string>{});
  a.negated_keywords = j.value("negated_keywords", std::set<std::string>{});
  const auto valence = parse_polarity(j.value("valence", std::string("neutral")));
  if (!valence) throw Error(ErrorCode::schema, "analysis has an unknown valence");
  a.valence = *valence;
  a.affect = parse_polarity(j.value("affect", std::string(to_string(a.valence)))).value_or(a.valence);
  if (j.contains("embedding")) a.embedding = j["embedding"].get<Embedding>();
  for (const auto& k : a.negated_keywords) {
    if (!a.keywords.contains(k)) a.keywords.insert(k);
  }
  return a;
}

// ---------------------------------------------------------------------------
// OfflineProvider

OfflineProvider::OfflineProvider(int dimension) : dimension_(dimension) {
  if (dimension <= 0) throw Error(ErrorCode::configuration, "embedding dimension must be positive");
}

TextAnalysis OfflineProvider::analyze(std::string_view text) const {
  TextAnalysis out;
  const auto tokens = tokenize(text);

  std::set<std::string> plain;  // keywords with at least one un-negated occurrence
  int window = 0;
  int signed_sum = 0;
  int affect_sum = 0;
  for (const auto& tok : tokens) {
    if (tok.boundary) {
      window = 0;
      continue;
    }
    if (is_negation_cue(tok.text)) {
      window = kNegationWindow;
      continue;
    }
    const bool negated = window > 0;
    if (window > 0) --window;

    const int pol = lexicon_polarity(tok.text);
    affect_sum += pol;
    signed_sum += negated ? -pol : pol;

    if (is_stopword(tok.text)) continue;
    out.keywords.insert(tok.text);
    if (!negated) plain.insert(tok.text);
  }
  for (const auto& k : out.keywords) {
    if (!plain.contains(k)) out.negated_keywords.insert(k);
  }
  out.valence = sign_of(signed_sum);
  out.affect = sign_of(affect_sum);
  out.embedding = embed(text);
  return out;
}

Embedding OfflineProvider::embed(std::string_view text) const {
  Embedding v(static_cast<std::size_t>(dimension_), 0.0);
  std::vector<std::string> words;
  std::vector<std::string> all;
  for (const auto& t : tokenize(text)) {
    if (t.boundary) continue;
    all.push_back(t.text);
    if (!is_stopword(t.text) && !is_negation_cue(t.text)) words.push_back(t.text);
  }
  if (words.empty()) words = std::move(all);

  const auto& table = concepts();
  for (const auto& w : words) {
    const std::string padded = "#" + w + "#";
    for (std::size_t i = 0; i + 3 <= padded.size(); ++i) {
      add_feature(v, "t:" + padded.substr(i, 3), 1.0);
    }
    add_feature(v, "w:" + stem(w), 2.0);
    auto it = table.find(w);
    if (it == table.end()) it = table.find(stem(w));
    if (it != table.end()) {
      for (auto c : it->second) add_feature(v, "c:" + std::string(c), 3.0);
    }
  }
  return normalize(std::move(v));
}

std::string OfflineProvider::complete(std::string_view) const {
  throw Error(ErrorCode::provider_unavailable, "offline provider does not generate free text");
}

// ---------------------------------------------------------------------------
// RemoteProvider

RemoteProvider::RemoteProvider(std::string endpoint, std::string credentials, int dimension,
                               std::chrono::milliseconds timeout)
    : endpoint_(std::move(endpoint)),
      credentials_(std::move(credentials)),
      dimension_(dimension),
      timeout_(timeout) {
  if (endpoint_.empty()) throw Error(ErrorCode::configuration, "remote provider needs an endpoint");
}

json RemoteProvider::post(const std::string& path, const json& body) const {
  httplib::Client client(endpoint_);
  client.set_connection_timeout(timeout_);
  client.set_read_timeout(timeout_);
  client.set_write_timeout(timeout_);
  httplib::Headers headers;
  if (!credentials_.empty()) headers.emplace("Authorization", "Bearer " + credentials_);

  auto res = client.Post(path, headers, body.dump(), "application/json");
  if (!res) {
    throw Error(ErrorCode::provider_unavailable,
                "provider " + endpoint_ + path + " unreachable: " + httplib::to_string(res.error()));
  }
  if (res->status != 200) {
    throw Error(ErrorCode::provider_unavailable,
                "provider " + endpoint_ + path + " returned HTTP " + std::to_string(res->status));
  }
  try {
    return json::parse(res->body);
  } catch (const json::parse_error&) {
    throw Error(ErrorCode::provider_unavailable, "provider " + endpoint_ + path + " sent malformed JSON");
  }
}

TextAnalysis RemoteProvider::analyze(std::string_view text) const {
  const json reply = post("/v1/analyze", json{{"text", text}});
  try {
    TextAnalysis a = analysis_from_json(reply);
    if (a.embedding.empty()) a.embedding = embed(text);
    return a;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::provider_unavailable, std::string("malformed analysis from provider: ") + e.what());
  }
}

Embedding RemoteProvider::embed(std::string_view text) const {
  const json reply = post("/v1/embed", json{{"text", text}, {"dimension", dimension_}});
  if (!reply.contains("embedding") || !reply["embedding"].is_array()) {
    throw Error(ErrorCode::provider_unavailable, "provider reply lacks an embedding");
  }
  return normalize(reply["embedding"].get<Embedding>());
}

std::string RemoteProvider::complete(std::string_view prompt) const {
  const json reply = post("/v1/complete", json{{"prompt", prompt}});
  if (!reply.contains("text") || !reply["text"].is_string()) {
    throw Error(ErrorCode::provider_unavailable, "provider reply lacks text");
  }
  return reply["text"].get<std::string>();
}

// ---------------------------------------------------------------------------
// ProviderConfig

ProviderConfig ProviderConfig::from_env() { return from_env(ProviderConfig{}); }

ProviderConfig ProviderConfig::from_env(ProviderConfig base) {
  const std::string kind = env_or("PUPPETCHAT_PROVIDER", base.provider_kind == ProviderKind::remote ? "remote" : "offline");
  if (kind == "remote") {
    base.provider_kind = ProviderKind::remote;
  } else if (kind == "offline") {
    base.provider_kind = ProviderKind::offline;
  } else {
    throw Error(ErrorCode::configuration, "PUPPETCHAT_PROVIDER must be 'offline' or 'remote'");
  }
  base.endpoint = env_or("PUPPETCHAT_PROVIDER_ENDPOINT", base.endpoint);
  base.credentials = env_or("PUPPETCHAT_PROVIDER_TOKEN", base.credentials);
  base.cache_path = env_or("PUPPETCHAT_EMBEDDING_CACHE", base.cache_path.string());
  return base;
}

void ProviderConfig::validate() const {
  if (provider_kind == ProviderKind::offline && !credentials.empty()) {
    throw Error(ErrorCode::configuration, "the offline provider takes no credentials");
  }
  if (provider_kind == ProviderKind::remote && endpoint.empty()) {
    throw Error(ErrorCode::configuration, "the remote provider needs an endpoint");
  }
}

// ---------------------------------------------------------------------------
// EmbeddingCache

EmbeddingCache::EmbeddingCache(std::filesystem::path path) : path_(std::move(path)) {
  if (path_.empty()) return;
  std::ifstream in(path_);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    try {
      const auto j = json::parse(line);
      entries_[j.at("key").get<std::string>()] = j.at("vector").get<Embedding>();
    } catch (const json::exception&) {
      // A torn final line from an interrupted append; everything before it is intact.
      break;
    }
  }
}

std::string EmbeddingCache::key(std::string_view provider_id, int dimension, std::string_view text) {
  return std::string(provider_id) + "/" + std::to_string(dimension) + "/" + content_hash(text);
}

std::optional<Embedding> EmbeddingCache::get(const std::string& key) const {
  std::shared_lock lock(mutex_);
  if (auto it = entries_.find(key); it != entries_.end()) return it->second;
  return std::nullopt;
}

void EmbeddingCache::put(const std::string& key, const Embedding& vector) {
  std::unique_lock lock(mutex_);
  if (entries_.contains(key)) return;
  entries_.emplace(key, vector);
  if (path_.empty()) return;
  std::ofstream out(path_, std::ios::app);
  if (!out) throw Error(ErrorCode::storage, "cannot append to embedding cache " + path_.string());
  out << json{{"key", key}, {"vector", vector}}.dump() << '\n';
}

std::size_t EmbeddingCache::size() const {
  std::shared_lock lock(mutex_);
  return entries_.size();
}

// ---------------------------------------------------------------------------
// TextInterpreter

TextInterpreter::TextInterpreter(std::shared_ptr<const TextProvider> primary, int dimension,
                                 std::shared_ptr<EmbeddingCache> cache)
    : primary_(std::move(primary)),
      offline_(std::make_shared<OfflineProvider>(dimension)),
      cache_(cache ? std::move(cache) : std::make_shared<EmbeddingCache>()),
      dimension_(dimension) {
  if (!primary_) throw Error(ErrorCode::configuration, "text interpreter needs a provider");
  if (primary_->dimension() != dimension) {
    throw Error(ErrorCode::configuration,
                "provider dimension " + std::to_string(primary_->dimension()) +
                    " does not match library dimension " + std::to_string(dimension));
  }
}

TextInterpreter TextInterpreter::offline(int dimension, std::shared_ptr<EmbeddingCache> cache) {
  return TextInterpreter(std::make_shared<OfflineProvider>(dimension), dimension, std::move(cache));
}

TextInterpreter TextInterpreter::from_config(const ProviderConfig& config, int dimension) {
  config.validate();
  auto cache = std::make_shared<EmbeddingCache>(config.cache_path);
  if (config.provider_kind == ProviderKind::remote) {
    return TextInterpreter(std::make_shared<RemoteProvider>(config.endpoint, config.credentials, dimension),
                           dimension, std::move(cache));
  }
  return TextInterpreter(std::make_shared<OfflineProvider>(dimension), dimension, std::move(cache));
}

Embedding TextInterpreter::checked(Embedding v) const {
  if (static_cast<int>(v.size()) != dimension_) {
    throw Error(ErrorCode::configuration,
                "provider returned a " + std::to_string(v.size()) + "-dimensional embedding, library expects " +
                    std::to_string(dimension_));
  }
  return v;
}

TextAnalysis TextInterpreter::analyze(std::string_view text) const {
  if (primary_->is_offline()) {
    TextAnalysis a = primary_->analyze(text);
    a.embedding = checked(std::move(a.embedding));
    return a;
  }
  const std::string key = content_hash(text);
  {
    std::lock_guard lock(analysis_mutex_);
    if (auto it = remote_analyses_.find(key); it != remote_analyses_.end()) return it->second;
  }
  TextAnalysis a = primary_->analyze(text);
  a.embedding = checked(std::move(a.embedding));
  std::lock_guard lock(analysis_mutex_);
  remote_analyses_.emplace(key, a);
  return a;
}

Interpretation TextInterpreter::interpret(std::string_view text) const {
  try {
    return {analyze(text), false};
  } catch (const Error& e) {
    if (e.code() != ErrorCode::provider_unavailable || primary_->is_offline()) throw;
  }
  return {offline_->analyze(text), true};
}

Embedding TextInterpreter::embed(std::string_view text, bool use_offline) const {
  const TextProvider& provider = use_offline ? *offline_ : *primary_;
  const std::string key = EmbeddingCache::key(provider.id(), dimension_, text);
  if (auto hit = cache_->get(key)) return *hit;
  Embedding v = checked(provider.embed(text));
  cache_->put(key, v);
  return v;
}

std::string action_embedding_text(const Action& action) {
  std::string text = action.name + ". " + action.description;
  for (const auto& k : action.keywords) text += " " + k;
  return text;
}

Embedding TextInterpreter::action_embedding(const Action& action, const ActionLibrary& library,
                                            bool use_offline) const {
  const TextProvider& provider = use_offline ? *offline_ : *primary_;
  if (action.embedding && library.embedding_provider() == provider.id() &&
      static_cast<int>(action.embedding->size()) == dimension_) {
    return *action.embedding;
  }
  return embed(action_embedding_text(action), use_offline);
}

}  // namespace puppetchat
