#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <shared_mutex>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "puppetchat/action_library.hpp"

namespace puppetchat {

/// Result of interpreting one utterance.
///
/// `valence` is the negation-aware polarity ("I don't love you" is negative).
/// `affect` is the polarity of the utterance's emotional vocabulary with
/// negation ignored; emotional alignment against an action compares this one,
/// so negation moves the keyword term and leaves the alignment term alone.
struct TextAnalysis {
  std::set<std::string> keywords;
  std::set<std::string> negated_keywords;
  Valence valence = Valence::neutral;
  Valence affect = Valence::neutral;
  Embedding embedding;

  bool operator==(const TextAnalysis&) const = default;
};

nlohmann::json analysis_to_json(const TextAnalysis& a);
TextAnalysis analysis_from_json(const nlohmann::json& j);

// Lexical helpers shared by the offline provider and the narrative engine.
struct Token {
  std::string text;
  bool boundary = false;  // clause punctuation; closes any negation scope
};
std::vector<Token> tokenize(std::string_view text);
std::string stem(std::string_view word);
bool is_stopword(std::string_view word);
bool is_negation_cue(std::string_view word);
/// Signed lexicon weight for a word, 0 when the word carries no affect.
int lexicon_polarity(std::string_view word);

double cosine(std::span<const double> a, std::span<const double> b);
std::uint64_t fnv1a64(std::string_view data);
std::string content_hash(std::string_view text);

/// A text understanding backend: analysis, embeddings and free-form
/// completion. Implementations must be safe to call concurrently.
class TextProvider {
 public:
  virtual ~TextProvider() = default;
  virtual std::string id() const = 0;
  virtual int dimension() const = 0;
  virtual bool is_offline() const = 0;
  virtual TextAnalysis analyze(std::string_view text) const = 0;
  virtual Embedding embed(std::string_view text) const = 0;
  /// Throws Error(provider_unavailable) when the backend cannot generate.
  virtual std::string complete(std::string_view prompt) const = 0;
};

/// Deterministic, dependency-free provider.
///
/// Keywords are content tokens; a negation cue (not, don't, never, no, n't,
/// without) negates the next three tokens of its clause. Valence is the sign
/// of the summed lexicon weights with negated hits flipped. Embeddings are
/// signed feature hashes of character trigrams, whole words and a small
/// concept table, L2-normalised to the configured dimension.
class OfflineProvider final : public TextProvider {
 public:
  static constexpr std::string_view kId = "offline-trigram-v1";
  static constexpr int kNegationWindow = 3;

  explicit OfflineProvider(int dimension);

  std::string id() const override { return std::string(kId); }
  int dimension() const override { return dimension_; }
  bool is_offline() const override { return true; }
  TextAnalysis analyze(std::string_view text) const override;
  Embedding embed(std::string_view text) const override;
  std::string complete(std::string_view prompt) const override;

 private:
  int dimension_;
};

/// JSON-over-HTTP provider. Endpoints: POST /v1/analyze {text},
/// POST /v1/embed {text, dimension}, POST /v1/complete {prompt}.
class RemoteProvider final : public TextProvider {
 public:
  RemoteProvider(std::string endpoint, std::string credentials, int dimension,
                 std::chrono::milliseconds timeout = std::chrono::milliseconds(5000));

  std::string id() const override { return "remote:" + endpoint_; }
  int dimension() const override { return dimension_; }
  bool is_offline() const override { return false; }
  TextAnalysis analyze(std::string_view text) const override;
  Embedding embed(std::string_view text) const override;
  std::string complete(std::string_view prompt) const override;

 private:
  nlohmann::json post(const std::string& path, const nlohmann::json& body) const;

  std::string endpoint_;
  std::string credentials_;
  int dimension_;
  std::chrono::milliseconds timeout_;
};

enum class ProviderKind { offline, remote };

struct ProviderConfig {
  ProviderKind provider_kind = ProviderKind::offline;
  std::string endpoint;
  std::string credentials;
  std::filesystem::path cache_path;

  /// PUPPETCHAT_PROVIDER (offline|remote), PUPPETCHAT_PROVIDER_ENDPOINT,
  /// PUPPETCHAT_PROVIDER_TOKEN, PUPPETCHAT_EMBEDDING_CACHE.
  static ProviderConfig from_env();
  static ProviderConfig from_env(ProviderConfig base);
  void validate() const;
};

/// Persistent embedding cache keyed by (provider id, dimension, content hash).
/// The file is an append-only list of JSON lines; later lines win.
class EmbeddingCache {
 public:
  EmbeddingCache() = default;
  explicit EmbeddingCache(std::filesystem::path path);

  static std::string key(std::string_view provider_id, int dimension, std::string_view text);

  std::optional<Embedding> get(const std::string& key) const;
  void put(const std::string& key, const Embedding& vector);
  std::size_t size() const;

 private:
  std::filesystem::path path_;
  mutable std::shared_mutex mutex_;
  std::unordered_map<std::string, Embedding> entries_;
};

struct Interpretation {
  TextAnalysis analysis;
  bool degraded = false;  // primary provider failed, offline result returned
};

/// Front door for text understanding: a primary provider, the offline
/// fallback, and the caches.
class TextInterpreter {
 public:
  TextInterpreter(std::shared_ptr<const TextProvider> primary, int dimension,
                  std::shared_ptr<EmbeddingCache> cache = nullptr);

  static TextInterpreter offline(int dimension, std::shared_ptr<EmbeddingCache> cache = nullptr);
  static TextInterpreter from_config(const ProviderConfig& config, int dimension);

  /// Primary provider only; remote failures propagate.
  TextAnalysis analyze(std::string_view text) const;
  /// Primary provider, degrading to offline on provider failure.
  Interpretation interpret(std::string_view text) const;

  /// Cached embedding; `use_offline` routes through the fallback provider
  /// (degraded mode) so query and action vectors share one space.
  Embedding embed(std::string_view text, bool use_offline = false) const;
  /// The action's stored embedding when it was produced by the provider in
  /// use, otherwise an on-demand embedding of its description and keywords.
  Embedding action_embedding(const Action& action, const ActionLibrary& library,
                             bool use_offline = false) const;

  const TextProvider& provider() const { return *primary_; }
  const TextProvider& offline_provider() const { return *offline_; }
  std::shared_ptr<const TextProvider> provider_ptr() const { return primary_; }
  int dimension() const { return dimension_; }

 private:
  Embedding checked(Embedding v) const;

  std::shared_ptr<const TextProvider> primary_;
  std::shared_ptr<const TextProvider> offline_;
  std::shared_ptr<EmbeddingCache> cache_;
  int dimension_;

  mutable std::mutex analysis_mutex_;
  mutable std::unordered_map<std::string, TextAnalysis> remote_analyses_;
};

std::string action_embedding_text(const Action& action);

}  // namespace puppetchat
