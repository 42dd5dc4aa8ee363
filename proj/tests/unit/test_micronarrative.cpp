#include <doctest.h>

#include <algorithm>

#include "puppetchat/error.hpp"
#include "puppetchat/micronarrative.hpp"
#include "support.hpp"

using namespace puppetchat;

namespace {

const ActionLibrary& lib() { return canonical_library(); }

NarrativeEngine offline_engine() {
  return NarrativeEngine(std::make_shared<OfflineProvider>(lib().embedding_dimension()));
}

PersonalStory story(std::string text, std::int64_t version = 1) {
  PersonalStory s;
  s.user_id = "alice";
  s.version = text.empty() ? 0 : version;
  s.text = std::move(text);
  return s;
}

bool mentions(const std::string& text, const std::string& word) { return text.find(word) != std::string::npos; }

// A generating provider that is either down or answers with a fixed caption.
class ScriptedProvider final : public TextProvider {
 public:
  explicit ScriptedProvider(std::optional<std::string> reply) : reply_(std::move(reply)) {}
  std::string id() const override { return "scripted"; }
  int dimension() const override { return 256; }
  bool is_offline() const override { return false; }
  TextAnalysis analyze(std::string_view text) const override { return OfflineProvider(256).analyze(text); }
  Embedding embed(std::string_view text) const override { return OfflineProvider(256).embed(text); }
  std::string complete(std::string_view) const override {
    if (!reply_) throw Error(ErrorCode::provider_unavailable, "down");
    return *reply_;
  }

 private:
  std::optional<std::string> reply_;
};

}  // namespace

TEST_CASE("propose_tags gives five tags in each of four categories") {
  const auto engine = offline_engine();
  for (const auto& s : {story(""), story("I adore my cat and run a marathon every spring"),
                        story("quiet, bookish, I drink too much coffee and hate mornings")}) {
    const auto tags = engine.propose_tags(s);
    for (auto c : kTagCategories) {
      CHECK(tags.category(c).size() == kTagsPerCategory);
      const std::set<std::string> unique(tags.category(c).begin(), tags.category(c).end());
      CHECK(unique.size() == kTagsPerCategory);
    }
  }
}

TEST_CASE("a story mentioning a cat proposes the cat tag") {
  const auto tags = offline_engine().propose_tags(story("My cat sleeps on my keyboard all day."));
  const auto& likes = tags.likes_dislikes;
  CHECK(std::find(likes.begin(), likes.end(), "cat") != likes.end());
}

TEST_CASE("tag proposal is deterministic") {
  const auto s = story("Weekend hikes, spicy noodles, and my two dogs");
  const auto a = offline_engine().propose_tags(s);
  const auto b = offline_engine().propose_tags(s);
  CHECK(a == b);
  CHECK(tagset_to_json(a).dump() == tagset_to_json(b).dump());
  CHECK(offline_engine().propose_tags(story("")) == NarrativeEngine::offline_tags(story("")));
}

TEST_CASE("empty story and no tags: the neutral caption for every action") {
  const auto engine = offline_engine();
  CHECK(engine.generate(lib().at("hug"), story(""), {}, {}, &lib()).text == "Sending you a warm hug");
  for (const auto& [id, action] : lib().actions()) {
    CHECK(PhraseTable::canonical().contains(id));
    const auto m = engine.generate(action, story(""), {}, {}, &lib());
    CHECK(m.text == PhraseTable::canonical().phrase_for(action));
    CHECK(m.generated_by == GeneratedBy::offline_template);
    CHECK_FALSE(m.edited);
    CHECK(m.action_id == id);
  }
}

TEST_CASE("tags shape the caption") {
  const auto engine = offline_engine();
  const auto cat = engine.generate(lib().at("wipe-others-tears"), story(""), {}, {"cat"}, &lib());
  CHECK(mentions(cat.text, "cat"));
  CHECK(mentions(cat.text, "tears"));
  CHECK(cat.tags_used == std::vector<std::string>{"cat"});

  const auto run = engine.generate(lib().at("high-five"), story(""), {}, {"marathon"}, &lib());
  CHECK(mentions(run.text, "marathon"));
  CHECK(mentions(run.text, "High-five"));
}

TEST_CASE("captions respect the length limit") {
  const std::vector<std::string> tags{std::string(150, 'a'), std::string(150, 'b')};
  for (const auto& [id, action] : lib().actions()) {
    const auto m = offline_engine().generate(action, story(""), {}, tags, &lib());
    CHECK(utf8_length(m.text) <= kMaxCaptionLength);
  }
}

TEST_CASE("context echo mentions the partner's last action") {
  ExchangeRecord r;
  r.record_id = 1;
  r.conversation_id = "dm:alice:bob";
  r.sender_id = "bob";
  r.kind = ExchangeKind::action_only_status;
  r.action_id = "cry";
  const std::vector<ExchangeRecord> ctx{r};
  const auto engine = offline_engine();
  const auto with = engine.generate(lib().at("hug"), story(""), ctx, {}, &lib());
  const auto without = engine.generate(lib().at("hug"), story(""), {}, {}, &lib());
  CHECK(with.text != without.text);
  CHECK(with.text == engine.generate(lib().at("hug"), story(""), ctx, {}, &lib()).text);
}

TEST_CASE("regenerate") {
  const auto engine = offline_engine();
  const auto& hug = lib().at("hug");
  const auto s = story("I love long walks", 3);
  const auto first = engine.generate(hug, s, {}, {"walks"}, &lib());

  const auto added = engine.regenerate(first, hug, {"walks", "sunsets"}, s, {}, &lib());
  CHECK(added.text != first.text);
  CHECK(engine.regenerate(first, hug, {"walks"}, s, {}, &lib()) == first);

  const auto s2 = story("I love long walks and rainy days", 4);
  CHECK(engine.regenerate(first, hug, {"walks"}, s2, {}, &lib()).story_version == 4);

  CHECK_THROWS_AS(engine.regenerate(first, lib().at("cry"), {}, s, {}, &lib()), Error);
}

TEST_CASE("user edits are stored verbatim and are terminal") {
  const auto engine = offline_engine();
  const auto& hug = lib().at("hug");
  const auto first = engine.generate(hug, story(""), {}, {"cat"}, &lib());

  const auto edited = NarrativeEngine::apply_user_edit(first, "someone went missing today...");
  CHECK(edited.text == "someone went missing today...");
  CHECK(edited.generated_by == GeneratedBy::user_edit);
  CHECK(edited.edited);
  CHECK(edited.action_id == "hug");

  try {
    NarrativeEngine::apply_user_edit(first, "");
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::invalid_argument);
  }
  CHECK_THROWS_AS(NarrativeEngine::apply_user_edit(first, std::string(201, 'x')), Error);

  const auto again = engine.regenerate(edited, hug, {"cat"}, story(""), {}, &lib());
  CHECK(again == first);
  CHECK_FALSE(mentions(again.text, "missing"));
}

TEST_CASE("provider captions and fallback") {
  NarrativeEngine good(std::make_shared<ScriptedProvider>("\"A paw-sized hug for you\""));
  const auto m = good.generate(lib().at("hug"), story(""), {}, {"cat"}, &lib());
  CHECK(m.text == "A paw-sized hug for you");
  CHECK(m.generated_by == GeneratedBy::provider);

  NarrativeEngine down(std::make_shared<ScriptedProvider>(std::nullopt));
  const auto f = down.generate(lib().at("hug"), story(""), {}, {}, &lib());
  CHECK(f.text == "Sending you a warm hug");
  CHECK(f.generated_by == GeneratedBy::offline_template);
  CHECK(down.propose_tags(story("cat")) == NarrativeEngine::offline_tags(story("cat")));

  NarrativeEngine rambling(std::make_shared<ScriptedProvider>(std::string(300, 'z')));
  CHECK(rambling.generate(lib().at("hug"), story(""), {}, {}, &lib()).generated_by ==
        GeneratedBy::offline_template);
}

TEST_CASE("tag selection must come from the proposal or custom tags") {
  auto tags = offline_engine().propose_tags(story("my cat"));
  tags.select({"cat"});
  CHECK(tags.selected == std::vector<std::string>{"cat"});
  CHECK_THROWS_AS(tags.select({"unicorns"}), Error);
  tags.add_custom("unicorns");
  tags.select({"cat", "unicorns"});
  CHECK(tags.selected.size() == 2);
  CHECK(tagset_from_json(tagset_to_json(tags)) == tags);
}

TEST_CASE("story book versions and persistence") {
  pctest::TempDir dir;
  const auto file = dir.path() / "stories.jsonl";
  {
    StoryBook book(file);
    CHECK(book.latest("alice").version == 0);
    CHECK(book.update("alice", "first", 10).version == 1);
    CHECK(book.update("alice", "second", 20).version == 2);
    CHECK(book.update("bob", "hers", 30).version == 1);
    CHECK_THROWS_AS(book.update("alice", std::string(1001, 'x'), 40), Error);
    TagSet t = NarrativeEngine::offline_tags(story("cat"));
    t.select({"cat"});
    book.set_tag_selection("alice", t);
  }
  StoryBook again(file);
  CHECK(again.latest("alice").text == "second");
  CHECK(again.latest("alice").version == 2);
  CHECK(again.history("alice").size() == 2);
  REQUIRE(again.tag_selection("alice"));
  CHECK(again.tag_selection("alice")->selected == std::vector<std::string>{"cat"});
  CHECK_FALSE(again.tag_selection("bob"));
}

TEST_CASE("templates render placeholders") {
  CHECK(render_template("a {{x}} b {{y}} {{z}}", {{"x", "1"}, {"y", "2"}}) == "a 1 b 2 {{z}}");
  const auto defaults = PromptTemplates::defaults();
  CHECK(mentions(defaults.narration, "{{action_name}}"));
  CHECK(mentions(defaults.tags, "{{story}}"));
}
