#include <gtest/gtest.h>

#include "test_support.hpp"
#include "valuelens/conceptualisation.hpp"
#include "valuelens/digest.hpp"
#include "valuelens/file_io.hpp"

using namespace valuelens;
using nlohmann::json;
namespace ts = testing_support;

namespace {

DocumentSet schwartz_docs() { return DocumentSet::load_directory(ts::data_path("docs/schwartz")); }

ConceptualiseOptions schwartz_options() {
  return {"schwartz", "Schwartz refined theory of basic human values", 400'000};
}

std::shared_ptr<ScriptedBackend> fixture_backend() {
  return ts::scripted_file(ts::data_path("fixtures/conceptualise_script.json"));
}

std::string values_reply(const ValueTheory& theory) {
  json values = json::array();
  for (const auto& v : theory.values) values.push_back(value_spec_to_json(v));
  return json{{"values", values}}.dump();
}

}  // namespace

TEST(Digest, KnownSha256Vectors) {
  EXPECT_EQ(content_digest(""), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  EXPECT_EQ(content_digest("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST(DocumentSet, ManifestIsStableAcrossReads) {
  const auto a = schwartz_docs();
  const auto b = schwartz_docs();
  EXPECT_EQ(a.manifest(), b.manifest());
  ASSERT_EQ(a.manifest().size(), 3u);
  EXPECT_EQ(a.manifest()[0].document_id, "01-overview.md");
  EXPECT_EQ(a.manifest()[0].digest, content_digest(a.documents()[0].content));
}

TEST(DocumentSet, RejectsDuplicatesAndMissingDirectory) {
  EXPECT_THROW(DocumentSet({{"a", "x"}, {"a", "y"}}), Error);
  try {
    DocumentSet::load_directory("/nonexistent/docs");
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("/nonexistent/docs"), std::string::npos);
  }
}

TEST(Conceptualise, SchwartzDocumentsYieldNineteenValidatedValues) {
  const auto docs = schwartz_docs();
  const auto backend = fixture_backend();
  const auto theory = conceptualise(docs, ts::templates().conceptualise, *backend, schwartz_options());
  EXPECT_EQ(theory.values.size(), 19u);
  EXPECT_EQ(theory.version, 1);
  EXPECT_FALSE(theory.revised_by_expert);
  EXPECT_EQ(theory.source_manifest, docs.manifest());
  EXPECT_TRUE(validate_theory(theory).ok());
  EXPECT_EQ(theory, ts::schwartz());
  ASSERT_EQ(backend->captured_prompts().size(), 1u);
  EXPECT_NE(backend->captured_prompts()[0].find(docs.documents()[1].content), std::string::npos);
}

TEST(Conceptualise, IsDeterministicAndLeavesNoChanges) {
  const auto docs = schwartz_docs();
  const auto backend = fixture_backend();
  const auto a = conceptualise(docs, ts::templates().conceptualise, *backend, schwartz_options());
  const auto b = conceptualise(docs, ts::templates().conceptualise, *backend, schwartz_options());
  EXPECT_EQ(a, b);
  EXPECT_TRUE(detect_repo_changes(a.source_manifest, docs).empty());
}

TEST(Conceptualise, EmptyDocumentSet) {
  try {
    conceptualise(DocumentSet{}, ts::templates().conceptualise, *fixture_backend(),
                  schwartz_options());
    FAIL();
  } catch (const ConceptualisationError& e) {
    EXPECT_EQ(e.kind(), ConceptualisationError::Kind::empty_documents);
  }
}

TEST(Conceptualise, WrongTemplateIsRejected) {
  try {
    conceptualise(schwartz_docs(), ts::templates().detect, *fixture_backend(), schwartz_options());
    FAIL();
  } catch (const ConceptualisationError& e) {
    EXPECT_EQ(e.kind(), ConceptualisationError::Kind::wrong_template);
  }
}

TEST(Conceptualise, OversizeDocumentSetIsRejectedNotTruncated) {
  auto options = schwartz_options();
  options.max_prompt_chars = 1000;
  const auto backend = fixture_backend();
  try {
    conceptualise(schwartz_docs(), ts::templates().conceptualise, *backend, options);
    FAIL();
  } catch (const ConceptualisationError& e) {
    EXPECT_EQ(e.kind(), ConceptualisationError::Kind::oversize);
  }
  EXPECT_TRUE(backend->captured_prompts().empty());
}

TEST(Conceptualise, MissingTagsFailsValidationNamingPath) {
  auto theory = ts::schwartz();
  theory.values[4].tags.clear();
  auto reply = json::parse(values_reply(theory));
  reply["values"][4].erase("tags");
  const auto backend = ts::scripted({}, reply.dump());
  try {
    conceptualise(schwartz_docs(), ts::templates().conceptualise, *backend, schwartz_options());
    FAIL();
  } catch (const ConceptualisationError& e) {
    EXPECT_EQ(e.kind(), ConceptualisationError::Kind::validation);
    ASSERT_TRUE(e.report().has_value());
    const auto& issues = e.report()->issues;
    const bool named = std::any_of(issues.begin(), issues.end(),
                                   [](const auto& i) { return i.path == "values[4].tags"; });
    EXPECT_TRUE(named) << e.report()->summary();
  }
}

TEST(Conceptualise, OneReaskOnUnparseableReply) {
  const auto good = values_reply(ts::schwartz());
  // The re-ask carries the format reminder as an extra user message.
  const auto backend = ts::scripted({{kFormatReminder, good, std::nullopt}}, "I need more time.");
  const auto theory =
      conceptualise(schwartz_docs(), ts::templates().conceptualise, *backend, schwartz_options());
  EXPECT_EQ(theory.values.size(), 19u);
  EXPECT_EQ(backend->captured_prompts().size(), 2u);

  const auto stubborn = ts::scripted({}, "Still thinking.");
  try {
    conceptualise(schwartz_docs(), ts::templates().conceptualise, *stubborn, schwartz_options());
    FAIL();
  } catch (const ConceptualisationError& e) {
    EXPECT_EQ(e.kind(), ConceptualisationError::Kind::extraction);
  }
  EXPECT_EQ(stubborn->captured_prompts().size(), 2u);
}

TEST(Conceptualise, GatewayFailurePropagates) {
  const auto backend = ts::scripted({{"", std::nullopt, "server down"}});
  EXPECT_THROW(conceptualise(schwartz_docs(), ts::templates().conceptualise, *backend,
                             schwartz_options()),
               GatewayError);
}

TEST(RepoChanges, IdenticalModifiedAddedRemoved) {
  const auto docs = schwartz_docs();
  EXPECT_TRUE(detect_repo_changes(docs.manifest(), docs).empty());

  auto documents = docs.documents();
  documents[1].content[10] ^= 1;
  documents.push_back({"04-new.md", "new"});
  documents.erase(documents.begin());
  const auto report = detect_repo_changes(docs.manifest(), DocumentSet(documents));
  EXPECT_EQ(report.modified, (std::vector<std::string>{"02-openness-and-self-enhancement.md"}));
  EXPECT_EQ(report.added, (std::vector<std::string>{"04-new.md"}));
  EXPECT_EQ(report.removed, (std::vector<std::string>{"01-overview.md"}));
}

TEST(RepoChanges, OneCharacterEditOnDisk) {
  ts::TempDir dir;
  const auto source = schwartz_docs();
  for (const auto& d : source.documents()) write_file_atomically(dir / d.id, d.content);
  const auto before = DocumentSet::load_directory(dir.path());
  auto text = read_file(dir / "03-conservation-and-self-transcendence.md");
  text[0] = 'X';
  write_file_atomically(dir / "03-conservation-and-self-transcendence.md", text);
  const auto report = detect_repo_changes(before.manifest(), DocumentSet::load_directory(dir.path()));
  EXPECT_EQ(report.modified, (std::vector<std::string>{"03-conservation-and-self-transcendence.md"}));
  EXPECT_TRUE(report.added.empty());
  EXPECT_TRUE(report.removed.empty());
}
