#include "valuelens/conceptualisation.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "valuelens/digest.hpp"
#include "valuelens/structured_output.hpp"

namespace valuelens {

using nlohmann::json;

const char* const kFormatReminder =
    "Your previous reply could not be read as a JSON document. Reply again with only the JSON "
    "document in the requested format, with no commentary before or after it.";

DocumentSet::DocumentSet(std::vector<Document> documents) : documents_(std::move(documents)) {
  std::set<std::string> seen;
  manifest_.reserve(documents_.size());
  for (const auto& doc : documents_) {
    if (!seen.insert(doc.id).second) throw Error("duplicate document identifier \"" + doc.id + "\"");
    manifest_.push_back({doc.id, content_digest(doc.content)});
  }
}

DocumentSet DocumentSet::load_directory(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  std::error_code ec;
  if (!fs::is_directory(dir, ec)) throw Error("document directory not found: " + dir.string());

  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    const auto ext = entry.path().extension().string();
    if (ext == ".txt" || ext == ".md" || ext == ".markdown") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());

  std::vector<Document> docs;
  for (const auto& path : files) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot read document " + path.string());
    std::stringstream buffer;
    buffer << in.rdbuf();
    docs.push_back({path.filename().string(), buffer.str()});
  }
  return DocumentSet(std::move(docs));
}

std::size_t DocumentSet::total_size() const {
  std::size_t n = 0;
  for (const auto& d : documents_) n += d.content.size();
  return n;
}

ChangeReport detect_repo_changes(const std::vector<SourceDocument>& stored,
                                 const DocumentSet& current) {
  std::map<std::string, std::string> before;
  for (const auto& s : stored) before.emplace(s.document_id, s.digest);
  std::map<std::string, std::string> after;
  for (const auto& s : current.manifest()) after.emplace(s.document_id, s.digest);

  ChangeReport report;
  for (const auto& [id, digest] : after) {
    auto it = before.find(id);
    if (it == before.end()) {
      report.added.push_back(id);
    } else if (it->second != digest) {
      report.modified.push_back(id);
    }
  }
  for (const auto& [id, digest] : before) {
    if (!after.count(id)) report.removed.push_back(id);
  }
  return report;
}

namespace {

std::string render_documents(const DocumentSet& docs) {
  std::string out;
  for (const auto& doc : docs.documents()) {
    out += "=== Document: " + doc.id + " ===\n";
    out += doc.content;
    if (out.empty() || out.back() != '\n') out.push_back('\n');
  }
  return out;
}

std::size_t prompt_size(const std::vector<ChatMessage>& messages) {
  std::size_t n = 0;
  for (const auto& m : messages) n += m.content.size();
  return n;
}

ValueTheory map_reply(const json& reply, const DocumentSet& docs,
                      const ConceptualiseOptions& options) {
  const json* values = nullptr;
  if (reply.is_array()) {
    values = &reply;
  } else if (reply.is_object() && reply.contains("values")) {
    values = &reply.at("values");
  }
  if (values == nullptr || !values->is_array()) {
    throw ConceptualisationError(ConceptualisationError::Kind::invalid_reply,
                                 "reply does not contain a values array");
  }

  ValueTheory theory;
  theory.theory_id = options.theory_id;
  theory.name = options.theory_name;
  if (theory.name.empty() && reply.is_object() && reply.contains("name") &&
      reply.at("name").is_string()) {
    theory.name = reply.at("name").get<std::string>();
  }
  theory.version = 1;
  theory.revised_by_expert = false;
  theory.source_manifest = docs.manifest();
  try {
    for (std::size_t i = 0; i < values->size(); ++i) {
      theory.values.push_back(
          value_spec_from_json((*values)[i], "values[" + std::to_string(i) + "]"));
    }
  } catch (const SchemaError& e) {
    throw ConceptualisationError(ConceptualisationError::Kind::invalid_reply,
                                 std::string("reply does not match the specification format: ") +
                                     e.what());
  }
  return theory;
}

}  // namespace

ValueTheory conceptualise(const DocumentSet& docs, const PromptTemplate& prompt,
                          const ChatBackend& backend, const ConceptualiseOptions& options) {
  if (docs.empty()) {
    throw ConceptualisationError(ConceptualisationError::Kind::empty_documents,
                                 "no foundational documents to conceptualise");
  }
  if (prompt.kind != TemplateKind::conceptualise) {
    throw ConceptualisationError(ConceptualisationError::Kind::wrong_template,
                                 "conceptualise needs the conceptualise template, got " +
                                     std::string(to_string(prompt.kind)));
  }

  auto messages = prompt.render({{"documents", render_documents(docs)}});
  if (const auto size = prompt_size(messages); size > options.max_prompt_chars) {
    throw ConceptualisationError(
        ConceptualisationError::Kind::oversize,
        "document set renders to " + std::to_string(size) + " prompt characters, above the limit of " +
            std::to_string(options.max_prompt_chars) + "; split the theory's documents");
  }

  json reply;
  try {
    reply = extract_structured(backend.complete(messages).response_content);
  } catch (const ExtractionError&) {
    messages.push_back({Role::user, kFormatReminder});
    try {
      reply = extract_structured(backend.complete(messages).response_content);
    } catch (const ExtractionError& e) {
      throw ConceptualisationError(ConceptualisationError::Kind::extraction,
                                   std::string("model reply unusable after one re-ask: ") + e.what());
    }
  }

  auto theory = map_reply(reply, docs, options);
  auto report = validate_theory(theory);
  if (!report.ok()) {
    throw ConceptualisationError(ConceptualisationError::Kind::validation,
                                 "conceptualised theory failed validation: " + report.summary(),
                                 std::move(report));
  }
  return theory;
}

}  // namespace valuelens
