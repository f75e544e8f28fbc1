#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "valuelens/llm_gateway.hpp"
#include "valuelens/prompt_template.hpp"
#include "valuelens/value_spec.hpp"

namespace valuelens {

struct Document {
  std::string id;
  std::string content;
};

/// Foundational documents of one theory plus their content manifest.
class DocumentSet {
 public:
  DocumentSet() = default;
  /// Throws Error on duplicate identifiers.
  explicit DocumentSet(std::vector<Document> documents);

  /// Reads every *.txt / *.md / *.markdown file directly inside `dir`,
  /// ordered by file name; the file name is the identifier.
  static DocumentSet load_directory(const std::filesystem::path& dir);

  const std::vector<Document>& documents() const noexcept { return documents_; }
  const std::vector<SourceDocument>& manifest() const noexcept { return manifest_; }
  bool empty() const noexcept { return documents_.empty(); }
  std::size_t total_size() const;

 private:
  std::vector<Document> documents_;
  std::vector<SourceDocument> manifest_;
};

struct ChangeReport {
  std::vector<std::string> added;
  std::vector<std::string> removed;
  std::vector<std::string> modified;

  bool empty() const noexcept { return added.empty() && removed.empty() && modified.empty(); }
  bool operator==(const ChangeReport&) const = default;
};

/// Pure digest comparison; identifiers are reported in sorted order.
ChangeReport detect_repo_changes(const std::vector<SourceDocument>& stored,
                                 const DocumentSet& current);

class ConceptualisationError : public Error {
 public:
  enum class Kind { empty_documents, oversize, wrong_template, extraction, invalid_reply, validation };

  ConceptualisationError(Kind kind, std::string message,
                         std::optional<ValidationReport> report = std::nullopt)
      : Error(std::move(message)), kind_(kind), report_(std::move(report)) {}

  Kind kind() const noexcept { return kind_; }
  const std::optional<ValidationReport>& report() const noexcept { return report_; }

 private:
  Kind kind_;
  std::optional<ValidationReport> report_;
};

struct ConceptualiseOptions {
  std::string theory_id;
  std::string theory_name;
  /// Upper bound on the rendered prompt; larger document sets are rejected.
  std::size_t max_prompt_chars = 400'000;
};

/// Renders the conceptualise template over all documents, asks the model
/// once (plus one format re-ask if the reply does not extract) and maps the
/// reply into a validated theory with version 1.
ValueTheory conceptualise(const DocumentSet& docs, const PromptTemplate& prompt,
                          const ChatBackend& backend, const ConceptualiseOptions& options);

/// Reminder appended as an extra user message when the first reply did not
/// contain a parseable document.
extern const char* const kFormatReminder;

}  // namespace valuelens
