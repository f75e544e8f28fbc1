#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "valuelens/llm_gateway.hpp"

namespace valuelens {

enum class TemplateKind { conceptualise, detect, rate };

std::string_view to_string(TemplateKind kind);

/// A knowledge-transfer prompt loaded from repo data. Slots are written
/// as {{name}} in the user text; the system text carries no slots.
struct PromptTemplate {
  TemplateKind kind = TemplateKind::detect;
  std::string version;
  std::string system_text;
  std::string user_text;
  std::vector<std::string> slots;

  /// Every slot appears exactly once and no unknown marker exists.
  /// Throws ConfigError otherwise.
  void validate() const;

  /// Single-pass substitution: bound content is never rescanned for
  /// markers. Throws ConfigError if a slot is unbound.
  std::vector<ChatMessage> render(const std::map<std::string, std::string>& bindings) const;
};

PromptTemplate template_from_json(const nlohmann::json& doc);
PromptTemplate load_template(const std::filesystem::path& path);

struct TemplateSet {
  PromptTemplate conceptualise;
  PromptTemplate detect;
  PromptTemplate rate;

  /// Reads conceptualise.json, detect.json and rate.json from `dir`.
  static TemplateSet load(const std::filesystem::path& dir);
};

}  // namespace valuelens
