#include "valuelens/structured_output.hpp"

#include <optional>
#include <vector>

namespace valuelens {

using nlohmann::json;

namespace {

struct Candidate {
  std::string_view text;
  std::size_t offset;  // of text within the reply
};

std::optional<Candidate> fenced_block(std::string_view content) {
  const auto open = content.find("```");
  if (open == std::string_view::npos) return std::nullopt;
  // Skip the info string ("json", "JSON", ...) up to the end of the line.
  auto body = content.find('\n', open + 3);
  if (body == std::string_view::npos) return std::nullopt;
  ++body;
  const auto close = content.find("```", body);
  if (close == std::string_view::npos) return std::nullopt;
  return Candidate{content.substr(body, close - body), body};
}

// Returns the balanced candidate starting at the first '{' or '['. If the
// document never closes, the candidate runs to the end of the reply so the
// strict parse reports where it broke off.
std::optional<Candidate> balanced_block(std::string_view content) {
  const auto start = content.find_first_of("{[");
  if (start == std::string_view::npos) return std::nullopt;

  std::vector<char> stack;
  bool in_string = false;
  bool escaped = false;
  for (std::size_t i = start; i < content.size(); ++i) {
    const char c = content[i];
    if (in_string) {
      if (escaped) {
        escaped = false;
      } else if (c == '\\') {
        escaped = true;
      } else if (c == '"') {
        in_string = false;
      }
      continue;
    }
    switch (c) {
      case '"':
        in_string = true;
        break;
      case '{':
        stack.push_back('}');
        break;
      case '[':
        stack.push_back(']');
        break;
      case '}':
      case ']':
        if (stack.empty() || stack.back() != c) {
          // Mismatched closer: hand the prefix to the strict parser.
          return Candidate{content.substr(start, i - start + 1), start};
        }
        stack.pop_back();
        if (stack.empty()) return Candidate{content.substr(start, i - start + 1), start};
        break;
      default:
        break;
    }
  }
  return Candidate{content.substr(start), start};
}

}  // namespace

json extract_structured(std::string_view content) {
  auto candidate = fenced_block(content);
  if (!candidate) candidate = balanced_block(content);
  if (!candidate) {
    throw ExtractionError(ExtractionError::Kind::no_candidate,
                          "no structured document found in model reply");
  }
  try {
    return json::parse(candidate->text.begin(), candidate->text.end());
  } catch (const json::parse_error& e) {
    const auto offset = candidate->offset + (e.byte > 0 ? e.byte - 1 : 0);
    throw ExtractionError(ExtractionError::Kind::parse_failure,
                          "structured reply does not parse at offset " + std::to_string(offset) +
                              ": " + e.what(),
                          offset);
  }
}

}  // namespace valuelens
