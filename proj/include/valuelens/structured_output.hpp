#pragma once

#include <cstddef>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

#include "valuelens/errors.hpp"

namespace valuelens {

class ExtractionError : public Error {
 public:
  enum class Kind { no_candidate, parse_failure };

  ExtractionError(Kind kind, std::string message, std::size_t offset = 0)
      : Error(std::move(message)), kind_(kind), offset_(offset) {}

  Kind kind() const noexcept { return kind_; }
  /// Offset into the original reply where strict parsing failed.
  std::size_t offset() const noexcept { return offset_; }

 private:
  Kind kind_;
  std::size_t offset_;
};

/// Pulls a JSON document out of a model reply.
///
/// The first fenced code block wins if one exists; otherwise the first
/// balanced top-level object or array is used. Brace matching skips over
/// string literals and their escapes. The candidate is parsed strictly.
nlohmann::json extract_structured(std::string_view content);

}  // namespace valuelens
