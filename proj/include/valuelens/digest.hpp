#pragma once

#include <string>
#include <string_view>

namespace valuelens {

/// Lowercase hex SHA-256 of `content`. Used for document manifests.
std::string content_digest(std::string_view content);

}  // namespace valuelens
