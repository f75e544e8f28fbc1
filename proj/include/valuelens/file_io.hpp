#pragma once

#include <filesystem>
#include <string>
#include <string_view>

namespace valuelens {

/// Throws Error if the file cannot be read.
std::string read_file(const std::filesystem::path& path);

/// Writes to a sibling temp file, fsyncs it, then renames it over `path`.
/// Readers observe either the old or the new content, never a mix.
void write_file_atomically(const std::filesystem::path& path, std::string_view content);

}  // namespace valuelens
