#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <utility>

namespace valuelens {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed text (not well-formed JSON, truncated input). Carries the
/// character offset at which parsing stopped.
class ParseError : public Error {
 public:
  ParseError(std::string message, std::size_t offset)
      : Error(std::move(message)), offset_(offset) {}
  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

/// Well-formed document that does not match the expected schema.
class SchemaError : public Error {
 public:
  SchemaError(std::string path, const std::string& message)
      : Error(path + ": " + message), path_(std::move(path)) {}
  const std::string& path() const noexcept { return path_; }

 private:
  std::string path_;
};

class NotFoundError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace valuelens
