#pragma once

#include <chrono>
#include <cstdint>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "valuelens/errors.hpp"

namespace valuelens {

enum class Flavor { openai_compatible, ollama_native, scripted };

std::string_view to_string(Flavor flavor);
/// Throws ConfigError on unknown names.
Flavor parse_flavor(std::string_view name);

/// Environment variable holding the bearer token for openai_compatible servers.
inline constexpr const char* kApiKeyEnv = "VALUELENS_API_KEY";

struct BackendConfig {
  std::string base_url;
  Flavor flavor = Flavor::openai_compatible;
  std::string model_name;
  double temperature = 0.0;
  std::int64_t seed = 42;
  std::chrono::milliseconds timeout{120'000};
  int max_retries = 2;
  /// Sleep before retry k (0-based) is retry_backoff[min(k, size - 1)].
  std::vector<std::chrono::milliseconds> retry_backoff{std::chrono::milliseconds(500),
                                                       std::chrono::milliseconds(2000)};
  /// Script file for the scripted flavor; base_url is ignored for it.
  std::string script;

  /// Throws ConfigError when an invariant is violated.
  void validate() const;
};

nlohmann::json config_to_json(const BackendConfig& config);
/// Overlays the keys present in `doc` onto `base`.
BackendConfig config_from_json(const nlohmann::json& doc, BackendConfig base = {});

enum class Role { system, user };

struct ChatMessage {
  Role role = Role::user;
  std::string content;

  bool operator==(const ChatMessage&) const = default;
};

struct TokenUsage {
  std::int64_t prompt = 0;
  std::int64_t completion = 0;

  bool operator==(const TokenUsage&) const = default;
};

/// One completed call, recorded verbatim for audit.
struct ChatExchange {
  std::vector<ChatMessage> request;
  std::string response_content;
  std::chrono::microseconds latency{0};
  int attempt_count = 1;
  std::optional<TokenUsage> token_usage;
  /// Failure messages of the attempts that preceded the successful one.
  std::vector<std::string> failed_attempts;
};

class GatewayError : public Error {
 public:
  enum class Kind {
    invalid_request,
    protocol,           // non-retryable: 4xx, malformed envelope
    retries_exhausted,  // last failure was retryable
    no_script_match,
    scripted_failure,
  };

  GatewayError(Kind kind, std::string message, int attempts = 0)
      : Error(std::move(message)), kind_(kind), attempts_(attempts) {}

  Kind kind() const noexcept { return kind_; }
  int attempts() const noexcept { return attempts_; }

 private:
  Kind kind_;
  int attempts_;
};

/// A chat-completion endpoint. Implementations are reentrant.
class ChatBackend {
 public:
  virtual ~ChatBackend() = default;
  virtual ChatExchange complete(const std::vector<ChatMessage>& messages) const = 0;
  virtual const BackendConfig& config() const = 0;
};

/// Builds the backend described by `config` (validating it first).
std::shared_ptr<const ChatBackend> make_backend(const BackendConfig& config);

/// HTTP client for the two wire flavors.
class HttpChatBackend final : public ChatBackend {
 public:
  explicit HttpChatBackend(BackendConfig config);

  ChatExchange complete(const std::vector<ChatMessage>& messages) const override;
  const BackendConfig& config() const override { return config_; }

  /// Request body in the flavor's native shape.
  static nlohmann::json build_payload(const BackendConfig& config,
                                      const std::vector<ChatMessage>& messages);
  /// Endpoint path (including any prefix carried by base_url).
  static std::string endpoint_path(const BackendConfig& config);

 private:
  BackendConfig config_;
  std::string scheme_host_port_;
  std::string path_;
};

struct ScriptEntry {
  /// Substring searched for in the concatenated user messages.
  std::string match;
  /// Exactly one of reply/error is set.
  std::optional<std::string> reply;
  std::optional<std::string> error;
};

/// Deterministic stand-in for an inference server.
class ScriptedBackend final : public ChatBackend {
 public:
  using Hook = std::function<void(const std::string& user_prompt)>;

  ScriptedBackend(BackendConfig config, std::vector<ScriptEntry> entries,
                  std::optional<std::string> fallback = std::nullopt, Hook hook = {});

  /// Loads {"entries": [{"match", "reply" | "error"}], "default": ...}.
  static std::shared_ptr<ScriptedBackend> from_json(BackendConfig config,
                                                    const nlohmann::json& script, Hook hook = {});
  static std::shared_ptr<ScriptedBackend> from_file(BackendConfig config, Hook hook = {});

  ChatExchange complete(const std::vector<ChatMessage>& messages) const override;
  const BackendConfig& config() const override { return config_; }

  /// Every user prompt seen so far, in call order.
  std::vector<std::string> captured_prompts() const;

 private:
  BackendConfig config_;
  const std::vector<ScriptEntry> entries_;
  const std::optional<std::string> fallback_;
  Hook hook_;
  mutable std::mutex capture_mutex_;
  mutable std::vector<std::string> captured_;
};

/// Concatenation of all user-role message contents, newline separated.
std::string user_prompt(const std::vector<ChatMessage>& messages);

}  // namespace valuelens
