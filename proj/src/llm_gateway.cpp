#include "valuelens/llm_gateway.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <thread>

#include <httplib.h>

namespace valuelens {

using nlohmann::json;
using Clock = std::chrono::steady_clock;

std::string_view to_string(Flavor flavor) {
  switch (flavor) {
    case Flavor::openai_compatible:
      return "openai_compatible";
    case Flavor::ollama_native:
      return "ollama_native";
    case Flavor::scripted:
      return "scripted";
  }
  return "unknown";
}

Flavor parse_flavor(std::string_view name) {
  if (name == "openai_compatible" || name == "openai") return Flavor::openai_compatible;
  if (name == "ollama_native" || name == "ollama") return Flavor::ollama_native;
  if (name == "scripted") return Flavor::scripted;
  throw ConfigError("unknown backend flavor \"" + std::string(name) +
                    "\" (expected openai_compatible, ollama_native or scripted)");
}

void BackendConfig::validate() const {
  if (!(temperature >= 0.0 && temperature <= 2.0)) {
    throw ConfigError("temperature must lie in [0, 2], got " + std::to_string(temperature));
  }
  if (max_retries < 0) throw ConfigError("max_retries must be >= 0");
  if (timeout.count() <= 0) throw ConfigError("timeout must be positive");
  if (std::any_of(retry_backoff.begin(), retry_backoff.end(),
                  [](auto d) { return d.count() < 0; })) {
    throw ConfigError("retry_backoff entries must be non-negative");
  }
  if (flavor == Flavor::scripted) {
    if (script.empty()) throw ConfigError("scripted backend requires a script file");
    return;
  }
  if (base_url.rfind("https://", 0) == 0) {
    throw ConfigError("https endpoints are not supported (no TLS in this build); put a local proxy "
                      "in front of \"" + base_url + "\"");
  }
  if (base_url.rfind("http://", 0) != 0) {
    throw ConfigError("base_url must start with http://, got \"" + base_url + "\"");
  }
  if (model_name.empty()) throw ConfigError("model_name is required for HTTP backends");
}

json config_to_json(const BackendConfig& config) {
  json backoff = json::array();
  for (auto d : config.retry_backoff) backoff.push_back(d.count());
  json out = {{"flavor", to_string(config.flavor)},
              {"model", config.model_name},
              {"temperature", config.temperature},
              {"seed", config.seed},
              {"timeout_ms", config.timeout.count()},
              {"max_retries", config.max_retries},
              {"retry_backoff_ms", std::move(backoff)}};
  if (config.flavor == Flavor::scripted) {
    out["script"] = config.script;
  } else {
    out["base_url"] = config.base_url;
  }
  return out;
}

BackendConfig config_from_json(const json& doc, BackendConfig base) {
  if (!doc.is_object()) throw ConfigError("backend config must be an object");
  try {
    if (doc.contains("base_url")) base.base_url = doc.at("base_url").get<std::string>();
    if (doc.contains("flavor")) base.flavor = parse_flavor(doc.at("flavor").get<std::string>());
    if (doc.contains("model")) base.model_name = doc.at("model").get<std::string>();
    if (doc.contains("temperature")) base.temperature = doc.at("temperature").get<double>();
    if (doc.contains("seed")) base.seed = doc.at("seed").get<std::int64_t>();
    if (doc.contains("timeout_ms")) {
      base.timeout = std::chrono::milliseconds(doc.at("timeout_ms").get<std::int64_t>());
    }
    if (doc.contains("max_retries")) base.max_retries = doc.at("max_retries").get<int>();
    if (doc.contains("retry_backoff_ms")) {
      base.retry_backoff.clear();
      for (const auto& ms : doc.at("retry_backoff_ms")) {
        base.retry_backoff.emplace_back(ms.get<std::int64_t>());
      }
    }
    if (doc.contains("script")) base.script = doc.at("script").get<std::string>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("invalid backend config: ") + e.what());
  }
  return base;
}

std::string user_prompt(const std::vector<ChatMessage>& messages) {
  std::string out;
  for (const auto& m : messages) {
    if (m.role != Role::user) continue;
    if (!out.empty()) out.push_back('\n');
    out += m.content;
  }
  return out;
}

namespace {

const char* role_name(Role role) { return role == Role::system ? "system" : "user"; }

void check_messages(const std::vector<ChatMessage>& messages) {
  if (messages.empty()) {
    throw GatewayError(GatewayError::Kind::invalid_request, "no messages to send");
  }
}

struct AttemptFailure {
  bool retryable;
  std::string message;
};

std::string excerpt(const std::string& body) {
  constexpr std::size_t kMax = 300;
  return body.size() <= kMax ? body : body.substr(0, kMax) + "...";
}

}  // namespace

HttpChatBackend::HttpChatBackend(BackendConfig config) : config_(std::move(config)) {
  config_.validate();
  if (config_.flavor == Flavor::scripted) {
    throw ConfigError("HttpChatBackend cannot serve the scripted flavor");
  }
  const auto scheme_end = config_.base_url.find("://");
  const auto path_start = config_.base_url.find('/', scheme_end + 3);
  scheme_host_port_ = config_.base_url.substr(0, path_start);
  path_ = endpoint_path(config_);
}

std::string HttpChatBackend::endpoint_path(const BackendConfig& config) {
  const auto scheme_end = config.base_url.find("://");
  const auto path_start =
      scheme_end == std::string::npos ? std::string::npos : config.base_url.find('/', scheme_end + 3);
  std::string prefix = path_start == std::string::npos ? "" : config.base_url.substr(path_start);
  while (!prefix.empty() && prefix.back() == '/') prefix.pop_back();

  if (config.flavor == Flavor::ollama_native) return prefix + "/api/chat";
  const bool has_version = prefix.size() >= 3 && prefix.compare(prefix.size() - 3, 3, "/v1") == 0;
  return prefix + (has_version ? "" : "/v1") + "/chat/completions";
}

json HttpChatBackend::build_payload(const BackendConfig& config,
                                    const std::vector<ChatMessage>& messages) {
  json msgs = json::array();
  for (const auto& m : messages) msgs.push_back({{"role", role_name(m.role)}, {"content", m.content}});

  if (config.flavor == Flavor::ollama_native) {
    return {{"model", config.model_name},
            {"messages", std::move(msgs)},
            {"stream", false},
            {"options", {{"temperature", config.temperature}, {"seed", config.seed}}}};
  }
  return {{"model", config.model_name},
          {"messages", std::move(msgs)},
          {"temperature", config.temperature},
          {"seed", config.seed},
          {"stream", false}};
}

ChatExchange HttpChatBackend::complete(const std::vector<ChatMessage>& messages) const {
  check_messages(messages);
  const auto body = build_payload(config_, messages).dump();

  httplib::Headers headers;
  if (config_.flavor == Flavor::openai_compatible) {
    if (const char* key = std::getenv(kApiKeyEnv); key != nullptr && *key != '\0') {
      headers.emplace("Authorization", std::string("Bearer ") + key);
    }
  }

  ChatExchange exchange;
  exchange.request = messages;
  const auto started = Clock::now();
  const int max_attempts = config_.max_retries + 1;

  for (int attempt = 1; attempt <= max_attempts; ++attempt) {
    std::optional<AttemptFailure> failure;
    {
      httplib::Client client(scheme_host_port_);
      const auto secs = std::chrono::duration_cast<std::chrono::seconds>(config_.timeout);
      const auto usecs =
          std::chrono::duration_cast<std::chrono::microseconds>(config_.timeout - secs);
      client.set_connection_timeout(secs.count(), usecs.count());
      client.set_read_timeout(secs.count(), usecs.count());
      client.set_write_timeout(secs.count(), usecs.count());

      auto result = client.Post(path_, headers, body, "application/json");
      if (!result) {
        failure = AttemptFailure{true, "transport error contacting " + scheme_host_port_ + path_ + ": " +
                                           httplib::to_string(result.error())};
      } else if (result->status >= 500 || result->status == 429) {
        failure = AttemptFailure{true, "server error " + std::to_string(result->status) + ": " +
                                           excerpt(result->body)};
      } else if (result->status < 200 || result->status >= 300) {
        failure = AttemptFailure{false, "request rejected with status " +
                                            std::to_string(result->status) + ": " +
                                            excerpt(result->body)};
      } else {
        try {
          const auto reply = json::parse(result->body);
          if (config_.flavor == Flavor::ollama_native) {
            exchange.response_content = reply.at("message").at("content").get<std::string>();
            if (reply.contains("prompt_eval_count") || reply.contains("eval_count")) {
              exchange.token_usage = TokenUsage{reply.value("prompt_eval_count", std::int64_t{0}),
                                                reply.value("eval_count", std::int64_t{0})};
            }
          } else {
            exchange.response_content =
                reply.at("choices").at(0).at("message").at("content").get<std::string>();
            if (auto usage = reply.find("usage"); usage != reply.end() && usage->is_object()) {
              exchange.token_usage = TokenUsage{usage->value("prompt_tokens", std::int64_t{0}),
                                                usage->value("completion_tokens", std::int64_t{0})};
            }
          }
        } catch (const json::exception& e) {
          failure = AttemptFailure{false, std::string("malformed reply envelope: ") + e.what() +
                                              " in " + excerpt(result->body)};
        }
      }
    }

    if (!failure) {
      exchange.attempt_count = attempt;
      exchange.latency =
          std::chrono::duration_cast<std::chrono::microseconds>(Clock::now() - started);
      return exchange;
    }
    if (!failure->retryable) {
      throw GatewayError(GatewayError::Kind::protocol, failure->message, attempt);
    }
    exchange.failed_attempts.push_back(failure->message);
    if (attempt == max_attempts) {
      throw GatewayError(GatewayError::Kind::retries_exhausted,
                         "giving up after " + std::to_string(attempt) +
                             " attempts; last failure: " + failure->message,
                         attempt);
    }
    if (!config_.retry_backoff.empty()) {
      const auto idx = std::min<std::size_t>(attempt - 1, config_.retry_backoff.size() - 1);
      std::this_thread::sleep_for(config_.retry_backoff[idx]);
    }
  }
  throw GatewayError(GatewayError::Kind::retries_exhausted, "no attempts made", 0);
}

ScriptedBackend::ScriptedBackend(BackendConfig config, std::vector<ScriptEntry> entries,
                                 std::optional<std::string> fallback, Hook hook)
    : config_(std::move(config)),
      entries_(std::move(entries)),
      fallback_(std::move(fallback)),
      hook_(std::move(hook)) {
  config_.flavor = Flavor::scripted;
  for (const auto& e : entries_) {
    if (e.reply.has_value() == e.error.has_value()) {
      throw ConfigError("script entry \"" + e.match + "\" needs exactly one of reply/error");
    }
  }
}

std::shared_ptr<ScriptedBackend> ScriptedBackend::from_json(BackendConfig config,
                                                            const json& script, Hook hook) {
  std::vector<ScriptEntry> entries;
  std::optional<std::string> fallback;
  try {
    for (const auto& e : script.at("entries")) {
      ScriptEntry entry;
      entry.match = e.at("match").get<std::string>();
      if (e.contains("reply")) entry.reply = e.at("reply").get<std::string>();
      if (e.contains("error")) entry.error = e.at("error").get<std::string>();
      entries.push_back(std::move(entry));
    }
    if (script.contains("default") && !script.at("default").is_null()) {
      fallback = script.at("default").get<std::string>();
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("invalid script: ") + e.what());
  }
  return std::make_shared<ScriptedBackend>(std::move(config), std::move(entries),
                                           std::move(fallback), std::move(hook));
}

std::shared_ptr<ScriptedBackend> ScriptedBackend::from_file(BackendConfig config, Hook hook) {
  std::ifstream in(config.script, std::ios::binary);
  if (!in) throw ConfigError("cannot read script file " + config.script);
  std::stringstream buffer;
  buffer << in.rdbuf();
  json script;
  try {
    script = json::parse(buffer.str());
  } catch (const json::parse_error& e) {
    throw ConfigError("script file " + config.script + " is not valid JSON: " + e.what());
  }
  return from_json(std::move(config), script, std::move(hook));
}

ChatExchange ScriptedBackend::complete(const std::vector<ChatMessage>& messages) const {
  check_messages(messages);
  const auto started = Clock::now();
  auto prompt = user_prompt(messages);
  {
    std::lock_guard lock(capture_mutex_);
    captured_.push_back(prompt);
  }
  if (hook_) hook_(prompt);

  const std::string* reply = nullptr;
  for (const auto& entry : entries_) {
    if (prompt.find(entry.match) == std::string::npos) continue;
    if (entry.error) {
      throw GatewayError(GatewayError::Kind::scripted_failure, "scripted failure: " + *entry.error,
                         1);
    }
    reply = &*entry.reply;
    break;
  }
  if (reply == nullptr && fallback_) reply = &*fallback_;
  if (reply == nullptr) {
    throw GatewayError(GatewayError::Kind::no_script_match,
                       "no script entry matches the prompt and no default reply is set", 1);
  }

  ChatExchange exchange;
  exchange.request = messages;
  exchange.response_content = *reply;
  exchange.attempt_count = 1;
  exchange.latency = std::chrono::duration_cast<std::chrono::microseconds>(Clock::now() - started);
  return exchange;
}

std::vector<std::string> ScriptedBackend::captured_prompts() const {
  std::lock_guard lock(capture_mutex_);
  return captured_;
}

std::shared_ptr<const ChatBackend> make_backend(const BackendConfig& config) {
  config.validate();
  if (config.flavor == Flavor::scripted) return ScriptedBackend::from_file(config);
  return std::make_shared<HttpChatBackend>(config);
}

}  // namespace valuelens
