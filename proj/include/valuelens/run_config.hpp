#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "valuelens/llm_gateway.hpp"
#include "valuelens/orchestrator.hpp"

namespace valuelens {

/// Settings that flags and environment variables may override. Backend
/// fields apply to every stage (conceptualise, detect, rate).
struct ConfigOverrides {
  std::optional<std::string> backend_url;
  std::optional<std::string> flavor;
  std::optional<std::string> model;
  std::optional<double> temperature;
  std::optional<std::int64_t> seed;
  std::optional<std::string> theory;
  std::optional<std::string> docs;
  std::optional<std::string> templates;
  std::optional<std::string> dataset;
  std::optional<std::size_t> sample_size;
  std::optional<std::uint64_t> sample_seed;
  std::optional<std::size_t> parallelism;
  std::optional<bool> rate;
  std::optional<std::string> out;
  std::optional<std::string> listen;
};

using EnvLookup = std::function<const char*(const char*)>;

/// Reads VALUELENS_BACKEND_URL, VALUELENS_FLAVOR, VALUELENS_MODEL,
/// VALUELENS_TEMPERATURE, VALUELENS_SEED, VALUELENS_THEORY, VALUELENS_DOCS,
/// VALUELENS_TEMPLATES, VALUELENS_DATASET, VALUELENS_SAMPLE_SIZE,
/// VALUELENS_SAMPLE_SEED, VALUELENS_PARALLELISM, VALUELENS_RATE,
/// VALUELENS_OUT and VALUELENS_LISTEN. Throws ConfigError on bad numbers.
ConfigOverrides overrides_from_env(const EnvLookup& lookup);

/// Fully resolved configuration of one command invocation.
struct RunConfig {
  BackendConfig conceptualise;
  BackendConfig detect;
  BackendConfig rate;

  std::filesystem::path theory;
  std::filesystem::path docs;
  std::filesystem::path templates;
  std::filesystem::path dataset;
  std::filesystem::path out;
  std::string theory_id;

  /// 0 means the whole dataset.
  std::size_t sample_size = 0;
  std::uint64_t sample_seed = 42;
  std::size_t parallelism = 1;
  double max_failure_rate = 0.5;
  bool rate_enabled = true;

  std::string listen = "127.0.0.1:8080";
  std::filesystem::path store_dir;
  std::filesystem::path results_dir;
  std::chrono::milliseconds poll_interval{0};
  std::vector<TheorySource> theories;

  nlohmann::json to_json() const;
};

/// Default template directory baked in at build time.
std::filesystem::path default_templates_dir();

/// Precedence: flags > environment > config file > built-in defaults.
/// Relative paths inside the config file resolve against its directory.
RunConfig resolve_config(const std::optional<std::filesystem::path>& config_file,
                         const ConfigOverrides& env, const ConfigOverrides& flags);

/// Orchestrator wired from a resolved config (store, results, theories,
/// per-stage backends, templates).
std::unique_ptr<Orchestrator> make_orchestrator(const RunConfig& config);

}  // namespace valuelens
