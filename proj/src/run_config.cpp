#include "valuelens/run_config.hpp"

#include <charconv>

#include "valuelens/file_io.hpp"

#ifndef VALUELENS_TEMPLATES_DIR
#define VALUELENS_TEMPLATES_DIR "data/templates"
#endif

namespace valuelens {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

template <typename T>
std::optional<T> env_number(const EnvLookup& lookup, const char* name) {
  const char* raw = lookup(name);
  if (raw == nullptr || *raw == '\0') return std::nullopt;
  const std::string text(raw);
  try {
    std::size_t used = 0;
    T value{};
    if constexpr (std::is_floating_point_v<T>) {
      value = static_cast<T>(std::stod(text, &used));
    } else if constexpr (std::is_signed_v<T>) {
      value = static_cast<T>(std::stoll(text, &used));
    } else {
      if (text.front() == '-') throw std::invalid_argument("negative");
      value = static_cast<T>(std::stoull(text, &used));
    }
    if (used != text.size()) throw std::invalid_argument("trailing characters");
    return value;
  } catch (const std::exception&) {
    throw ConfigError(std::string(name) + " is not a valid number: \"" + text + "\"");
  }
}

std::optional<std::string> env_string(const EnvLookup& lookup, const char* name) {
  const char* raw = lookup(name);
  if (raw == nullptr || *raw == '\0') return std::nullopt;
  return std::string(raw);
}

std::optional<bool> env_bool(const EnvLookup& lookup, const char* name) {
  auto raw = env_string(lookup, name);
  if (!raw) return std::nullopt;
  if (*raw == "on" || *raw == "true" || *raw == "1") return true;
  if (*raw == "off" || *raw == "false" || *raw == "0") return false;
  throw ConfigError(std::string(name) + " must be on/off, got \"" + *raw + "\"");
}

void apply_backend(BackendConfig& config, const ConfigOverrides& o) {
  if (o.backend_url) config.base_url = *o.backend_url;
  if (o.flavor) config.flavor = parse_flavor(*o.flavor);
  if (o.model) config.model_name = *o.model;
  if (o.temperature) config.temperature = *o.temperature;
  if (o.seed) config.seed = *o.seed;
}

void apply(RunConfig& config, const ConfigOverrides& o) {
  apply_backend(config.conceptualise, o);
  apply_backend(config.detect, o);
  apply_backend(config.rate, o);
  if (o.theory) config.theory = *o.theory;
  if (o.docs) config.docs = *o.docs;
  if (o.templates) config.templates = *o.templates;
  if (o.dataset) config.dataset = *o.dataset;
  if (o.sample_size) config.sample_size = *o.sample_size;
  if (o.sample_seed) config.sample_seed = *o.sample_seed;
  if (o.parallelism) config.parallelism = *o.parallelism;
  if (o.rate) config.rate_enabled = *o.rate;
  if (o.out) config.out = *o.out;
  if (o.listen) config.listen = *o.listen;
}

fs::path resolve_path(const fs::path& base, const json& value) {
  fs::path p = value.get<std::string>();
  return p.is_absolute() || base.empty() ? p : base / p;
}

void apply_file(RunConfig& config, const fs::path& file) {
  json doc;
  try {
    doc = json::parse(read_file(file));
  } catch (const json::parse_error& e) {
    throw ConfigError("config file " + file.string() + " is not valid JSON: " + e.what());
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
  if (!doc.is_object()) throw ConfigError("config file " + file.string() + " must hold an object");
  const auto base = file.parent_path();

  try {
    if (auto it = doc.find("backends"); it != doc.end()) {
      BackendConfig shared;
      if (it->contains("default")) shared = config_from_json(it->at("default"), shared);
      for (auto [name, target] : {std::pair{"conceptualise", &config.conceptualise},
                                  std::pair{"detect", &config.detect},
                                  std::pair{"rate", &config.rate}}) {
        *target = it->contains(name) ? config_from_json(it->at(name), shared) : shared;
        if (!target->script.empty()) target->script = resolve_path(base, target->script).string();
      }
    }
    if (doc.contains("theory")) config.theory = resolve_path(base, doc.at("theory"));
    if (doc.contains("docs")) config.docs = resolve_path(base, doc.at("docs"));
    if (doc.contains("templates")) config.templates = resolve_path(base, doc.at("templates"));
    if (doc.contains("dataset")) config.dataset = resolve_path(base, doc.at("dataset"));
    if (doc.contains("out")) config.out = resolve_path(base, doc.at("out"));
    if (doc.contains("store_dir")) config.store_dir = resolve_path(base, doc.at("store_dir"));
    if (doc.contains("results_dir")) config.results_dir = resolve_path(base, doc.at("results_dir"));
    if (doc.contains("theory_id")) config.theory_id = doc.at("theory_id").get<std::string>();
    if (doc.contains("sample_size")) config.sample_size = doc.at("sample_size").get<std::size_t>();
    if (doc.contains("sample_seed")) config.sample_seed = doc.at("sample_seed").get<std::uint64_t>();
    if (doc.contains("parallelism")) config.parallelism = doc.at("parallelism").get<std::size_t>();
    if (doc.contains("max_failure_rate")) {
      config.max_failure_rate = doc.at("max_failure_rate").get<double>();
    }
    if (doc.contains("rate")) config.rate_enabled = doc.at("rate").get<bool>();
    if (doc.contains("listen")) config.listen = doc.at("listen").get<std::string>();
    if (doc.contains("poll_interval_ms")) {
      config.poll_interval = std::chrono::milliseconds(doc.at("poll_interval_ms").get<std::int64_t>());
    }
    if (doc.contains("theories")) {
      for (const auto& t : doc.at("theories")) {
        TheorySource source;
        source.theory_id = t.at("theory_id").get<std::string>();
        source.name = t.value("name", std::string());
        if (t.contains("docs")) source.docs_dir = resolve_path(base, t.at("docs"));
        if (t.contains("seed_file")) source.seed_file = resolve_path(base, t.at("seed_file"));
        config.theories.push_back(std::move(source));
      }
    }
  } catch (const json::exception& e) {
    throw ConfigError("config file " + file.string() + ": " + e.what());
  }
}

}  // namespace

ConfigOverrides overrides_from_env(const EnvLookup& lookup) {
  ConfigOverrides o;
  o.backend_url = env_string(lookup, "VALUELENS_BACKEND_URL");
  o.flavor = env_string(lookup, "VALUELENS_FLAVOR");
  o.model = env_string(lookup, "VALUELENS_MODEL");
  o.temperature = env_number<double>(lookup, "VALUELENS_TEMPERATURE");
  o.seed = env_number<std::int64_t>(lookup, "VALUELENS_SEED");
  o.theory = env_string(lookup, "VALUELENS_THEORY");
  o.docs = env_string(lookup, "VALUELENS_DOCS");
  o.templates = env_string(lookup, "VALUELENS_TEMPLATES");
  o.dataset = env_string(lookup, "VALUELENS_DATASET");
  o.sample_size = env_number<std::size_t>(lookup, "VALUELENS_SAMPLE_SIZE");
  o.sample_seed = env_number<std::uint64_t>(lookup, "VALUELENS_SAMPLE_SEED");
  o.parallelism = env_number<std::size_t>(lookup, "VALUELENS_PARALLELISM");
  o.rate = env_bool(lookup, "VALUELENS_RATE");
  o.out = env_string(lookup, "VALUELENS_OUT");
  o.listen = env_string(lookup, "VALUELENS_LISTEN");
  return o;
}

fs::path default_templates_dir() { return VALUELENS_TEMPLATES_DIR; }

RunConfig resolve_config(const std::optional<fs::path>& config_file, const ConfigOverrides& env,
                         const ConfigOverrides& flags) {
  RunConfig config;
  config.templates = default_templates_dir();
  if (config_file) apply_file(config, *config_file);
  apply(config, env);
  apply(config, flags);
  if (config.store_dir.empty()) config.store_dir = "valuelens-store";
  if (config.results_dir.empty()) config.results_dir = config.store_dir / "results";
  return config;
}

json RunConfig::to_json() const {
  json theories_json = json::array();
  for (const auto& t : theories) {
    json entry = {{"theory_id", t.theory_id}, {"name", t.name}, {"docs", t.docs_dir.string()}};
    if (t.seed_file) entry["seed_file"] = t.seed_file->string();
    theories_json.push_back(std::move(entry));
  }
  return {{"backends",
           {{"conceptualise", config_to_json(conceptualise)},
            {"detect", config_to_json(detect)},
            {"rate", config_to_json(rate)}}},
          {"theory", theory.string()},
          {"docs", docs.string()},
          {"templates", templates.string()},
          {"dataset", dataset.string()},
          {"out", out.string()},
          {"theory_id", theory_id},
          {"sample_size", sample_size},
          {"sample_seed", sample_seed},
          {"parallelism", parallelism},
          {"max_failure_rate", max_failure_rate},
          {"rate", rate_enabled},
          {"listen", listen},
          {"store_dir", store_dir.string()},
          {"results_dir", results_dir.string()},
          {"poll_interval_ms", poll_interval.count()},
          {"theories", std::move(theories_json)}};
}

std::unique_ptr<Orchestrator> make_orchestrator(const RunConfig& config) {
  OrchestratorConfig oc;
  oc.store_dir = config.store_dir;
  oc.results_dir = config.results_dir;
  oc.theories = config.theories;
  // A lone --theory file (with optional --docs) becomes the served theory.
  if (oc.theories.empty() && !config.theory.empty()) {
    const auto seed = deserialize_theory(read_file(config.theory));
    oc.theories.push_back({seed.theory_id, seed.name, config.docs, config.theory});
  }
  oc.parallelism = config.parallelism;
  oc.poll_interval = config.poll_interval;

  Backends backends;
  backends.detect = make_backend(config.detect);
  if (config.rate_enabled) backends.rate = make_backend(config.rate);
  const bool any_docs = std::any_of(oc.theories.begin(), oc.theories.end(),
                                    [](const auto& t) { return !t.docs_dir.empty(); });
  if (any_docs) backends.conceptualise = make_backend(config.conceptualise);

  return std::make_unique<Orchestrator>(std::move(oc), TemplateSet::load(config.templates),
                                        std::move(backends));
}

}  // namespace valuelens
