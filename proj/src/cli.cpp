#include "valuelens/cli.hpp"

#include <CLI11.hpp>
#include <pthread.h>
#include <signal.h>

#include <ctime>
#include <sstream>
#include <thread>

#include "valuelens/api_server.hpp"
#include "valuelens/conceptualisation.hpp"
#include "valuelens/detection.hpp"
#include "valuelens/eval_harness.hpp"
#include "valuelens/file_io.hpp"

namespace valuelens {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

class UsageError : public Error {
 public:
  using Error::Error;
};

template <typename T>
void bind_optional(CLI::App& app, const std::string& name, std::optional<T>& target,
                   const std::string& help) {
  app.add_option_function<T>(name, [&target](const T& v) { target = v; }, help);
}

std::string utc_now() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

ValueTheory load_theory(const fs::path& path) {
  if (path.empty()) throw UsageError("--theory is required");
  return deserialize_theory(read_file(path));
}

std::string sanitize_id(std::string raw) {
  for (auto& c : raw) {
    if (!std::isalnum(static_cast<unsigned char>(c)) && c != '-' && c != '_') c = '-';
  }
  return raw.empty() ? "theory" : raw;
}

struct Invocation {
  std::optional<std::string> config_file;
  ConfigOverrides flags;
  const EnvLookup* env = nullptr;

  RunConfig resolve() const {
    std::optional<fs::path> file;
    if (config_file) file = *config_file;
    return resolve_config(file, overrides_from_env(*env), flags);
  }
};

int cmd_conceptualise(const Invocation& inv, bool if_changed, const std::optional<std::string>& theory_id,
                      const std::optional<std::string>& name, std::ostream& out, std::ostream& err) {
  const RunConfig cfg = inv.resolve();
  if (cfg.docs.empty()) throw UsageError("--docs is required");
  if (cfg.out.empty()) throw UsageError("--out is required");

  const auto docs = DocumentSet::load_directory(cfg.docs);
  std::optional<ValueTheory> existing;
  if (fs::exists(cfg.out)) existing = deserialize_theory(read_file(cfg.out));

  if (if_changed && existing) {
    const auto changes = detect_repo_changes(existing->source_manifest, docs);
    if (changes.empty()) {
      out << "no change: " << existing->theory_id << " v" << existing->version << " is current\n";
      return kExitOk;
    }
  }

  ConceptualiseOptions options;
  if (theory_id) {
    options.theory_id = *theory_id;
  } else if (!cfg.theory_id.empty()) {
    options.theory_id = cfg.theory_id;
  } else if (existing) {
    options.theory_id = existing->theory_id;
  } else {
    options.theory_id = sanitize_id(fs::absolute(cfg.docs).lexically_normal().filename().string());
  }
  options.theory_name = name ? *name : existing ? existing->name : options.theory_id;

  const auto backend = make_backend(cfg.conceptualise);
  const auto prompt = load_template(cfg.templates / "conceptualise.json");
  ValueTheory theory;
  try {
    theory = conceptualise(docs, prompt, *backend, options);
  } catch (const ConceptualisationError& e) {
    if (e.report()) err << e.report()->summary();
    throw;
  }
  if (existing) theory.version = existing->version + 1;
  write_file_atomically(cfg.out, serialize_theory(theory));
  out << "wrote " << cfg.out.string() << ": " << theory.theory_id << " v" << theory.version << ", "
      << theory.values.size() << " values from " << docs.documents().size() << " documents\n";
  return kExitOk;
}

int cmd_detect(const Invocation& inv, const std::optional<std::string>& text_arg,
               const std::optional<std::string>& file_arg, const std::string& text_id,
               std::ostream& out, std::ostream& err) {
  const RunConfig cfg = inv.resolve();
  if (text_arg && file_arg) throw UsageError("--text and --file are mutually exclusive");
  std::string text;
  if (text_arg) text = *text_arg;
  if (file_arg) text = read_file(*file_arg);
  if (text.find_first_not_of(" \t\r\n") == std::string::npos) {
    throw UsageError("input text is empty");
  }

  const auto theory = load_theory(cfg.theory);
  const auto templates = TemplateSet::load(cfg.templates);
  const auto detect_backend = make_backend(cfg.detect);
  std::shared_ptr<const ChatBackend> rate_backend;
  if (cfg.rate_enabled) rate_backend = make_backend(cfg.rate);

  const auto report =
      analyze(text_id, text, theory, templates, *detect_backend, rate_backend.get());
  out << render_analysis(report, theory);
  for (const auto& w : report.warnings) err << "warning: " << w << "\n";

  if (!cfg.out.empty()) {
    json doc = analysis_to_json(report);
    doc["run_config"] = cfg.to_json();
    write_file_atomically(cfg.out, doc.dump(2) + "\n");
  }
  return kExitOk;
}

int cmd_evaluate(const Invocation& inv, std::ostream& out, std::ostream& err) {
  const RunConfig cfg = inv.resolve();
  if (cfg.dataset.empty()) throw UsageError("--dataset is required");
  const auto theory = load_theory(cfg.theory);
  const auto dataset = load_dataset(cfg.dataset, theory);
  for (const auto& w : dataset.warnings) err << "warning: " << w << "\n";

  const std::size_t n = cfg.sample_size == 0 ? dataset.samples.size() : cfg.sample_size;
  const auto samples = sample_subset(dataset.samples, n, cfg.sample_seed);

  const auto prompt = load_template(cfg.templates / "detect.json");
  const auto backend = make_backend(cfg.detect);
  BatchOptions options;
  options.parallelism = cfg.parallelism;
  options.max_failure_rate = cfg.max_failure_rate;
  const auto batch = run_batch(samples, theory, prompt, *backend, options);
  for (const auto& w : batch.warnings) err << "warning: " << w << "\n";
  for (const auto& f : batch.failures) err << "failed: " << f.text_id << ": " << f.message << "\n";

  auto report = score_batch(samples, batch, theory);

  auto& md = report.run_metadata;
  md.model = cfg.detect.model_name;
  md.flavor = std::string(to_string(cfg.detect.flavor));
  md.temperature = cfg.detect.temperature;
  md.seed = cfg.detect.seed;
  md.dataset = cfg.dataset.string();
  md.dataset_size = dataset.samples.size();
  md.sample_size = samples.size();
  md.sample_seed = cfg.sample_seed;
  md.theory_id = theory.theory_id;
  md.theory_version = theory.version;
  md.generated_at = utc_now();
  md.config = cfg.to_json();

  if (!cfg.out.empty()) {
    emit_report(report, cfg.out);
    std::ostringstream tsv;
    tsv << "text_id\tgold\tpredicted\n";
    auto join = [](const std::set<std::string>& ids) {
      std::string s;
      for (const auto& id : ids) s += (s.empty() ? "" : ",") + id;
      return s;
    };
    std::map<std::string, std::set<std::string>> gold;
    for (const auto& s : samples) gold[s.text_id] = s.gold;
    for (const auto& p : batch.predictions) {
      tsv << p.text_id << "\t" << join(gold[p.text_id]) << "\t" << join(p.predicted) << "\n";
    }
    write_file_atomically(cfg.out / "predictions.tsv", tsv.str());
  }
  out << render_metrics_table({report});
  return kExitOk;
}

std::pair<std::string, int> parse_listen(const std::string& listen) {
  const auto colon = listen.rfind(':');
  if (colon == std::string::npos) throw UsageError("--listen must be host:port, got \"" + listen + "\"");
  try {
    std::size_t used = 0;
    const int port = std::stoi(listen.substr(colon + 1), &used);
    if (used != listen.size() - colon - 1 || port < 0 || port > 65535) throw std::out_of_range("port");
    return {listen.substr(0, colon), port};
  } catch (const std::exception&) {
    throw UsageError("--listen has an invalid port: \"" + listen + "\"");
  }
}

int cmd_serve(const Invocation& inv, std::ostream& out) {
  const RunConfig cfg = inv.resolve();
  const auto [host, port] = parse_listen(cfg.listen);

  // Block termination signals before any thread starts so that only the
  // waiting thread below receives them.
  sigset_t signals;
  sigemptyset(&signals);
  sigaddset(&signals, SIGINT);
  sigaddset(&signals, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &signals, nullptr);

  auto orchestrator = make_orchestrator(cfg);
  ApiServer server(*orchestrator);
  const int bound = server.bind(host, port);
  out << "listening on " << host << ":" << bound << std::endl;

  std::thread serving([&server] { server.serve(); });
  int received = 0;
  sigwait(&signals, &received);
  out << "shutting down\n";
  server.stop();
  serving.join();
  orchestrator->shutdown();
  return kExitOk;
}

int cmd_validate(const Invocation& inv, std::ostream& out) {
  const RunConfig cfg = inv.resolve();
  const auto theory = load_theory(cfg.theory);
  const auto report = validate_theory(theory);
  out << report.summary();
  if (report.ok()) out << theory.theory_id << " v" << theory.version << ": ok\n";
  return report.ok() ? kExitOk : kExitFailure;
}

int cmd_convert(const Invocation& inv, const std::string& sentences, const std::string& labels,
                std::ostream& out, std::ostream& err) {
  const RunConfig cfg = inv.resolve();
  if (cfg.out.empty()) throw UsageError("--out is required");
  const auto theory = load_theory(cfg.theory);
  const auto result = convert_valueeval(read_file(sentences), read_file(labels), theory);
  for (const auto& w : result.warnings) err << "warning: " << w << "\n";
  write_file_atomically(cfg.out, result.tsv);
  out << "wrote " << result.rows << " rows to " << cfg.out.string() << "\n";
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err,
            const EnvLookup& env) {
  CLI::App app{"Value detection over text with LLM backends", "valuelens"};
  app.require_subcommand(1);
  app.fallthrough();

  Invocation inv;
  inv.env = &env;
  auto& f = inv.flags;
  bind_optional(app, "--config", inv.config_file, "JSON run configuration file");
  bind_optional(app, "--backend-url", f.backend_url, "Base URL of the model server");
  bind_optional(app, "--flavor", f.flavor, "openai_compatible, ollama_native or scripted");
  bind_optional(app, "--model", f.model, "Model name");
  bind_optional(app, "--temperature", f.temperature, "Sampling temperature (default 0.0)");
  bind_optional(app, "--seed", f.seed, "Generation seed (default 42)");
  bind_optional(app, "--templates", f.templates, "Directory holding the prompt templates");

  auto* concept_cmd = app.add_subcommand("conceptualise", "Derive a value theory from documents");
  bind_optional(*concept_cmd, "--docs", f.docs, "Directory of foundational documents");
  bind_optional(*concept_cmd, "--out", f.out, "Theory file to write");
  bool if_changed = false;
  concept_cmd->add_flag("--if-changed", if_changed, "Skip when the documents are unchanged");
  std::optional<std::string> theory_id;
  std::optional<std::string> theory_name;
  bind_optional(*concept_cmd, "--theory-id", theory_id, "Identifier of the produced theory");
  bind_optional(*concept_cmd, "--name", theory_name, "Display name of the produced theory");

  auto* detect = app.add_subcommand("detect", "Detect and rate values in one text");
  std::optional<std::string> text;
  std::optional<std::string> text_file;
  std::string text_id = "input";
  bind_optional(*detect, "--text", text, "Text to analyse");
  bind_optional(*detect, "--file", text_file, "File holding the text to analyse");
  detect->add_option("--text-id", text_id, "Identifier recorded in the report");
  bind_optional(*detect, "--theory", f.theory, "Theory file");
  detect->add_option_function<std::string>(
      "--rate", [&f](const std::string& v) { f.rate = v == "on"; }, "Intensity rating on|off")
      ->check(CLI::IsMember({"on", "off"}));
  bind_optional(*detect, "--out", f.out, "Report file to write");

  auto* evaluate = app.add_subcommand("evaluate", "Score detection against labelled data");
  bind_optional(*evaluate, "--dataset", f.dataset, "Labelled TSV dataset");
  bind_optional(*evaluate, "--theory", f.theory, "Theory file");
  bind_optional(*evaluate, "--sample-size", f.sample_size, "Number of samples (default all)");
  bind_optional(*evaluate, "--sample-seed", f.sample_seed, "Sampling seed (default 42)");
  bind_optional(*evaluate, "--parallelism", f.parallelism, "Concurrent requests");
  bind_optional(*evaluate, "--out", f.out, "Output directory for metrics");

  auto* serve = app.add_subcommand("serve", "Run the HTTP service");
  bind_optional(*serve, "--listen", f.listen, "host:port (default 127.0.0.1:8080)");

  auto* validate = app.add_subcommand("validate", "Check a theory file");
  bind_optional(*validate, "--theory", f.theory, "Theory file");

  auto* convert = app.add_subcommand("convert-valueeval", "Convert ValueEval TSV files");
  std::string sentences;
  std::string labels;
  convert->add_option("--sentences", sentences, "Sentences TSV")->required();
  convert->add_option("--labels", labels, "Labels TSV")->required();
  bind_optional(*convert, "--theory", f.theory, "Theory file naming the value columns");
  bind_optional(*convert, "--out", f.out, "Dataset TSV to write");

  std::vector<const char*> argv{"valuelens"};
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*concept_cmd) return cmd_conceptualise(inv, if_changed, theory_id, theory_name, out, err);
    if (*detect) return cmd_detect(inv, text, text_file, text_id, out, err);
    if (*evaluate) return cmd_evaluate(inv, out, err);
    if (*serve) return cmd_serve(inv, out);
    if (*validate) return cmd_validate(inv, out);
    if (*convert) return cmd_convert(inv, sentences, labels, out, err);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitUsage;
}

}  // namespace valuelens
