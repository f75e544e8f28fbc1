#include "valuelens/orchestrator.hpp"

#include <iomanip>
#include <iostream>
#include <random>
#include <sstream>

#include "valuelens/file_io.hpp"

namespace valuelens {

using nlohmann::json;
namespace fs = std::filesystem;

TheoryStore::TheoryStore(fs::path root) : root_(std::move(root)) {
  fs::create_directories(root_);
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(root_)) {
    if (entry.is_regular_file() && entry.path().extension() == ".json") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  for (const auto& path : files) {
    auto theory = deserialize_theory(read_file(path));
    const auto report = validate_theory(theory);
    if (!report.ok()) throw Error("stored theory " + path.string() + " is invalid: " + report.summary());
    auto id = theory.theory_id;
    theories_[id] = std::make_shared<const ValueTheory>(std::move(theory));
  }
}

std::shared_ptr<const ValueTheory> TheoryStore::snapshot(const std::string& theory_id) const {
  std::shared_lock lock(mutex_);
  auto it = theories_.find(theory_id);
  return it == theories_.end() ? nullptr : it->second;
}

std::vector<std::shared_ptr<const ValueTheory>> TheoryStore::list() const {
  std::shared_lock lock(mutex_);
  std::vector<std::shared_ptr<const ValueTheory>> out;
  for (const auto& [_, theory] : theories_) out.push_back(theory);
  return out;
}

fs::path TheoryStore::file_for(const std::string& theory_id) const {
  return root_ / (theory_id + ".json");
}

void TheoryStore::install(ValueTheory theory) {
  auto report = validate_theory(theory);
  if (!report.ok()) throw InvalidRevisionError(std::move(report));
  if (auto current = snapshot(theory.theory_id); current && theory.version <= current->version) {
    throw Error("theory " + theory.theory_id + " version " + std::to_string(theory.version) +
                " does not advance past " + std::to_string(current->version));
  }
  write_file_atomically(file_for(theory.theory_id), serialize_theory(theory));
  auto next = std::make_shared<const ValueTheory>(std::move(theory));
  std::unique_lock lock(mutex_);
  theories_[next->theory_id] = std::move(next);
}

std::string_view to_string(JobState state) {
  switch (state) {
    case JobState::queued:
      return "queued";
    case JobState::running:
      return "running";
    case JobState::done:
      return "done";
    case JobState::failed:
      return "failed";
  }
  return "unknown";
}

json job_to_json(const AnalysisJob& job) {
  json out = {{"job_id", job.job_id},
              {"state", to_string(job.state)},
              {"request",
               {{"text_id", job.request.text_id},
                {"text", job.request.text},
                {"theory_id", job.request.theory_id},
                {"rate", job.request.rate}}},
              {"theory_version", job.theory_version}};
  if (job.result) out["result"] = analysis_to_json(*job.result);
  if (job.error) out["error"] = *job.error;
  return out;
}

AnalysisJob job_from_json(const json& doc) {
  AnalysisJob job;
  try {
    job.job_id = doc.at("job_id").get<std::string>();
    const auto state = doc.at("state").get<std::string>();
    if (state == "queued") {
      job.state = JobState::queued;
    } else if (state == "running") {
      job.state = JobState::running;
    } else if (state == "done") {
      job.state = JobState::done;
    } else if (state == "failed") {
      job.state = JobState::failed;
    } else {
      throw SchemaError("state", "unknown job state \"" + state + "\"");
    }
    const auto& req = doc.at("request");
    job.request = {req.at("text_id").get<std::string>(), req.at("text").get<std::string>(),
                   req.at("theory_id").get<std::string>(), req.at("rate").get<bool>()};
    job.theory_version = doc.at("theory_version").get<std::int64_t>();
    if (doc.contains("result")) job.result = analysis_from_json(doc.at("result"));
    if (doc.contains("error")) job.error = doc.at("error").get<std::string>();
  } catch (const json::exception& e) {
    throw SchemaError("$", std::string("invalid job document: ") + e.what());
  }
  return job;
}

json refresh_to_json(const RefreshOutcome& outcome) {
  static constexpr const char* kStatus[] = {"no_change", "updated", "failed"};
  json out = {{"theory_id", outcome.theory_id},
              {"status", kStatus[static_cast<int>(outcome.status)]},
              {"version", outcome.version},
              {"changes",
               {{"added", outcome.changes.added},
                {"removed", outcome.changes.removed},
                {"modified", outcome.changes.modified}}},
              {"expert_revisions_replaced", outcome.expert_revisions_replaced}};
  if (!outcome.message.empty()) out["message"] = outcome.message;
  if (outcome.report) out["validation"] = report_to_json(*outcome.report);
  return out;
}

Orchestrator::Orchestrator(OrchestratorConfig config, TemplateSet templates, Backends backends)
    : config_(std::move(config)),
      templates_(std::move(templates)),
      backends_(std::move(backends)),
      store_(config_.store_dir) {
  if (!backends_.detect) throw ConfigError("orchestrator needs a detect backend");
  fs::create_directories(config_.results_dir);

  for (const auto& source : config_.theories) {
    if (store_.snapshot(source.theory_id) || !source.seed_file) continue;
    auto theory = deserialize_theory(read_file(*source.seed_file));
    if (theory.theory_id != source.theory_id) {
      throw ConfigError("seed file " + source.seed_file->string() + " holds theory \"" +
                        theory.theory_id + "\", expected \"" + source.theory_id + "\"");
    }
    store_.install(std::move(theory));
  }

  std::random_device rd;
  job_counter_ = (static_cast<std::uint64_t>(rd()) << 20) & 0xffffffff00000ULL;

  const auto n = std::max<std::size_t>(1, config_.parallelism);
  for (std::size_t i = 0; i < n; ++i) workers_.emplace_back([this] { worker_loop(); });
  if (config_.poll_interval.count() > 0) poller_ = std::thread([this] { poll_loop(); });
}

Orchestrator::~Orchestrator() { shutdown(); }

void Orchestrator::shutdown() {
  {
    std::lock_guard lock(poll_mutex_);
    poll_stop_ = true;
  }
  poll_cv_.notify_all();
  if (poller_.joinable()) poller_.join();
  {
    std::lock_guard lock(jobs_mutex_);
    stopping_ = true;
  }
  jobs_cv_.notify_all();
  for (auto& w : workers_) {
    if (w.joinable()) w.join();
  }
}

std::mutex& Orchestrator::writer_lock(const std::string& theory_id) {
  std::lock_guard lock(writers_mutex_);
  auto& slot = writers_[theory_id];
  if (!slot) slot = std::make_unique<std::mutex>();
  return *slot;
}

RefreshOutcome Orchestrator::refresh_specs(const std::string& theory_id) {
  const TheorySource* source = nullptr;
  for (const auto& s : config_.theories) {
    if (s.theory_id == theory_id) source = &s;
  }
  if (source == nullptr || source->docs_dir.empty()) {
    throw NotFoundError("no document directory configured for theory \"" + theory_id + "\"");
  }

  std::lock_guard writer(writer_lock(theory_id));
  RefreshOutcome outcome;
  outcome.theory_id = theory_id;
  const auto current = store_.snapshot(theory_id);
  outcome.version = current ? current->version : 0;

  try {
    const auto docs = DocumentSet::load_directory(source->docs_dir);
    outcome.changes = detect_repo_changes(
        current ? current->source_manifest : std::vector<SourceDocument>{}, docs);
    if (current && outcome.changes.empty()) {
      outcome.status = RefreshOutcome::Status::no_change;
      return outcome;
    }
    if (!backends_.conceptualise) throw ConfigError("no conceptualise backend configured");

    ConceptualiseOptions options{theory_id, source->name.empty() && current ? current->name : source->name,
                                 config_.max_prompt_chars};
    auto theory = conceptualise(docs, templates_.conceptualise, *backends_.conceptualise, options);
    theory.version = current ? current->version + 1 : 1;
    store_.install(std::move(theory));
    outcome.status = RefreshOutcome::Status::updated;
    outcome.version = store_.snapshot(theory_id)->version;
    outcome.expert_revisions_replaced = current && current->revised_by_expert;
  } catch (const ConceptualisationError& e) {
    outcome.status = RefreshOutcome::Status::failed;
    outcome.message = e.what();
    outcome.report = e.report();
  } catch (const std::exception& e) {
    outcome.status = RefreshOutcome::Status::failed;
    outcome.message = e.what();
  }
  return outcome;
}

std::string Orchestrator::new_job_id() {
  std::ostringstream out;
  out << "job-" << std::hex << std::setw(13) << std::setfill('0') << ++job_counter_;
  return out.str();
}

std::string Orchestrator::submit(AnalysisRequest request) {
  if (normalize_for_match(request.text).empty()) throw Error("analysis text is empty");
  auto snapshot = store_.snapshot(request.theory_id);
  if (!snapshot) throw NotFoundError("unknown theory \"" + request.theory_id + "\"");
  if (request.text_id.empty()) request.text_id = "text";

  auto record = std::make_shared<JobRecord>();
  record->snapshot = std::move(snapshot);
  std::lock_guard lock(jobs_mutex_);
  if (stopping_) throw Error("orchestrator is shutting down");
  record->job.job_id = new_job_id();
  record->job.request = std::move(request);
  record->job.theory_version = record->snapshot->version;
  jobs_.emplace(record->job.job_id, record);
  queue_.push_back(record);
  jobs_cv_.notify_one();
  return record->job.job_id;
}

std::optional<AnalysisJob> Orchestrator::job(const std::string& job_id) const {
  {
    std::lock_guard lock(jobs_mutex_);
    if (auto it = jobs_.find(job_id); it != jobs_.end()) {
      std::lock_guard record_lock(it->second->mutex);
      return it->second->job;
    }
  }
  // Results of earlier service runs.
  if (job_id.find('/') != std::string::npos || job_id.find("..") != std::string::npos) {
    return std::nullopt;
  }
  const auto path = config_.results_dir / (job_id + ".json");
  std::error_code ec;
  if (!fs::exists(path, ec)) return std::nullopt;
  return job_from_json(json::parse(read_file(path)));
}

std::shared_ptr<const ValueTheory> Orchestrator::revise(const std::string& theory_id,
                                                        const std::vector<RevisionEdit>& edits,
                                                        std::optional<std::int64_t> base_version) {
  std::lock_guard writer(writer_lock(theory_id));
  const auto current = store_.snapshot(theory_id);
  if (!current) throw NotFoundError("unknown theory \"" + theory_id + "\"");
  if (base_version && *base_version != current->version) {
    throw ConflictError("theory " + theory_id + " is at version " +
                            std::to_string(current->version) + ", edit was based on version " +
                            std::to_string(*base_version),
                        current->version);
  }
  store_.install(apply_expert_revision(*current, edits));
  return store_.snapshot(theory_id);
}

void Orchestrator::wait_idle() {
  std::unique_lock lock(jobs_mutex_);
  idle_cv_.wait(lock, [this] { return queue_.empty() && active_ == 0; });
}

void Orchestrator::worker_loop() {
  while (true) {
    std::shared_ptr<JobRecord> record;
    {
      std::unique_lock lock(jobs_mutex_);
      jobs_cv_.wait(lock, [this] { return stopping_ || !queue_.empty(); });
      if (queue_.empty()) return;  // stopping and drained
      record = queue_.front();
      queue_.pop_front();
      ++active_;
    }
    run_job(record);
    {
      std::lock_guard lock(jobs_mutex_);
      --active_;
    }
    idle_cv_.notify_all();
  }
}

void Orchestrator::run_job(const std::shared_ptr<JobRecord>& record) {
  AnalysisRequest request;
  {
    std::lock_guard lock(record->mutex);
    record->job.state = JobState::running;
    request = record->job.request;
  }

  std::optional<AnalysisReport> result;
  std::optional<std::string> error;
  try {
    const ChatBackend* rate = request.rate ? backends_.rate.get() : nullptr;
    if (request.rate && rate == nullptr) throw StageError("rate", "no rate backend configured");
    result = analyze(request.text_id, request.text, *record->snapshot, templates_,
                     *backends_.detect, rate);
  } catch (const std::exception& e) {
    error = e.what();
  }

  AnalysisJob finished;
  {
    std::lock_guard lock(record->mutex);
    if (result) {
      record->job.result = std::move(result);
      record->job.state = JobState::done;
    } else {
      record->job.error = std::move(error);
      record->job.state = JobState::failed;
    }
    finished = record->job;
  }
  try {
    write_file_atomically(config_.results_dir / (finished.job_id + ".json"),
                          job_to_json(finished).dump(2) + "\n");
  } catch (const std::exception& e) {
    std::cerr << "warning: cannot persist result of " << finished.job_id << ": " << e.what() << "\n";
  }
}

void Orchestrator::poll_loop() {
  std::unique_lock lock(poll_mutex_);
  while (!poll_stop_) {
    if (poll_cv_.wait_for(lock, config_.poll_interval, [this] { return poll_stop_; })) break;
    lock.unlock();
    for (const auto& source : config_.theories) {
      if (source.docs_dir.empty()) continue;
      const auto outcome = refresh_specs(source.theory_id);
      if (outcome.status == RefreshOutcome::Status::failed) {
        std::cerr << "refresh of " << source.theory_id << " failed: " << outcome.message << "\n";
      } else if (outcome.status == RefreshOutcome::Status::updated) {
        std::cerr << "theory " << source.theory_id << " refreshed to version " << outcome.version
                  << "\n";
      }
    }
    lock.lock();
  }
}

}  // namespace valuelens
