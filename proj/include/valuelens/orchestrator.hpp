#pragma once

#include <chrono>
#include <condition_variable>
#include <deque>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "valuelens/conceptualisation.hpp"
#include "valuelens/detection.hpp"
#include "valuelens/llm_gateway.hpp"
#include "valuelens/prompt_template.hpp"
#include "valuelens/value_spec.hpp"

namespace valuelens {

/// Current snapshot per theory, persisted as one canonical file each.
///
/// Snapshots are immutable and handed out as shared pointers, so a reader
/// keeps the version it fetched for as long as it needs it. install() writes
/// the file (temp + rename) before swapping the in-memory pointer.
class TheoryStore {
 public:
  /// Loads every *.json theory under `root` (created if missing).
  explicit TheoryStore(std::filesystem::path root);

  std::shared_ptr<const ValueTheory> snapshot(const std::string& theory_id) const;
  std::vector<std::shared_ptr<const ValueTheory>> list() const;

  /// Rejects invalid theories and versions that do not increase. Callers
  /// serialise writers per theory.
  void install(ValueTheory theory);

  std::filesystem::path file_for(const std::string& theory_id) const;

 private:
  std::filesystem::path root_;
  mutable std::shared_mutex mutex_;
  std::map<std::string, std::shared_ptr<const ValueTheory>> theories_;
};

enum class JobState { queued, running, done, failed };
std::string_view to_string(JobState state);

struct AnalysisRequest {
  std::string text_id;
  std::string text;
  std::string theory_id;
  bool rate = true;
};

struct AnalysisJob {
  std::string job_id;
  AnalysisRequest request;
  std::int64_t theory_version = 0;
  JobState state = JobState::queued;
  std::optional<AnalysisReport> result;
  std::optional<std::string> error;
};

nlohmann::json job_to_json(const AnalysisJob& job);
AnalysisJob job_from_json(const nlohmann::json& doc);

struct RefreshOutcome {
  enum class Status { no_change, updated, failed };

  Status status = Status::no_change;
  std::string theory_id;
  std::int64_t version = 0;
  ChangeReport changes;
  std::string message;
  std::optional<ValidationReport> report;
  /// The replaced snapshot carried expert edits that the regenerated one lacks.
  bool expert_revisions_replaced = false;
};

nlohmann::json refresh_to_json(const RefreshOutcome& outcome);

struct TheorySource {
  std::string theory_id;
  std::string name;
  std::filesystem::path docs_dir;
  /// Installed at startup when the store has no snapshot yet.
  std::optional<std::filesystem::path> seed_file;
};

struct OrchestratorConfig {
  std::filesystem::path store_dir;
  std::filesystem::path results_dir;
  std::vector<TheorySource> theories;
  std::size_t parallelism = 2;
  /// Zero disables background polling.
  std::chrono::milliseconds poll_interval{0};
  std::size_t max_prompt_chars = 400'000;
};

struct Backends {
  std::shared_ptr<const ChatBackend> conceptualise;
  std::shared_ptr<const ChatBackend> detect;
  std::shared_ptr<const ChatBackend> rate;
};

class ConflictError : public Error {
 public:
  ConflictError(const std::string& message, std::int64_t current_version)
      : Error(message), current_version_(current_version) {}
  std::int64_t current_version() const noexcept { return current_version_; }

 private:
  std::int64_t current_version_;
};

/// Coordinates specification refreshes, analysis jobs and result delivery.
class Orchestrator {
 public:
  Orchestrator(OrchestratorConfig config, TemplateSet templates, Backends backends);
  ~Orchestrator();

  Orchestrator(const Orchestrator&) = delete;
  Orchestrator& operator=(const Orchestrator&) = delete;

  TheoryStore& store() noexcept { return store_; }
  const OrchestratorConfig& config() const noexcept { return config_; }

  /// Re-conceptualises the theory if its documents changed. Failures keep
  /// the installed snapshot and are reported in the outcome.
  RefreshOutcome refresh_specs(const std::string& theory_id);

  /// Captures the current snapshot and queues the analysis. Throws
  /// NotFoundError for unknown theories and Error for empty text.
  std::string submit(AnalysisRequest request);

  std::optional<AnalysisJob> job(const std::string& job_id) const;

  /// Expert revision of the current snapshot. Throws NotFoundError,
  /// ConflictError (stale base_version) or InvalidRevisionError.
  std::shared_ptr<const ValueTheory> revise(const std::string& theory_id,
                                            const std::vector<RevisionEdit>& edits,
                                            std::optional<std::int64_t> base_version);

  /// Blocks until no job is queued or running.
  void wait_idle();

  /// Stops polling, lets workers finish every accepted job, then joins them.
  void shutdown();

 private:
  struct JobRecord {
    mutable std::mutex mutex;
    AnalysisJob job;
    std::shared_ptr<const ValueTheory> snapshot;
  };

  void worker_loop();
  void poll_loop();
  void run_job(const std::shared_ptr<JobRecord>& record);
  std::mutex& writer_lock(const std::string& theory_id);
  std::string new_job_id();

  OrchestratorConfig config_;
  TemplateSet templates_;
  Backends backends_;
  TheoryStore store_;

  std::mutex writers_mutex_;
  std::map<std::string, std::unique_ptr<std::mutex>> writers_;

  mutable std::mutex jobs_mutex_;
  std::condition_variable jobs_cv_;
  std::condition_variable idle_cv_;
  std::map<std::string, std::shared_ptr<JobRecord>> jobs_;
  std::deque<std::shared_ptr<JobRecord>> queue_;
  std::size_t active_ = 0;
  bool stopping_ = false;
  std::uint64_t job_counter_ = 0;
  std::vector<std::thread> workers_;

  std::mutex poll_mutex_;
  std::condition_variable poll_cv_;
  bool poll_stop_ = false;
  std::thread poller_;
};

}  // namespace valuelens
