#pragma once

#include <memory>
#include <string>

#include "valuelens/orchestrator.hpp"

namespace httplib {
class Server;
}

namespace valuelens {

/// HTTP front end of the orchestrator:
///
///   GET  /theories                 -> [{theory_id, name, version, revised_by_expert}]
///   GET  /theories/{id}            -> theory document
///   PUT  /theories/{id}            {edits: [{path, value}], base_version?}
///                                  -> {theory_id, version} | 409 | 422 {error, validation}
///   POST /theories/{id}/refresh    -> refresh outcome
///   POST /analyses                 {text_id, text, theory_id, rate} -> 202 {job_id}
///   GET  /analyses/{job_id}        -> job document (with result when done)
class ApiServer {
 public:
  explicit ApiServer(Orchestrator& orchestrator);
  ~ApiServer();

  ApiServer(const ApiServer&) = delete;
  ApiServer& operator=(const ApiServer&) = delete;

  /// Binds to `host` on `port` (0 picks a free port); returns the bound
  /// port. Throws Error when binding fails.
  int bind(const std::string& host, int port);
  /// Serves until stop() is called. Requires a prior bind().
  void serve();
  void stop();

 private:
  Orchestrator& orchestrator_;
  std::unique_ptr<httplib::Server> server_;
};

}  // namespace valuelens
