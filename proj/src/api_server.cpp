#include "valuelens/api_server.hpp"

#include <httplib.h>

namespace valuelens {

using nlohmann::json;

namespace {

void send_json(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(2) + "\n", "application/json");
}

void send_error(httplib::Response& res, int status, const std::string& message) {
  send_json(res, status, {{"error", message}});
}

std::optional<json> parse_body(const httplib::Request& req, httplib::Response& res) {
  try {
    return json::parse(req.body);
  } catch (const json::parse_error& e) {
    send_error(res, 400, std::string("request body is not valid JSON: ") + e.what());
    return std::nullopt;
  }
}

}  // namespace

ApiServer::ApiServer(Orchestrator& orchestrator)
    : orchestrator_(orchestrator), server_(std::make_unique<httplib::Server>()) {
  auto& srv = *server_;

  srv.Get("/theories", [this](const httplib::Request&, httplib::Response& res) {
    json out = json::array();
    for (const auto& t : orchestrator_.store().list()) {
      out.push_back({{"theory_id", t->theory_id},
                     {"name", t->name},
                     {"version", t->version},
                     {"revised_by_expert", t->revised_by_expert}});
    }
    send_json(res, 200, out);
  });

  srv.Get(R"(/theories/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
    auto theory = orchestrator_.store().snapshot(req.matches[1]);
    if (!theory) return send_error(res, 404, "unknown theory \"" + std::string(req.matches[1]) + "\"");
    res.status = 200;
    res.set_content(serialize_theory(*theory), "application/json");
  });

  srv.Put(R"(/theories/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
    const std::string theory_id = req.matches[1];
    auto body = parse_body(req, res);
    if (!body) return;
    std::vector<RevisionEdit> edits;
    std::optional<std::int64_t> base_version;
    try {
      for (const auto& e : body->at("edits")) {
        edits.push_back({e.at("path").get<std::string>(), e.contains("value") ? e.at("value") : json()});
      }
      if (body->contains("base_version") && !body->at("base_version").is_null()) {
        base_version = body->at("base_version").get<std::int64_t>();
      }
    } catch (const json::exception& e) {
      return send_error(res, 400, std::string("expected {edits: [{path, value}], base_version?}: ") +
                                      e.what());
    }
    try {
      auto revised = orchestrator_.revise(theory_id, edits, base_version);
      send_json(res, 200, {{"theory_id", revised->theory_id}, {"version", revised->version}});
    } catch (const NotFoundError& e) {
      send_error(res, 404, e.what());
    } catch (const ConflictError& e) {
      send_json(res, 409, {{"error", e.what()}, {"current_version", e.current_version()}});
    } catch (const InvalidRevisionError& e) {
      send_json(res, 422, {{"error", e.what()}, {"validation", report_to_json(e.report())}});
    }
  });

  srv.Post(R"(/theories/([^/]+)/refresh)",
           [this](const httplib::Request& req, httplib::Response& res) {
             try {
               const auto outcome = orchestrator_.refresh_specs(req.matches[1]);
               int status = 200;
               if (outcome.status == RefreshOutcome::Status::failed) status = outcome.report ? 422 : 502;
               send_json(res, status, refresh_to_json(outcome));
             } catch (const NotFoundError& e) {
               send_error(res, 404, e.what());
             }
           });

  srv.Post("/analyses", [this](const httplib::Request& req, httplib::Response& res) {
    auto body = parse_body(req, res);
    if (!body) return;
    AnalysisRequest request;
    try {
      request.text = body->at("text").get<std::string>();
      request.theory_id = body->at("theory_id").get<std::string>();
      request.text_id = body->value("text_id", std::string());
      request.rate = body->value("rate", true);
    } catch (const json::exception& e) {
      return send_error(res, 400, std::string("expected {text_id, text, theory_id, rate}: ") + e.what());
    }
    try {
      const auto job_id = orchestrator_.submit(std::move(request));
      send_json(res, 202, {{"job_id", job_id}});
    } catch (const NotFoundError& e) {
      send_error(res, 404, e.what());
    } catch (const Error& e) {
      send_error(res, 400, e.what());
    }
  });

  srv.Get(R"(/analyses/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
    auto job = orchestrator_.job(req.matches[1]);
    if (!job) return send_error(res, 404, "unknown job \"" + std::string(req.matches[1]) + "\"");
    send_json(res, 200, job_to_json(*job));
  });

  srv.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
    try {
      std::rethrow_exception(ep);
    } catch (const std::exception& e) {
      send_error(res, 500, e.what());
    } catch (...) {
      send_error(res, 500, "unknown error");
    }
  });
}

ApiServer::~ApiServer() { stop(); }

int ApiServer::bind(const std::string& host, int port) {
  if (port == 0) {
    const int bound = server_->bind_to_any_port(host);
    if (bound < 0) throw Error("cannot bind to " + host);
    return bound;
  }
  if (!server_->bind_to_port(host, port)) {
    throw Error("cannot bind to " + host + ":" + std::to_string(port));
  }
  return port;
}

void ApiServer::serve() { server_->listen_after_bind(); }

void ApiServer::stop() {
  if (server_) server_->stop();
}

}  // namespace valuelens
