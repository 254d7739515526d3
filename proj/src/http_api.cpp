#include "lisn/http_api.hpp"

#include <httplib.h>

#include "lisn/wav.hpp"

namespace lisn {

using nlohmann::json;

namespace {

void send_json(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, int status, const std::string& kind, const std::string& message) {
  send_json(res, status, {{"error", kind}, {"message", message}});
}

// Maps service exceptions onto HTTP statuses.
template <class F>
void guarded(httplib::Response& res, F&& body) {
  try {
    body();
  } catch (const UnknownSession& e) {
    send_error(res, 404, "unknown_session", e.what());
  } catch (const ConflictError& e) {
    send_error(res, 409, "conflict", e.what());
  } catch (const ValidationError& e) {
    send_error(res, 400, "validation", e.what());
  } catch (const ConfigurationError& e) {
    send_error(res, 503, "configuration", e.what());
  } catch (const json::exception& e) {
    send_error(res, 400, "validation", e.what());
  } catch (const std::invalid_argument& e) {
    send_error(res, 400, "validation", e.what());
  } catch (const std::exception& e) {
    send_error(res, 500, "internal", e.what());
  }
}

std::string sse_frame(const SessionEvent& e) {
  return "id: " + std::to_string(e.seq) + "\nevent: " + e.type + "\ndata: " + e.data.dump() + "\n\n";
}

}  // namespace

CreateSessionRequest parse_create_request(const std::string& body) {
  CreateSessionRequest req;
  if (body.empty()) return req;
  json j;
  try {
    j = json::parse(body);
  } catch (const json::exception& e) {
    throw ValidationError(std::string("request body is not JSON: ") + e.what());
  }
  if (!j.is_object()) throw ValidationError("request body must be a JSON object");
  try {
    if (j.contains("participant")) req.participant = j["participant"];
    if (j.contains("condition")) req.condition = condition_from_string(j["condition"].get<std::string>());
    if (j.contains("config")) req.config = config_from_json(j["config"]);
    if (j.contains("max_restarts")) req.max_restarts = j["max_restarts"].get<int>();
    if (j.contains("seed")) req.seed = j["seed"].get<std::uint64_t>();
  } catch (const std::exception& e) {
    throw ValidationError(e.what());
  }
  return req;
}

HttpApi::HttpApi(SessionService& service) : service_(service), server_(std::make_unique<httplib::Server>()) {
  routes();
}

HttpApi::~HttpApi() { stop(); }

int HttpApi::bind(const std::string& host, int port) {
  if (port == 0) return server_->bind_to_any_port(host);
  return server_->bind_to_port(host, port) ? port : -1;
}

void HttpApi::listen_after_bind() { server_->listen_after_bind(); }

void HttpApi::stop() {
  if (server_) server_->stop();
}

void HttpApi::routes() {
  auto& srv = *server_;

  srv.Post("/sessions", [this](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] { send_json(res, 201, service_.create_session(parse_create_request(req.body))); });
  });

  srv.Get(R"(/sessions/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] { send_json(res, 200, service_.get_state(req.matches[1])); });
  });

  srv.Post(R"(/sessions/([^/]+)/trials)", [this](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      json body;
      try {
        body = json::parse(req.body);
      } catch (const json::exception& e) {
        throw ValidationError(std::string("request body is not JSON: ") + e.what());
      }
      if (!body.contains("words_correct") || !body["words_correct"].is_number_integer())
        throw ValidationError("words_correct (integer) is required");
      std::string key = body.value("idempotency_key", "");
      if (key.empty() && req.has_header("Idempotency-Key")) key = req.get_header_value("Idempotency-Key");
      send_json(res, 200, service_.submit_trial_result(req.matches[1], body["words_correct"].get<int>(), key));
    });
  });

  srv.Get(R"(/sessions/([^/]+)/export)", [this](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      res.status = 200;
      res.set_content(service_.export_session(req.matches[1]), "application/x-ndjson");
    });
  });

  srv.Get(R"(/sessions/([^/]+)/trial-audio)", [this](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      const auto bytes = encode_wav(service_.trial_audio(req.matches[1]), SampleFormat::Float32);
      res.status = 200;
      res.set_content(std::string(bytes.begin(), bytes.end()), "audio/wav");
    });
  });

  srv.Get(R"(/sessions/([^/]+)/events)", [this](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      const std::string id = req.matches[1];
      std::uint64_t from = 0;
      if (req.has_param("from")) from = std::stoull(req.get_param_value("from"));
      if (req.has_header("Last-Event-ID")) from = std::stoull(req.get_header_value("Last-Event-ID")) + 1;
      const bool follow = !(req.has_param("follow") && req.get_param_value("follow") == "0");
      service_.get_state(id);  // 404 before the stream starts

      if (!follow) {
        std::string body;
        for (const auto& e : service_.events_since(id, from)) body += sse_frame(e);
        res.status = 200;
        res.set_content(body, "text/event-stream");
        return;
      }
      auto cursor = std::make_shared<std::uint64_t>(from);
      res.set_header("Cache-Control", "no-cache");
      res.set_chunked_content_provider("text/event-stream", [this, id, cursor](std::size_t, httplib::DataSink& sink) {
        const auto events = service_.events_since(id, *cursor, std::chrono::milliseconds(500));
        for (const auto& e : events) {
          const std::string frame = sse_frame(e);
          if (!sink.write(frame.data(), frame.size())) return false;
          *cursor = e.seq + 1;
        }
        if (events.empty()) {
          if (service_.finished(id)) {
            sink.done();
            return true;
          }
          static const std::string keepalive = ": keepalive\n\n";
          if (!sink.write(keepalive.data(), keepalive.size())) return false;
        }
        return true;
      });
    });
  });
}

}  // namespace lisn
