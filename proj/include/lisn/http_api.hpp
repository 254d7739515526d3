#pragma once

// HTTP front end for SessionService.
//
//   POST /sessions                   create (JSON: participant, condition, config, seed)
//   GET  /sessions/{id}              public state
//   POST /sessions/{id}/trials       {"words_correct": n, "idempotency_key": k}
//   GET  /sessions/{id}/events       text/event-stream; ?from=N, ?follow=0 to drain and close
//   GET  /sessions/{id}/export       NDJSON log with export footer
//   GET  /sessions/{id}/trial-audio  rendered stereo WAV of the pending trial

#include <memory>
#include <string>

#include "lisn/session_service.hpp"

namespace httplib {
class Server;
}

namespace lisn {

// Body of POST /sessions -> request; throws ValidationError.
CreateSessionRequest parse_create_request(const std::string& body);

class HttpApi {
 public:
  explicit HttpApi(SessionService& service);
  ~HttpApi();

  // Returns the bound port, or -1.
  int bind(const std::string& host, int port);
  void listen_after_bind();
  void stop();

 private:
  void routes();

  SessionService& service_;
  std::unique_ptr<httplib::Server> server_;
};

}  // namespace lisn
