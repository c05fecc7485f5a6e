#pragma once

// HTTP/JSON control surface over a running Gateway.
//
//   GET  /api/v1/state
//   GET  /api/v1/sensors/{id}/readings?limit=N
//   POST /api/v1/lights/{id}        {"on": bool}
//   POST /api/v1/mode               {"mode": "home"|"away"}
//   GET  /api/v1/alerts?since=ID
//   POST /api/v1/alerts/{id}/ack
//   GET  /api/v1/events             text/event-stream
//
// Every /api route needs "Authorization: Bearer <token>".

#include <chrono>
#include <memory>
#include <string>
#include <string_view>

#include "hearth/config.hpp"
#include "hearth/gateway.hpp"

namespace hearth {

// Constant-time for equal-length inputs; the length itself is not secret.
bool token_matches(std::string_view presented, std::string_view expected);

// HTTP status for an error code.
int http_status(ErrorCode code);

class ControlApi {
 public:
  ControlApi(Gateway& gateway, ApiConfig config);
  ~ControlApi();
  ControlApi(const ControlApi&) = delete;
  ControlApi& operator=(const ControlApi&) = delete;

  // Binds and serves on a background thread. Port 0 picks a free port.
  // Returns the bound port; throws InvalidInput when binding fails.
  int start();
  // Serves on the calling thread until stop().
  void listen();
  void stop();

  int port() const;
  // How long a mutation waits for the tick loop to apply it.
  void set_command_timeout(std::chrono::milliseconds timeout);

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace hearth
