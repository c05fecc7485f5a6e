#include "hearth/control_api.hpp"

#include <atomic>
#include <charconv>
#include <thread>

#include <httplib.h>

namespace hearth {

bool token_matches(std::string_view presented, std::string_view expected) {
  if (presented.size() != expected.size()) return false;
  unsigned char diff = 0;
  for (std::size_t i = 0; i < expected.size(); ++i) {
    diff |= static_cast<unsigned char>(presented[i] ^ expected[i]);
  }
  return diff == 0;
}

int http_status(ErrorCode code) {
  switch (code) {
    case ErrorCode::kNotFound:
    case ErrorCode::kUnknownDevice: return 404;
    case ErrorCode::kUnsupportedActuator: return 409;
    case ErrorCode::kStorageError: return 503;
    default: return 400;
  }
}

namespace {

constexpr std::string_view kBearer = "Bearer ";
constexpr auto kKeepAlive = std::chrono::seconds(15);
constexpr auto kPoll = std::chrono::milliseconds(200);

void send_json(httplib::Response& res, int status, const nlohmann::ordered_json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, int status, std::string_view code, std::string_view message) {
  nlohmann::ordered_json j;
  j["error"]["code"] = code;
  j["error"]["message"] = message;
  send_json(res, status, j);
}

void send_error(httplib::Response& res, const CommandResult& r) {
  if (r.message == "timeout") {
    send_error(res, 504, "Timeout", "the tick loop did not apply the command in time");
    return;
  }
  send_error(res, http_status(*r.error), to_string(*r.error), r.message);
}

template <class T>
std::optional<T> parse_integer(std::string_view text) {
  T value{};
  const auto* end = text.data() + text.size();
  auto [p, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc() || p != end || text.empty()) return std::nullopt;
  return value;
}

std::optional<nlohmann::json> parse_body(const httplib::Request& req) {
  auto j = nlohmann::json::parse(req.body, nullptr, false);
  if (j.is_discarded() || !j.is_object()) return std::nullopt;
  return j;
}

std::string sse_frame(const StreamEvent& e) {
  std::string out;
  if (e.seq) out += "id: " + std::to_string(*e.seq) + "\n";
  out += "data: " + e.data() + "\n\n";
  return out;
}

}  // namespace

struct ControlApi::Impl {
  Impl(Gateway& g, ApiConfig c) : gateway(g), config(std::move(c)) {
    // The library default adds SO_REUSEPORT, which lets a second instance
    // share a port silently.
    server.set_socket_options([](socket_t sock) {
      int yes = 1;
      ::setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, &yes, sizeof yes);
    });
  }

  Gateway& gateway;
  ApiConfig config;
  httplib::Server server;
  std::thread thread;
  int port = -1;
  std::chrono::milliseconds timeout{5000};
  std::atomic<bool> stopping{false};

  bool authorized(const httplib::Request& req) const {
    const std::string header = req.get_header_value("Authorization");
    if (header.size() < kBearer.size() || header.compare(0, kBearer.size(), kBearer) != 0) return false;
    return token_matches(std::string_view(header).substr(kBearer.size()), config.token);
  }

  void routes();
  void events(const httplib::Request& req, httplib::Response& res);
  void command(httplib::Response& res, Command cmd);
};

void ControlApi::Impl::command(httplib::Response& res, Command cmd) {
  const auto r = gateway.execute(std::move(cmd), timeout);
  if (!r.ok()) {
    send_error(res, r);
    return;
  }
  send_json(res, 200, r.body);
}

void ControlApi::Impl::routes() {
  server.set_pre_routing_handler([this](const httplib::Request& req, httplib::Response& res) {
    if (req.path.rfind("/api/", 0) != 0) return httplib::Server::HandlerResponse::Unhandled;
    if (authorized(req)) return httplib::Server::HandlerResponse::Unhandled;
    res.set_header("WWW-Authenticate", "Bearer");
    send_error(res, 401, "Unauthorized", "missing or invalid bearer token");
    return httplib::Server::HandlerResponse::Handled;
  });

  server.Get("/api/v1/state", [this](const httplib::Request&, httplib::Response& res) {
    send_json(res, 200, to_json(*gateway.state()));
  });

  server.Get(R"(/api/v1/sensors/([^/]+)/readings)", [this](const httplib::Request& req,
                                                           httplib::Response& res) {
    const std::string id = req.matches[1];
    if (!gateway.find_device(id)) {
      send_error(res, 404, "NotFound", "no device '" + id + "'");
      return;
    }
    std::size_t limit = 100;
    if (req.has_param("limit")) {
      const auto n = parse_integer<long long>(req.get_param_value("limit"));
      if (!n || *n < 1 || *n > 1000) {
        send_error(res, 400, "InvalidInput", "limit must be an integer in 1..1000");
        return;
      }
      limit = static_cast<std::size_t>(*n);
    }
    nlohmann::ordered_json j;
    j["device"] = id;
    j["readings"] = nlohmann::ordered_json::array();
    for (const auto& r : gateway.recent_readings(id, limit)) j["readings"].push_back(to_json(r));
    send_json(res, 200, j);
  });

  server.Post(R"(/api/v1/lights/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
    const std::string id = req.matches[1];
    const auto* d = gateway.find_device(id);
    if (!d) {
      send_error(res, 404, "NotFound", "no device '" + id + "'");
      return;
    }
    if (d->kind() != DeviceKind::kLight) {
      send_error(res, 409, "UnsupportedActuator", "device '" + id + "' is not a LIGHT");
      return;
    }
    const auto body = parse_body(req);
    if (!body || !body->contains("on") || !(*body)["on"].is_boolean()) {
      send_error(res, 400, "InvalidInput", "body must be {\"on\": true|false}");
      return;
    }
    command(res, SetLight{id, (*body)["on"].get<bool>()});
  });

  server.Post("/api/v1/mode", [this](const httplib::Request& req, httplib::Response& res) {
    const auto body = parse_body(req);
    std::optional<HomeMode> mode;
    if (body && body->contains("mode") && (*body)["mode"].is_string()) {
      mode = parse_home_mode((*body)["mode"].get<std::string>());
    }
    if (!mode) {
      send_error(res, 400, "InvalidInput", "body must be {\"mode\": \"home\"|\"away\"}");
      return;
    }
    command(res, SetMode{*mode});
  });

  server.Get("/api/v1/alerts", [this](const httplib::Request& req, httplib::Response& res) {
    std::uint64_t since = 0;
    if (req.has_param("since")) {
      const auto n = parse_integer<std::uint64_t>(req.get_param_value("since"));
      if (!n) {
        send_error(res, 400, "InvalidInput", "since must be a non-negative alert id");
        return;
      }
      since = *n;
    }
    const auto view = gateway.state();
    nlohmann::ordered_json j;
    j["alerts"] = nlohmann::ordered_json::array();
    for (const auto& a : view->alerts) {
      if (a.id > since) j["alerts"].push_back(to_json(a));
    }
    send_json(res, 200, j);
  });

  server.Post(R"(/api/v1/alerts/([^/]+)/ack)", [this](const httplib::Request& req, httplib::Response& res) {
    const auto id = parse_integer<std::uint64_t>(req.matches[1].str());
    if (!id) {
      send_error(res, 404, "NotFound", "no alert '" + req.matches[1].str() + "'");
      return;
    }
    command(res, AckAlert{*id});
  });

  server.Get("/api/v1/events", [this](const httplib::Request& req, httplib::Response& res) {
    events(req, res);
  });

  if (!config.ui_dir.empty()) server.set_mount_point("/ui", config.ui_dir);
}

void ControlApi::Impl::events(const httplib::Request& req, httplib::Response& res) {
  std::optional<std::uint64_t> resume;
  if (req.has_header("Last-Event-ID")) {
    resume = parse_integer<std::uint64_t>(req.get_header_value("Last-Event-ID"));
    if (!resume) {
      send_error(res, 400, "InvalidInput", "Last-Event-ID must be a ledger sequence number");
      return;
    }
  }

  // Subscribe before reading the ledger so nothing falls between the replay
  // and the live feed; live events already covered by the replay are skipped.
  auto sub = gateway.events().subscribe();
  auto backlog = std::make_shared<std::deque<StreamEvent>>();
  auto high_water = std::make_shared<std::uint64_t>(resume.value_or(0));
  if (resume) {
    for (auto& e : gateway.ledger_events_after(*resume)) backlog->push_back(std::move(e));
    if (!backlog->empty()) *high_water = *backlog->back().seq;
  }

  res.set_header("Cache-Control", "no-cache");
  res.set_header("X-Accel-Buffering", "no");
  res.set_chunked_content_provider(
      "text/event-stream",
      [this, sub, backlog, high_water, idle = std::chrono::steady_clock::duration::zero()](
          std::size_t, httplib::DataSink& sink) mutable {
        if (stopping || sub->closed()) {
          sink.done();
          return true;
        }
        if (!backlog->empty()) {
          const std::string frame = sse_frame(backlog->front());
          backlog->pop_front();
          return sink.write(frame.data(), frame.size());
        }
        auto e = sub->next(kPoll);
        if (!e) {
          idle += kPoll;
          if (idle >= kKeepAlive) {
            idle = {};
            static constexpr std::string_view ping = ": keep-alive\n\n";
            return sink.write(ping.data(), ping.size());
          }
          return sink.is_writable();
        }
        idle = {};
        if (e->seq) {
          if (*e->seq <= *high_water) return true;
          *high_water = *e->seq;
        }
        const std::string frame = sse_frame(*e);
        return sink.write(frame.data(), frame.size());
      });
}

ControlApi::ControlApi(Gateway& gateway, ApiConfig config)
    : impl_(std::make_unique<Impl>(gateway, std::move(config))) {
  if (impl_->config.token.empty()) throw Error(ErrorCode::kInvalidInput, "API token must not be empty");
  impl_->routes();
}

ControlApi::~ControlApi() { stop(); }

int ControlApi::start() {
  auto& s = impl_->server;
  if (impl_->config.port == 0) {
    impl_->port = s.bind_to_any_port(impl_->config.host);
  } else if (s.bind_to_port(impl_->config.host, impl_->config.port)) {
    impl_->port = impl_->config.port;
  } else {
    impl_->port = -1;
  }
  if (impl_->port < 0) {
    throw Error(ErrorCode::kInvalidInput, "cannot bind " + impl_->config.host + ":" +
                                              std::to_string(impl_->config.port));
  }
  impl_->thread = std::thread([this] { impl_->server.listen_after_bind(); });
  impl_->server.wait_until_ready();
  return impl_->port;
}

void ControlApi::listen() {
  if (impl_->thread.joinable()) {
    impl_->thread.join();
    return;
  }
  if (!impl_->server.listen(impl_->config.host, impl_->config.port)) {
    throw Error(ErrorCode::kInvalidInput, "cannot bind " + impl_->config.host + ":" +
                                              std::to_string(impl_->config.port));
  }
}

void ControlApi::stop() {
  impl_->stopping = true;
  impl_->server.stop();
  if (impl_->thread.joinable()) impl_->thread.join();
}

int ControlApi::port() const { return impl_->port; }

void ControlApi::set_command_timeout(std::chrono::milliseconds timeout) { impl_->timeout = timeout; }

}  // namespace hearth
