#include <doctest.h>

#include <httplib.h>

#include <atomic>
#include <mutex>
#include <set>
#include <thread>

#include "hearth/control_api.hpp"
#include "test_util.hpp"

using namespace hearth;
using hearth::test::TempDir;
using nlohmann::json;

namespace {

constexpr const char* kToken = "s3cret-token";

GatewayConfig make_config(const TempDir& dir) {
  auto c = load_config_file(hearth::test::source_path("config/home.json"));
  c.data_dir = dir.path() / "data";
  c.sms.loss_probability = 0.0;
  c.api.token = kToken;
  c.api.port = 0;
  return c;
}

GatewayOptions quiet() {
  GatewayOptions o;
  o.clock = WallClock::kSimulated;
  o.log = [](const std::string&) {};
  return o;
}

// Gateway plus API on a free port, with an authenticated client.
struct Fixture {
  explicit Fixture(std::function<void(GatewayConfig&)> tweak = {}) {
    config = make_config(dir);
    if (tweak) tweak(config);
    gateway = std::make_unique<Gateway>(config, quiet());
    api = std::make_unique<ControlApi>(*gateway, config.api);
    port = api->start();
    client = std::make_unique<httplib::Client>("127.0.0.1", port);
    client->set_bearer_token_auth(kToken);
    client->set_read_timeout(10, 0);
  }
  ~Fixture() {
    api->stop();
    gateway->stop();
  }

  json get(const std::string& path, int expect = 200) {
    auto res = client->Get(path);
    REQUIRE(res);
    CHECK(res->status == expect);
    return json::parse(res->body);
  }
  json post(const std::string& path, const std::string& body, int expect = 200) {
    auto res = client->Post(path, body, "application/json");
    REQUIRE(res);
    CHECK_MESSAGE(res->status == expect, res->body);
    return json::parse(res->body);
  }

  TempDir dir;
  GatewayConfig config;
  std::unique_ptr<Gateway> gateway;
  std::unique_ptr<ControlApi> api;
  int port = 0;
  std::unique_ptr<httplib::Client> client;
};

struct Frame {
  std::optional<std::uint64_t> id;
  std::string type;
  json payload;
};

// Reads an event stream on its own thread and splits it into frames.
class StreamReader {
 public:
  StreamReader(int port, std::optional<std::uint64_t> last_event_id = std::nullopt) {
    cli_ = std::make_unique<httplib::Client>("127.0.0.1", port);
    cli_->set_bearer_token_auth(kToken);
    cli_->set_read_timeout(20, 0);
    thread_ = std::thread([this, last_event_id] {
      httplib::Headers headers;
      if (last_event_id) headers.emplace("Last-Event-ID", std::to_string(*last_event_id));
      auto res = cli_->Get("/api/v1/events", headers, [this](const char* data, std::size_t n) {
        buffer_.append(data, n);
        parse();
        return !stop_;
      });
      std::lock_guard lock(mu_);
      if (res) status_ = res->status;
      finished_ = true;
    });
  }
  ~StreamReader() { close(); }

  void close() {
    stop_ = true;
    if (thread_.joinable()) {
      cli_->stop();
      thread_.join();
    }
  }

  std::vector<Frame> frames() const {
    std::lock_guard lock(mu_);
    return frames_;
  }
  std::vector<std::string> comments() const {
    std::lock_guard lock(mu_);
    return comments_;
  }

  // Polls until pred(frames) holds or the deadline passes.
  bool wait_for(const std::function<bool(const std::vector<Frame>&)>& pred,
                std::chrono::milliseconds limit = std::chrono::seconds(10)) const {
    const auto end = std::chrono::steady_clock::now() + limit;
    while (std::chrono::steady_clock::now() < end) {
      if (pred(frames())) return true;
      std::this_thread::sleep_for(std::chrono::milliseconds(5));
    }
    return pred(frames());
  }

 private:
  void parse() {
    std::size_t pos;
    while ((pos = buffer_.find("\n\n")) != std::string::npos) {
      const std::string block = buffer_.substr(0, pos);
      buffer_.erase(0, pos + 2);
      Frame f;
      bool data = false;
      std::size_t start = 0;
      while (start <= block.size()) {
        auto nl = block.find('\n', start);
        if (nl == std::string::npos) nl = block.size();
        const std::string line = block.substr(start, nl - start);
        start = nl + 1;
        if (line.rfind("id: ", 0) == 0) f.id = std::stoull(line.substr(4));
        if (line.rfind("data: ", 0) == 0) {
          const auto j = json::parse(line.substr(6));
          f.type = j.at("type");
          f.payload = j.at("payload");
          data = true;
        }
        if (line.rfind(":", 0) == 0) {
          std::lock_guard lock(mu_);
          comments_.push_back(line);
        }
      }
      if (data) {
        std::lock_guard lock(mu_);
        frames_.push_back(std::move(f));
      }
    }
  }

  std::unique_ptr<httplib::Client> cli_;
  std::thread thread_;
  std::atomic<bool> stop_{false};
  std::string buffer_;
  mutable std::mutex mu_;
  std::vector<Frame> frames_;
  std::vector<std::string> comments_;
  int status_ = 0;
  bool finished_ = false;
};

std::size_t count_ledger_frames(const std::vector<Frame>& fs) {
  return static_cast<std::size_t>(std::count_if(fs.begin(), fs.end(), [](const Frame& f) { return f.id.has_value(); }));
}

}  // namespace

TEST_CASE("token comparison and status mapping") {
  CHECK(token_matches("abc", "abc"));
  CHECK_FALSE(token_matches("abd", "abc"));
  CHECK_FALSE(token_matches("ab", "abc"));
  CHECK_FALSE(token_matches("", "abc"));
  CHECK(http_status(ErrorCode::kNotFound) == 404);
  CHECK(http_status(ErrorCode::kUnknownDevice) == 404);
  CHECK(http_status(ErrorCode::kUnsupportedActuator) == 409);
  CHECK(http_status(ErrorCode::kStorageError) == 503);
  CHECK(http_status(ErrorCode::kInvalidInput) == 400);
}

TEST_CASE("every endpoint rejects missing or wrong tokens without leaking state") {
  Fixture f;
  for (const auto& auth : std::vector<httplib::Headers>{
           {}, {{"Authorization", "Bearer wrong-token!"}}, {{"Authorization", "Basic czNjcmV0LXRva2Vu"}},
           {{"Authorization", std::string("bearer ") + kToken}}, {{"Authorization", "Bearer"}}}) {
    httplib::Client cli("127.0.0.1", f.port);
    std::vector<httplib::Result> results;
    results.push_back(cli.Get("/api/v1/state", auth));
    results.push_back(cli.Get("/api/v1/sensors/temp1/readings", auth));
    results.push_back(cli.Get("/api/v1/alerts", auth));
    results.push_back(cli.Get("/api/v1/events", auth));
    results.push_back(cli.Post("/api/v1/lights/light1", auth, R"({"on":true})", "application/json"));
    results.push_back(cli.Post("/api/v1/mode", auth, R"({"mode":"away"})", "application/json"));
    results.push_back(cli.Post("/api/v1/alerts/1/ack", auth, "", "application/json"));
    results.push_back(cli.Get("/api/v1/nonexistent", auth));
    for (auto& r : results) {
      REQUIRE(r);
      CHECK(r->status == 401);
      CHECK(r->get_header_value("WWW-Authenticate") == "Bearer");
      const auto j = json::parse(r->body);
      CHECK(j["error"]["code"] == "Unauthorized");
      CHECK(j.size() == 1);
    }
  }
  // Nothing was applied.
  CHECK(f.gateway->state()->mode == HomeMode::kHome);
  CHECK(f.gateway->state()->lights.at("light1") == LightState::kOff);
}

TEST_CASE("state and readings") {
  Fixture f;
  auto s = f.get("/api/v1/state");
  CHECK(s["mode"] == "HOME");
  CHECK(s["lights"]["light1"] == "OFF");
  CHECK(s["active_alerts"] == 0);

  f.gateway->run_ticks(10);
  s = f.get("/api/v1/state");
  CHECK(s["tick"] == 10);
  CHECK(s["t_ms"] == 900);
  CHECK(s["sensors"].size() == 5);

  auto r = f.get("/api/v1/sensors/temp1/readings?limit=1");
  CHECK(r["device"] == "temp1");
  REQUIRE(r["readings"].size() == 1);
  CHECK(r["readings"][0]["t_ms"] == 900);
  CHECK(r["readings"][0]["value"] == s["sensors"][0]["value"]);

  r = f.get("/api/v1/sensors/gas1/readings");
  CHECK(r["readings"].size() == 10);
  CHECK(r["readings"][0]["t_ms"] == 900);
  CHECK(r["readings"][9]["t_ms"] == 0);
  CHECK(f.get("/api/v1/sensors/gas1/readings?limit=1000")["readings"].size() == 10);

  CHECK(f.get("/api/v1/sensors/temp1/readings?limit=0", 400)["error"]["code"] == "InvalidInput");
  f.get("/api/v1/sensors/temp1/readings?limit=1001", 400);
  f.get("/api/v1/sensors/temp1/readings?limit=ten", 400);
  f.get("/api/v1/sensors/temp1/readings?limit=-3", 400);
  CHECK(f.get("/api/v1/sensors/ghost/readings", 404)["error"]["code"] == "NotFound");
}

TEST_CASE("lights and mode through the tick loop") {
  Fixture f;
  f.gateway->start(20.0);

  auto r = f.post("/api/v1/lights/light1", R"({"on":true})");
  CHECK(r["state"] == "ON");
  CHECK(r["changed"] == true);
  // Observable right away: the response waited for the tick that applied it.
  CHECK(f.get("/api/v1/state")["lights"]["light1"] == "ON");
  r = f.post("/api/v1/lights/light1", R"({"on":true})");
  CHECK(r["state"] == "ON");
  CHECK(r["changed"] == false);
  r = f.post("/api/v1/lights/light1", R"({"on":false})");
  CHECK(r["state"] == "OFF");

  CHECK(f.post("/api/v1/lights/pir1", R"({"on":true})", 409)["error"]["code"] == "UnsupportedActuator");
  CHECK(f.post("/api/v1/lights/lamp9", R"({"on":true})", 404)["error"]["code"] == "NotFound");
  f.post("/api/v1/lights/light1", R"({"on":"yes"})", 400);
  f.post("/api/v1/lights/light1", "not json", 400);
  f.post("/api/v1/lights/light1", "[]", 400);

  CHECK(f.post("/api/v1/mode", R"({"mode":"banana"})", 400)["error"]["code"] == "InvalidInput");
  f.post("/api/v1/mode", R"({})", 400);
  r = f.post("/api/v1/mode", R"({"mode":"away"})");
  CHECK(r["mode"] == "AWAY");
  CHECK(f.get("/api/v1/state")["mode"] == "AWAY");

  f.gateway->stop();
  const auto ledger = replay_ledger(f.gateway->ledger_path());
  const auto lights = std::count_if(ledger.begin(), ledger.end(), [](const auto& e) { return e.kind == "light_command"; });
  CHECK(lights == 2);
}

TEST_CASE("away mode, motion, listing and acknowledging") {
  Fixture f;
  f.gateway->start(20.0);
  f.post("/api/v1/mode", R"({"mode":"AWAY"})");
  VirtualHome probe(f.config.devices, f.config.home);
  f.gateway->set_scenario(load_scenario(json::parse(R"([{"t_ms":0,"target":"pir1","motion":true}])"), probe));

  json alerts;
  for (int i = 0; i < 200; ++i) {
    alerts = f.get("/api/v1/alerts")["alerts"];
    if (!alerts.empty()) break;
    std::this_thread::sleep_for(std::chrono::milliseconds(10));
  }
  REQUIRE(alerts.size() == 1);
  CHECK(alerts[0]["kind"] == "INTRUSION");
  CHECK(alerts[0]["state"] == "ACTIVE");
  const auto id = alerts[0]["id"].get<std::uint64_t>();
  CHECK(f.get("/api/v1/state")["active_alerts"] == 1);

  CHECK(f.get("/api/v1/alerts?since=" + std::to_string(id))["alerts"].empty());
  CHECK(f.get("/api/v1/alerts?since=0")["alerts"].size() == 1);
  f.get("/api/v1/alerts?since=x", 400);

  const auto ack = f.post("/api/v1/alerts/" + std::to_string(id) + "/ack", "");
  CHECK(ack["state"] == "ACKED");
  CHECK(f.get("/api/v1/alerts")["alerts"][0]["state"] == "ACKED");
  CHECK(f.get("/api/v1/state")["active_alerts"] == 0);
  CHECK(f.post("/api/v1/alerts/999/ack", "", 404)["error"]["code"] == "NotFound");
  f.post("/api/v1/alerts/abc/ack", "", 404);
}

TEST_CASE("mutations time out with 504 when nothing ticks") {
  Fixture f;
  f.api->set_command_timeout(std::chrono::milliseconds(50));
  const auto j = f.post("/api/v1/lights/light1", R"({"on":true})", 504);
  CHECK(j["error"]["code"] == "Timeout");
}

TEST_CASE("a halted gateway answers 503") {
  Fixture f;
  const auto readings = f.config.data_dir / "readings.jsonl";
  std::filesystem::remove(readings);
  std::filesystem::create_directory(readings);
  try {
    f.gateway->run_ticks(100);
  } catch (const Error&) {
  }
  REQUIRE(f.gateway->fatal_error());
  CHECK(f.post("/api/v1/mode", R"({"mode":"away"})", 503)["error"]["code"] == "StorageError");
}

TEST_CASE("idle stream carries only readings") {
  Fixture f;
  StreamReader reader(f.port);
  // Tick by hand until the stream is attached.
  for (int i = 0; i < 200 && reader.frames().empty(); ++i) {
    f.gateway->tick();
    std::this_thread::sleep_for(std::chrono::milliseconds(10));
  }
  f.gateway->run_ticks(5);
  REQUIRE(reader.wait_for([](const auto& fs) { return fs.size() >= 25; }));
  reader.close();
  for (const auto& fr : reader.frames()) {
    CHECK(fr.type == "reading");
    CHECK_FALSE(fr.id);
  }
}

TEST_CASE("stream order and Last-Event-ID resume") {
  Fixture f;
  VirtualHome probe(f.config.devices, f.config.home);
  f.gateway->set_scenario(load_scenario(json::parse(R"([
      {"t_ms": 3000, "target": "gas1", "lpg_ppm": 2500},
      {"t_ms": 3500, "target": "light1", "switch_on": true},
      {"t_ms": 6000, "target": "gas1", "lpg_ppm": 0}])"),
                                        probe));

  auto first = std::make_unique<StreamReader>(f.port);
  for (int i = 0; i < 200 && first->frames().empty(); ++i) {
    f.gateway->tick();
    std::this_thread::sleep_for(std::chrono::milliseconds(10));
  }
  REQUIRE(!first->frames().empty());
  REQUIRE(f.gateway->state()->t_ms < 3000);

  f.gateway->start(10.0, 120);
  // Commands add mode and light events to the ledger mid-run.
  CHECK(f.post("/api/v1/mode", R"({"mode":"away"})")["changed"] == true);
  CHECK(f.post("/api/v1/lights/light1", R"({"on":true})")["changed"] == true);

  REQUIRE(first->wait_for([](const auto& fs) {
    return std::any_of(fs.begin(), fs.end(), [](const Frame& x) { return x.type == "alert"; }) &&
           count_ledger_frames(fs) >= 3;
  }));
  first->close();
  const auto part1 = first->frames();

  // Ordering: an alert arrives after its own tick's readings and before the
  // next tick's.
  for (std::size_t i = 0; i < part1.size(); ++i) {
    if (part1[i].type != "alert") continue;
    const auto t = part1[i].payload["t_ms"].get<std::int64_t>();
    for (std::size_t j = i; j-- > 0;) {
      if (part1[j].type == "reading") {
        CHECK(part1[j].payload["t_ms"] == t);
        break;
      }
    }
    for (std::size_t j = i + 1; j < part1.size(); ++j) {
      if (part1[j].type == "reading") {
        CHECK(part1[j].payload["t_ms"] == t + 100);
        break;
      }
    }
  }

  std::uint64_t last = 0;
  for (const auto& fr : part1) {
    if (fr.id) {
      CHECK(*fr.id > last);
      last = *fr.id;
    }
  }

  f.gateway->wait();
  const auto expected = f.gateway->ledger_events_after(0);
  REQUIRE(expected.size() > count_ledger_frames(part1));
  const auto final_seq = *expected.back().seq;

  StreamReader second(f.port, last);
  REQUIRE(second.wait_for([&](const auto& fs) {
    return std::any_of(fs.begin(), fs.end(), [&](const Frame& x) { return x.id == final_seq; });
  }));
  second.close();

  std::vector<std::uint64_t> ids;
  std::vector<json> payloads;
  const auto part2 = second.frames();
  for (const auto* part : {&part1, &part2}) {
    for (const auto& fr : *part) {
      if (!fr.id) continue;
      ids.push_back(*fr.id);
      payloads.push_back(fr.payload);
    }
  }
  // Every streamable ledger entry exactly once, in ledger order.
  std::vector<std::uint64_t> want;
  for (const auto& e : expected) want.push_back(*e.seq);
  CHECK(ids == want);
  for (std::size_t i = 0; i < std::min(expected.size(), payloads.size()); ++i) {
    CHECK(payloads[i] == json::parse(expected[i].payload.dump()));
  }
  std::set<std::string> types;
  for (const auto& e : expected) types.insert(e.type);
  CHECK(types == std::set<std::string>{"alert", "light", "mode"});
}

TEST_CASE("bad Last-Event-ID") {
  Fixture f;
  auto res = f.client->Get("/api/v1/events", {{"Last-Event-ID", "abc"}});
  REQUIRE(res);
  CHECK(res->status == 400);
}

TEST_CASE("dashboard files are served under /ui without a token") {
  TempDir ui;
  hearth::test::write_file(ui / "index.html", "<!doctype html><title>hearth</title>");
  Fixture f([&](GatewayConfig& c) { c.api.ui_dir = ui.path().string(); });
  httplib::Client anon("127.0.0.1", f.port);
  auto res = anon.Get("/ui/index.html");
  REQUIRE(res);
  CHECK(res->status == 200);
  CHECK(res->body.find("hearth") != std::string::npos);
}

TEST_CASE("binding a taken port fails") {
  Fixture f;
  TempDir dir;
  auto c = make_config(dir);
  c.api.port = f.port;
  Gateway g(c, quiet());
  ControlApi api(g, c.api);
  CHECK_THROWS_CODE(api.start(), ErrorCode::kInvalidInput);
  ApiConfig empty = c.api;
  empty.token = "";
  CHECK_THROWS_CODE(ControlApi(g, empty), ErrorCode::kInvalidInput);
}
