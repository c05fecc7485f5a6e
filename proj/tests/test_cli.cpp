#include <doctest.h>

#include <cstdlib>
#include <sstream>

#include "hearth/cli.hpp"
#include "hearth/storage.hpp"
#include "test_util.hpp"

using namespace hearth;
using hearth::test::read_file;
using hearth::test::source_path;
using hearth::test::TempDir;

namespace {

struct Run {
  int code = -1;
  std::string out;
  std::string err;
};

Run cli(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  Run r;
  r.code = run_command(args, out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

std::string config_path() { return source_path("config/home.json").string(); }
std::string scenario(const std::string& name) { return source_path("config/scenarios/" + name).string(); }

bool contains(const std::string& hay, const std::string& needle) { return hay.find(needle) != std::string::npos; }

// Scoped environment override.
class EnvVar {
 public:
  EnvVar(const char* name, const std::string& value) : name_(name) {
    if (const char* old = std::getenv(name)) old_ = old;
    ::setenv(name, value.c_str(), 1);
  }
  ~EnvVar() {
    if (old_) {
      ::setenv(name_, old_->c_str(), 1);
    } else {
      ::unsetenv(name_);
    }
  }

 private:
  const char* name_;
  std::optional<std::string> old_;
};

}  // namespace

TEST_CASE("usage errors exit 1") {
  auto r = cli({});
  CHECK(r.code == kExitValidation);
  r = cli({"launch"});
  CHECK(r.code == kExitValidation);
  r = cli({"simulate", "--ticks", "3", "--colour", "blue"});
  CHECK(r.code == kExitValidation);
  CHECK(contains(r.err, "--colour"));
  CHECK(contains(r.err, "--ticks"));  // usage text follows
  r = cli({"simulate"});
  CHECK(r.code == kExitValidation);
  r = cli({"simulate", "--ticks", "many"});
  CHECK(r.code == kExitValidation);
  r = cli({"run", "--speed", "0"});
  CHECK(r.code == kExitValidation);
  r = cli({"replay"});
  CHECK(r.code == kExitValidation);
}

TEST_CASE("help exits 0") {
  auto r = cli({"--help"});
  CHECK(r.code == kExitOk);
  CHECK(contains(r.out, "simulate"));
  r = cli({"simulate", "--help"});
  CHECK(r.code == kExitOk);
  CHECK(contains(r.out, "--scenario"));
}

TEST_CASE("simulate with zero ticks writes an empty trace") {
  TempDir dir;
  const auto r = cli({"simulate", "--config", config_path(), "--ticks", "0", "--out", dir.path().string()});
  CHECK(r.code == kExitOk);
  CHECK(std::filesystem::exists(dir / "trace.jsonl"));
  CHECK(read_file(dir / "trace.jsonl").empty());
  CHECK(contains(r.out, "alerts raised: 0"));
  CHECK(cli({"simulate", "--config", config_path(), "--ticks", "-1", "--out", dir.path().string()}).code ==
        kExitValidation);
}

TEST_CASE("gas leak scenario ledger") {
  TempDir dir;
  const auto r = cli({"simulate", "--config", config_path(), "--scenario", scenario("gas_leak.json"), "--ticks", "80",
                      "--out", dir.path().string()});
  REQUIRE(r.code == kExitOk);
  CHECK(contains(r.out, "GAS_HIGH=1"));
  const auto ledger = replay_ledger(dir / "ledger.jsonl");
  std::string gas_key;
  for (const auto& e : ledger) {
    if (e.kind == "alert_raised" && e.payload["kind"] == "GAS_HIGH") {
      gas_key = std::to_string(e.payload["id"].get<int>()) + ":GAS_HIGH";
    }
  }
  REQUIRE(!gas_key.empty());
  bool delivered = false;
  for (const auto& e : ledger) delivered = delivered || (e.kind == "sms_delivered" && e.payload["dedupe_key"] == gas_key);
  CHECK(delivered);
  // Modem transcript for the delivered message.
  const auto modem = read_file(dir / "modem.log");
  CHECK(contains(modem, ">> AT+CMGS=\"+97455500001\""));
  CHECK(contains(modem, "<< +CMGS: 1"));
  // Trace: one line per reading.
  const auto trace = read_file(dir / "trace.jsonl");
  CHECK(std::count(trace.begin(), trace.end(), '\n') == 400);
}

TEST_CASE("simulate is byte-reproducible") {
  TempDir a, b;
  for (const auto* dir : {&a, &b}) {
    const auto r = cli({"simulate", "--config", config_path(), "--scenario", scenario("fire.json"), "--ticks", "120",
                        "--out", dir->path().string()});
    REQUIRE(r.code == kExitOk);
  }
  for (const char* f : {"trace.jsonl", "ledger.jsonl", "modem.log", "calibration.json"}) {
    CAPTURE(f);
    const auto x = read_file(a / f);
    CHECK(!x.empty());
    CHECK(x == read_file(b / f));
  }
  // Rerunning into the same directory starts fresh.
  const auto before = read_file(a / "ledger.jsonl");
  REQUIRE(cli({"simulate", "--config", config_path(), "--scenario", scenario("fire.json"), "--ticks", "120", "--out",
               a.path().string()})
              .code == kExitOk);
  CHECK(read_file(a / "ledger.jsonl") == before);
}

TEST_CASE("calibrate") {
  TempDir dir;
  auto r = cli({"simulate", "--config", config_path(), "--ticks", "0", "--out", dir.path().string()});
  REQUIRE(r.code == kExitOk);

  // Point data_dir at the temp dir through a config copy.
  auto doc = nlohmann::json::parse(read_file(config_path()));
  doc["data_dir"] = (dir / "data").string();
  hearth::test::write_file(dir / "cfg.json", doc.dump());
  const auto cfg = (dir / "cfg.json").string();

  r = cli({"calibrate", "--config", cfg, "--samples", "0"});
  CHECK(r.code == kExitValidation);
  CHECK(contains(r.err, "CalibrationError"));

  r = cli({"calibrate", "--config", cfg, "--device", "temp1", "--samples", "5"});
  CHECK(r.code == kExitValidation);
  r = cli({"calibrate", "--config", cfg, "--device", "nope"});
  CHECK(r.code == kExitValidation);

  r = cli({"calibrate", "--config", cfg, "--samples", "20"});
  CHECK(r.code == kExitOk);
  CHECK(contains(r.out, "calibrated gas1"));
  const auto rec = CalibrationStore(dir / "data" / "calibration.json").load("gas1");
  CHECK(rec.sample_count == 20);
  const auto ledger = replay_ledger(dir / "data" / "ledger.jsonl");
  REQUIRE(ledger.size() == 1);
  CHECK(ledger[0].kind == "calibration");

  SUBCASE("HEARTH_CONFIG stands in for --config") {
    EnvVar env("HEARTH_CONFIG", cfg);
    r = cli({"calibrate", "--samples", "7"});
    CHECK(r.code == kExitOk);
    CHECK(CalibrationStore(dir / "data" / "calibration.json").load("gas1").sample_count == 7);
  }
  SUBCASE("a broken config is a validation error") {
    hearth::test::write_file(dir / "bad.json", R"({"seed": "x"})");
    r = cli({"calibrate", "--config", (dir / "bad.json").string()});
    CHECK(r.code == kExitValidation);
    CHECK(contains(r.err, "SchemaError"));
  }
}

TEST_CASE("replay prints the alert timeline") {
  TempDir dir;
  REQUIRE(cli({"simulate", "--config", config_path(), "--scenario", scenario("water_leak.json"), "--ticks", "80",
               "--out", dir.path().string()})
              .code == kExitOk);
  const auto ledger = (dir / "ledger.jsonl").string();
  auto r = cli({"replay", "--ledger", ledger});
  CHECK(r.code == kExitOk);
  CHECK(contains(r.out, "alert_raised"));
  CHECK(contains(r.out, "WATER_LEAK leak1 id=1 ACTIVE"));
  CHECK(contains(r.out, "sms_delivered"));
  CHECK(contains(r.out, "1 alert(s) raised"));
  CHECK_FALSE(contains(r.out, "calibration"));

  r = cli({"replay", "--ledger", (dir / "missing.jsonl").string()});
  CHECK(r.code == kExitValidation);

  const auto text = read_file(ledger);
  hearth::test::write_file(dir / "torn.jsonl", text.substr(0, text.size() - 5));
  r = cli({"replay", "--ledger", (dir / "torn.jsonl").string()});
  CHECK(r.code == kExitRuntime);
  CHECK(contains(r.err, "ReplayError"));
  CHECK(contains(r.err, "line "));
}

TEST_CASE("run serves for a fixed number of ticks") {
  TempDir dir;
  auto doc = nlohmann::json::parse(read_file(config_path()));
  doc["data_dir"] = (dir / "data").string();
  doc["api"]["port"] = 0;
  hearth::test::write_file(dir / "cfg.json", doc.dump());
  const auto r = cli({"run", "--config", (dir / "cfg.json").string(), "--speed", "100", "--ticks", "20"});
  CHECK(r.code == kExitOk);
  CHECK(contains(r.out, "serving 127.0.0.1:"));
  CHECK(contains(r.out, "stopped after 20 ticks"));
  CHECK(std::filesystem::exists(dir / "data" / "readings.jsonl"));
}
