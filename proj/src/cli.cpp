#include "hearth/cli.hpp"

#include <atomic>
#include <csignal>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>
#include <thread>

#include <CLI11.hpp>

#include "hearth/config.hpp"
#include "hearth/control_api.hpp"
#include "hearth/error.hpp"
#include "hearth/gateway.hpp"
#include "hearth/storage.hpp"

namespace hearth {
namespace {

std::atomic<bool> g_interrupted{false};

extern "C" void on_signal(int) { g_interrupted = true; }

int exit_code_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::kStorageError:
    case ErrorCode::kReplayError:
    case ErrorCode::kSensorOpenCircuit:
    case ErrorCode::kNotCalibrated: return kExitRuntime;
    default: return kExitValidation;
  }
}

GatewayConfig resolve_config(const std::string& flag) {
  std::string path = flag;
  if (path.empty()) {
    if (const char* env = std::getenv("HEARTH_CONFIG"); env && *env) path = env;
  }
  return path.empty() ? default_config() : load_config_file(path);
}

// Output files a simulate run owns; removed first so every run starts fresh.
constexpr const char* kSimulateFiles[] = {"ledger.jsonl", "readings.jsonl", "calibration.json",
                                          "modem.log",    "sms_outbox.jsonl", "trace.jsonl"};

struct Options {
  std::string config;
  std::string scenario;
  std::string out;
  std::string device;
  std::string ledger;
  double speed = 1.0;
  std::int64_t ticks = -1;
  int samples = -1;
};

int cmd_run(const Options& o, std::ostream& out, std::ostream& err) {
  GatewayConfig config = resolve_config(o.config);
  GatewayOptions gopts;
  gopts.log = [&err](const std::string& m) { err << "hearth: " << m << '\n'; };
  Gateway gateway(config, gopts);
  if (!o.scenario.empty()) {
    VirtualHome probe(config.devices, config.home);
    gateway.set_scenario(load_scenario_file(o.scenario, probe));
  }
  ControlApi api(gateway, config.api);
  const int port = api.start();
  out << "hearth: serving " << config.api.host << ':' << port << " (data in "
      << config.data_dir.string() << ")" << std::endl;

  g_interrupted = false;
  auto prev_int = std::signal(SIGINT, on_signal);
  auto prev_term = std::signal(SIGTERM, on_signal);
  gateway.start(o.speed, o.ticks >= 0 ? std::optional<std::int64_t>(o.ticks) : std::nullopt);
  while (!g_interrupted && gateway.running()) {
    std::this_thread::sleep_for(std::chrono::milliseconds(100));
  }
  gateway.stop();
  gateway.events().close_all();
  api.stop();
  std::signal(SIGINT, prev_int);
  std::signal(SIGTERM, prev_term);

  if (auto fatal = gateway.fatal_error()) {
    err << "hearth: " << *fatal << '\n';
    return kExitRuntime;
  }
  out << "hearth: stopped after " << gateway.state()->tick << " ticks" << std::endl;
  return kExitOk;
}

int cmd_simulate(const Options& o, std::ostream& out, std::ostream& err) {
  if (o.ticks < 0) throw Error(ErrorCode::kInvalidInput, "--ticks must be >= 0");
  GatewayConfig config = resolve_config(o.config);
  if (!o.out.empty()) config.data_dir = o.out;

  Scenario scenario;
  if (!o.scenario.empty()) {
    VirtualHome probe(config.devices, config.home);
    scenario = load_scenario_file(o.scenario, probe);
  }

  std::filesystem::create_directories(config.data_dir);
  for (const char* name : kSimulateFiles) std::filesystem::remove(config.data_dir / name);

  GatewayOptions gopts;
  gopts.clock = WallClock::kSimulated;
  gopts.record_trace = true;
  gopts.log = [&err](const std::string& m) { err << "hearth: " << m << '\n'; };

  Trace trace;
  std::vector<SmsMessage> sms;
  std::vector<Alert> alerts;
  std::filesystem::path ledger_path;
  {
    Gateway gateway(config, gopts);
    gateway.set_scenario(std::move(scenario));
    gateway.run_ticks(o.ticks);
    trace = gateway.trace();
    sms = gateway.sms_messages();
    alerts = gateway.state()->alerts;
    ledger_path = gateway.ledger_path();
  }

  const auto trace_path = config.data_dir / "trace.jsonl";
  {
    std::ofstream f(trace_path, std::ios::binary | std::ios::trunc);
    f << trace_to_jsonl(trace);
    if (!f) throw Error(ErrorCode::kStorageError, "cannot write '" + trace_path.string() + "'");
  }

  std::map<std::string, int> by_kind;
  for (const auto& a : alerts) ++by_kind[std::string(to_string(a.kind))];
  int delivered = 0;
  int failed = 0;
  for (const auto& m : sms) {
    delivered += m.state == SmsState::kDelivered;
    failed += m.state == SmsState::kFailed;
  }

  out << "simulated " << o.ticks << " ticks, " << trace.readings.size() << " readings\n";
  out << "alerts raised: " << alerts.size();
  for (const auto& [kind, n] : by_kind) out << ' ' << kind << '=' << n;
  out << "\nsms delivered: " << delivered << ", failed: " << failed << '\n';
  out << "trace:  " << trace_path.string() << '\n';
  out << "ledger: " << ledger_path.string() << '\n';
  return kExitOk;
}

int cmd_calibrate(const Options& o, std::ostream& out, std::ostream&) {
  GatewayConfig config = resolve_config(o.config);
  VirtualHome home(config.devices, config.home);

  std::string device = o.device;
  if (device.empty()) {
    for (const auto& d : config.devices) {
      if (d.kind() != DeviceKind::kGas) continue;
      if (!device.empty()) throw Error(ErrorCode::kInvalidInput, "several GAS devices; pass --device");
      device = d.id;
    }
    if (device.empty()) throw Error(ErrorCode::kInvalidInput, "no GAS device configured");
  }
  const int samples = o.samples >= 0 ? o.samples : config.calibration_samples;

  const CalibrationRecord rec = calibrate_device(home, device, samples);
  Storage storage(config.data_dir);
  storage.calibration.save(device, rec);
  nlohmann::json payload;
  payload["device"] = device;
  payload["record"] = to_json(rec);
  const auto now = std::chrono::duration_cast<std::chrono::milliseconds>(
                       std::chrono::system_clock::now().time_since_epoch())
                       .count();
  storage.ledger.append("calibration", payload, rec.t_ms, iso8601_utc_ms(now));

  out << std::setprecision(6) << "calibrated " << device << ": R0 = " << rec.r0 << " kOhm over "
      << rec.sample_count << " samples (Rs mean " << rec.rs_mean << ", stddev " << rec.rs_stddev
      << ", RL " << rec.r_load << ")\n";
  out << "saved to " << (config.data_dir / Storage::kCalibrationFile).string() << '\n';
  return kExitOk;
}

void print_timeline_line(std::ostream& out, const LedgerEntry& e) {
  out << '#' << std::left << std::setw(6) << e.seq << std::right << std::setw(9) << e.t_ms << "ms  "
      << e.wall_time << "  " << std::left << std::setw(14) << e.kind << std::right;
  const auto& p = e.payload;
  if (e.kind.rfind("alert_", 0) == 0) {
    out << ' ' << p.value("kind", "?") << ' ' << p.value("device", "?") << " id=" << p.value("id", 0)
        << ' ' << p.value("state", "?");
    const std::string detail = p.value("detail", "");
    if (!detail.empty()) out << "  " << detail;
  } else if (e.kind == "mode_changed") {
    out << ' ' << p.value("mode", "?");
  } else if (e.kind == "light_command") {
    out << ' ' << p.value("device", "?") << ' ' << p.value("state", "?");
  } else if (e.kind.rfind("sms_", 0) == 0) {
    out << ' ' << p.value("dedupe_key", "?");
    if (p.contains("attempt")) out << " attempt=" << p.value("attempt", 0);
  }
  out << '\n';
}

int cmd_replay(const Options& o, std::ostream& out, std::ostream&) {
  if (!std::filesystem::exists(o.ledger)) {
    throw Error(ErrorCode::kInvalidInput, "no ledger at '" + o.ledger + "'");
  }
  std::size_t alerts = 0;
  for (const auto& e : replay_ledger(o.ledger)) {
    const bool timeline = e.kind.rfind("alert_", 0) == 0 || e.kind == "mode_changed" ||
                          e.kind == "light_command" || e.kind == "sms_delivered" ||
                          e.kind == "sms_failed";
    if (!timeline) continue;
    alerts += e.kind == "alert_raised";
    print_timeline_line(out, e);
  }
  out << alerts << " alert(s) raised\n";
  return kExitOk;
}

}  // namespace

int run_command(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"hearth: home monitoring gateway", "hearth"};
  app.require_subcommand(1);
  Options o;

  auto* run = app.add_subcommand("run", "Run the gateway and its HTTP API");
  run->add_option("--config", o.config, "Config file (falls back to $HEARTH_CONFIG)");
  run->add_option("--scenario", o.scenario, "Scenario file of timed stimuli");
  run->add_option("--speed", o.speed, "Simulated time per wall time")->check(CLI::PositiveNumber);
  run->add_option("--ticks", o.ticks, "Stop after this many ticks")->check(CLI::NonNegativeNumber);

  auto* sim = app.add_subcommand("simulate", "Run a scenario headless and write trace + ledger");
  sim->add_option("--config", o.config, "Config file (falls back to $HEARTH_CONFIG)");
  sim->add_option("--scenario", o.scenario, "Scenario file of timed stimuli");
  sim->add_option("--ticks", o.ticks, "Number of ticks to simulate")->required();
  sim->add_option("--out", o.out, "Output directory (default: the config data_dir)");

  auto* cal = app.add_subcommand("calibrate", "Clean-air MQ-2 calibration against the simulator");
  cal->add_option("--config", o.config, "Config file (falls back to $HEARTH_CONFIG)");
  cal->add_option("--device", o.device, "GAS device id");
  cal->add_option("--samples", o.samples, "Clean-air samples (default: config)");

  auto* rep = app.add_subcommand("replay", "Print the alert timeline of a ledger");
  rep->add_option("--ledger", o.ledger, "ledger.jsonl path")->required();

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n";
    const auto* sub = app.get_subcommands().empty() ? &app : app.get_subcommands().front();
    err << sub->help();
    return kExitValidation;
  }

  try {
    if (run->parsed()) return cmd_run(o, out, err);
    if (sim->parsed()) return cmd_simulate(o, out, err);
    if (cal->parsed()) return cmd_calibrate(o, out, err);
    return cmd_replay(o, out, err);
  } catch (const Error& e) {
    err << "hearth: " << e.what() << '\n';
    return exit_code_for(e.code());
  } catch (const std::exception& e) {
    err << "hearth: " << e.what() << '\n';
    return kExitRuntime;
  }
}

int run_command(int argc, char** argv) {
  std::vector<std::string> args(argv + (argc > 0 ? 1 : 0), argv + argc);
  return run_command(args, std::cout, std::cerr);
}

}  // namespace hearth
