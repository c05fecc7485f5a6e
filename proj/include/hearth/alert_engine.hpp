#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "hearth/sensor_models.hpp"
#include "hearth/virtual_home.hpp"

namespace hearth {

enum class HomeMode { kHome, kAway };

std::string_view to_string(HomeMode mode);
// Case-insensitive "home" / "away".
std::optional<HomeMode> parse_home_mode(std::string_view text);

enum class AlertKind { kTempHigh, kGasHigh, kSmokeHigh, kIntrusion, kWaterLeak, kLightsLeftOn };

std::string_view to_string(AlertKind kind);
std::optional<AlertKind> parse_alert_kind(std::string_view text);

// Device kind a rule watches.
DeviceKind watched_kind(AlertKind kind);
// INTRUSION and LIGHTS_LEFT_ON only trigger while the home is AWAY.
bool is_mode_gated(AlertKind kind);
// Level rules clear themselves after k quiet samples; INTRUSION only clears
// when acknowledged.
bool auto_clears(AlertKind kind);

enum class AlertState { kActive, kAcked, kCleared };

std::string_view to_string(AlertState state);

struct Rule {
  AlertKind kind = AlertKind::kTempHigh;
  // Trigger strictly above `raise`; clear-eligible at or below `clear`. Units
  // depend on the kind (C, ppm, V). Ignored for digital rules.
  double raise = 0.0;
  double clear = 0.0;
  int debounce_k = 3;

  void validate() const;
};

struct RuleDefaults {
  int debounce_k = 3;
  double temp_raise_c = kTempAlarmAboveCelsius;
  double temp_clear_c = 23.0;
  double gas_raise_ppm = 1000.0;
  double gas_clear_ppm = 800.0;
  double smoke_raise_ppm = 300.0;
  double smoke_clear_ppm = 200.0;
  double leak_clear_v = 0.25;
};

// One rule per AlertKind.
std::vector<Rule> make_rules(const RuleDefaults& defaults = {});

struct Alert {
  std::uint64_t id = 0;
  AlertKind kind = AlertKind::kTempHigh;
  std::string device;
  std::int64_t raised_at_ms = 0;
  std::vector<SensorReading> evidence;  // the k readings that raised it
  AlertState state = AlertState::kActive;
  std::int64_t updated_at_ms = 0;
  std::string detail;

  bool operator==(const Alert&) const = default;
};

nlohmann::ordered_json to_json(const Alert& alert);

enum class AlertEventType { kRaised, kAcked, kCleared };

std::string_view to_string(AlertEventType type);

struct AlertEvent {
  AlertEventType type = AlertEventType::kRaised;
  std::int64_t t_ms = 0;
  Alert alert;  // state after the transition
};

// What the engine needs to turn an MQ-2 resistance into concentrations.
struct GasCalibration {
  double r0_kohm = 0.0;
  GasCurve lpg = GasCurve::default_lpg();
  GasCurve smoke = GasCurve::default_smoke();
};

// Debounced, deduplicated alerting. Single writer; copy the engine (or its
// alerts()) to hand a snapshot to another thread.
//
// Per (rule, device) a counter counts consecutive triggering samples and
// resets on any other sample. An alert is raised on the sample where the
// counter reaches exactly k, provided no ACTIVE alert exists for that
// (kind, device); a condition that persists past k therefore raises once.
class AlertEngine {
 public:
  AlertEngine(std::vector<Rule> rules, std::map<std::string, DeviceKind, std::less<>> devices,
              HomeMode mode = HomeMode::kHome);

  void set_gas_calibration(const std::string& device, GasCalibration calibration);
  bool has_gas_calibration(std::string_view device) const;

  // Raise pass over one tick's readings. Returns newly raised alerts.
  std::vector<Alert> evaluate(std::span<const SensorReading> readings);

  // Hysteresis pass over the same tick. Returns CLEARED transitions.
  std::vector<AlertEvent> clear_check(std::span<const SensorReading> readings);

  // evaluate followed by clear_check, as lifecycle events in order.
  std::vector<AlertEvent> process(std::span<const SensorReading> readings);

  // Returns true when the mode changed. A change resets the debounce counters
  // of mode-gated rules; existing alerts are untouched.
  bool set_mode(HomeMode mode);
  HomeMode mode() const { return mode_; }

  // ACTIVE -> ACKED. Returns the event, or nullopt when the alert was already
  // ACKED/CLEARED. Throws NotFound for an unknown id.
  std::optional<AlertEvent> acknowledge(std::uint64_t alert_id, std::int64_t t_ms);

  const std::vector<Alert>& alerts() const { return alerts_; }
  const Alert* find(std::uint64_t alert_id) const;
  std::size_t active_count() const;

  // Messages about readings that could not be evaluated (unknown device,
  // uncalibrated gas sensor, faulted conversion), each reported once per
  // device and cause. Cleared by the call.
  std::vector<std::string> take_diagnostics();

 private:
  struct Track {
    int raise_count = 0;
    int clear_count = 0;
    std::vector<SensorReading> evidence;
  };

  // nullopt when the reading cannot be judged for this rule.
  std::optional<double> measure(const Rule& rule, const SensorReading& r);
  bool triggers(const Rule& rule, const SensorReading& r, double measured) const;
  bool clear_eligible(const Rule& rule, const SensorReading& r, double measured) const;
  bool has_active(AlertKind kind, std::string_view device) const;
  std::string describe(const Rule& rule, const SensorReading& r, double measured) const;
  const DeviceKind* device_kind(const SensorReading& r);
  void diagnose(const std::string& key, std::string message);

  std::vector<Rule> rules_;
  std::map<std::string, DeviceKind, std::less<>> devices_;
  std::map<std::string, GasCalibration, std::less<>> gas_;
  HomeMode mode_;
  std::map<std::pair<std::size_t, std::string>, Track> tracks_;
  std::vector<Alert> alerts_;
  std::uint64_t next_id_ = 1;
  std::vector<std::string> diagnostics_;
  std::set<std::string> reported_;
};

}  // namespace hearth
