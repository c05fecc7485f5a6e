#include "hearth/alert_engine.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>

#include "hearth/error.hpp"

namespace hearth {
namespace {

constexpr AlertKind kAllKinds[] = {AlertKind::kTempHigh,  AlertKind::kGasHigh,
                                   AlertKind::kSmokeHigh, AlertKind::kIntrusion,
                                   AlertKind::kWaterLeak, AlertKind::kLightsLeftOn};

bool is_analog(AlertKind kind) {
  return kind == AlertKind::kTempHigh || kind == AlertKind::kGasHigh ||
         kind == AlertKind::kSmokeHigh;
}

std::string format_number(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

}  // namespace

std::string_view to_string(HomeMode mode) { return mode == HomeMode::kHome ? "HOME" : "AWAY"; }

std::optional<HomeMode> parse_home_mode(std::string_view text) {
  std::string lower(text);
  std::transform(lower.begin(), lower.end(), lower.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (lower == "home") return HomeMode::kHome;
  if (lower == "away") return HomeMode::kAway;
  return std::nullopt;
}

std::string_view to_string(AlertKind kind) {
  switch (kind) {
    case AlertKind::kTempHigh: return "TEMP_HIGH";
    case AlertKind::kGasHigh: return "GAS_HIGH";
    case AlertKind::kSmokeHigh: return "SMOKE_HIGH";
    case AlertKind::kIntrusion: return "INTRUSION";
    case AlertKind::kWaterLeak: return "WATER_LEAK";
    case AlertKind::kLightsLeftOn: return "LIGHTS_LEFT_ON";
  }
  return "?";
}

std::optional<AlertKind> parse_alert_kind(std::string_view text) {
  for (const AlertKind k : kAllKinds) {
    if (to_string(k) == text) return k;
  }
  return std::nullopt;
}

DeviceKind watched_kind(AlertKind kind) {
  switch (kind) {
    case AlertKind::kTempHigh: return DeviceKind::kTemp;
    case AlertKind::kGasHigh:
    case AlertKind::kSmokeHigh: return DeviceKind::kGas;
    case AlertKind::kIntrusion: return DeviceKind::kPir;
    case AlertKind::kWaterLeak: return DeviceKind::kLeak;
    case AlertKind::kLightsLeftOn: return DeviceKind::kLight;
  }
  return DeviceKind::kTemp;
}

bool is_mode_gated(AlertKind kind) {
  return kind == AlertKind::kIntrusion || kind == AlertKind::kLightsLeftOn;
}

bool auto_clears(AlertKind kind) { return kind != AlertKind::kIntrusion; }

std::string_view to_string(AlertState state) {
  switch (state) {
    case AlertState::kActive: return "ACTIVE";
    case AlertState::kAcked: return "ACKED";
    case AlertState::kCleared: return "CLEARED";
  }
  return "?";
}

std::string_view to_string(AlertEventType type) {
  switch (type) {
    case AlertEventType::kRaised: return "raised";
    case AlertEventType::kAcked: return "acked";
    case AlertEventType::kCleared: return "cleared";
  }
  return "?";
}

void Rule::validate() const {
  if (debounce_k < 1) {
    throw Error(ErrorCode::kInvalidInput,
                std::string(to_string(kind)) + ": debounce k must be >= 1");
  }
  if (is_analog(kind) && !(clear < raise)) {
    throw Error(ErrorCode::kInvalidInput,
                std::string(to_string(kind)) + ": clear level must be below the raise level");
  }
  if (kind == AlertKind::kWaterLeak && !(clear >= 0.0)) {
    throw Error(ErrorCode::kInvalidInput, "WATER_LEAK: clear level must be >= 0");
  }
}

std::vector<Rule> make_rules(const RuleDefaults& d) {
  const int k = d.debounce_k;
  return {
      {AlertKind::kTempHigh, d.temp_raise_c, d.temp_clear_c, k},
      {AlertKind::kGasHigh, d.gas_raise_ppm, d.gas_clear_ppm, k},
      {AlertKind::kSmokeHigh, d.smoke_raise_ppm, d.smoke_clear_ppm, k},
      {AlertKind::kIntrusion, 0.0, 0.0, k},
      {AlertKind::kWaterLeak, 0.0, d.leak_clear_v, k},
      {AlertKind::kLightsLeftOn, 0.0, 0.0, k},
  };
}

nlohmann::ordered_json to_json(const Alert& alert) {
  nlohmann::ordered_json j;
  j["id"] = alert.id;
  j["kind"] = to_string(alert.kind);
  j["device"] = alert.device;
  j["raised_at_ms"] = alert.raised_at_ms;
  j["state"] = to_string(alert.state);
  j["updated_at_ms"] = alert.updated_at_ms;
  j["detail"] = alert.detail;
  auto evidence = nlohmann::ordered_json::array();
  for (const auto& r : alert.evidence) evidence.push_back(to_json(r));
  j["evidence"] = std::move(evidence);
  return j;
}

AlertEngine::AlertEngine(std::vector<Rule> rules,
                         std::map<std::string, DeviceKind, std::less<>> devices, HomeMode mode)
    : rules_(std::move(rules)), devices_(std::move(devices)), mode_(mode) {
  for (const auto& r : rules_) r.validate();
}

void AlertEngine::set_gas_calibration(const std::string& device, GasCalibration calibration) {
  if (!(calibration.r0_kohm > 0.0)) {
    throw Error(ErrorCode::kNotCalibrated, "R0 for '" + device + "' must be positive");
  }
  calibration.lpg.validate();
  calibration.smoke.validate();
  gas_[device] = calibration;
}

bool AlertEngine::has_gas_calibration(std::string_view device) const {
  return gas_.find(device) != gas_.end();
}

const DeviceKind* AlertEngine::device_kind(const SensorReading& r) {
  const auto it = devices_.find(r.device);
  if (it == devices_.end()) {
    diagnose("unknown:" + r.device, "t=" + std::to_string(r.t_ms) +
                                         "ms: reading from unknown device '" + r.device +
                                         "' ignored");
    return nullptr;
  }
  return &it->second;
}

std::optional<double> AlertEngine::measure(const Rule& rule, const SensorReading& r) {
  if (!std::isfinite(r.value)) {
    diagnose("fault:" + r.device,
             "t=" + std::to_string(r.t_ms) + "ms: " + r.device + " produced no value (sensor fault)");
    return std::nullopt;
  }
  if (rule.kind == AlertKind::kGasHigh || rule.kind == AlertKind::kSmokeHigh) {
    const auto it = gas_.find(r.device);
    if (it == gas_.end()) {
      diagnose("uncalibrated:" + r.device, "t=" + std::to_string(r.t_ms) + "ms: " + r.device +
                                                 " is not calibrated; gas rules skipped");
      return std::nullopt;
    }
    if (!(r.value > 0.0)) return std::nullopt;
    const GasCurve& curve = rule.kind == AlertKind::kGasHigh ? it->second.lpg : it->second.smoke;
    return mq2_ppm(r.value, it->second.r0_kohm, curve);
  }
  return r.value;
}

bool AlertEngine::triggers(const Rule& rule, const SensorReading& r, double measured) const {
  switch (rule.kind) {
    case AlertKind::kTempHigh:
    case AlertKind::kGasHigh:
    case AlertKind::kSmokeHigh: return measured > rule.raise;
    case AlertKind::kIntrusion:
      return mode_ == HomeMode::kAway && pir_state(r.raw ? DigitalLevel::kHigh : DigitalLevel::kLow) ==
                                             MotionState::kMotion;
    case AlertKind::kWaterLeak: return r.raw == 1;
    case AlertKind::kLightsLeftOn: return mode_ == HomeMode::kAway && measured >= 0.5;
  }
  return false;
}

bool AlertEngine::clear_eligible(const Rule& rule, const SensorReading&, double measured) const {
  switch (rule.kind) {
    case AlertKind::kTempHigh:
    case AlertKind::kGasHigh:
    case AlertKind::kSmokeHigh:
    case AlertKind::kWaterLeak: return measured <= rule.clear;
    case AlertKind::kLightsLeftOn: return measured < 0.5;
    case AlertKind::kIntrusion: return false;
  }
  return false;
}

bool AlertEngine::has_active(AlertKind kind, std::string_view device) const {
  return std::any_of(alerts_.begin(), alerts_.end(), [&](const Alert& a) {
    return a.kind == kind && a.device == device && a.state == AlertState::kActive;
  });
}

std::string AlertEngine::describe(const Rule& rule, const SensorReading& r, double measured) const {
  switch (rule.kind) {
    case AlertKind::kTempHigh:
      return format_number(measured) + " C above " + format_number(rule.raise) + " C";
    case AlertKind::kGasHigh:
      return "LPG " + format_number(measured) + " ppm above " + format_number(rule.raise) + " ppm";
    case AlertKind::kSmokeHigh:
      return "smoke " + format_number(measured) + " ppm above " + format_number(rule.raise) +
             " ppm";
    case AlertKind::kIntrusion: return "motion detected while AWAY";
    case AlertKind::kWaterLeak:
      return "pipe vibration " + format_number(measured) + " V, water leaking";
    case AlertKind::kLightsLeftOn: return "light left ON while AWAY";
  }
  (void)r;
  return {};
}

std::vector<Alert> AlertEngine::evaluate(std::span<const SensorReading> readings) {
  std::vector<Alert> raised;
  for (const SensorReading& r : readings) {
    const DeviceKind* kind = device_kind(r);
    if (kind == nullptr) continue;
    for (std::size_t i = 0; i < rules_.size(); ++i) {
      const Rule& rule = rules_[i];
      if (watched_kind(rule.kind) != *kind) continue;
      Track& track = tracks_[{i, r.device}];
      const auto measured = measure(rule, r);
      if (!measured || !triggers(rule, r, *measured)) {
        track.raise_count = 0;
        track.evidence.clear();
        continue;
      }
      ++track.raise_count;
      track.evidence.push_back(r);
      if (track.evidence.size() > static_cast<std::size_t>(rule.debounce_k)) {
        track.evidence.erase(track.evidence.begin());
      }
      if (track.raise_count == rule.debounce_k && !has_active(rule.kind, r.device)) {
        Alert a;
        a.id = next_id_++;
        a.kind = rule.kind;
        a.device = r.device;
        a.raised_at_ms = r.t_ms;
        a.updated_at_ms = r.t_ms;
        a.evidence = track.evidence;
        a.detail = describe(rule, r, *measured);
        alerts_.push_back(a);
        raised.push_back(std::move(a));
      }
    }
  }
  return raised;
}

std::vector<AlertEvent> AlertEngine::clear_check(std::span<const SensorReading> readings) {
  std::vector<AlertEvent> cleared;
  for (const SensorReading& r : readings) {
    const auto it = devices_.find(r.device);
    if (it == devices_.end()) continue;
    for (std::size_t i = 0; i < rules_.size(); ++i) {
      const Rule& rule = rules_[i];
      if (watched_kind(rule.kind) != it->second || !auto_clears(rule.kind)) continue;
      Track& track = tracks_[{i, r.device}];
      const auto measured = measure(rule, r);
      if (!measured || !clear_eligible(rule, r, *measured)) {
        track.clear_count = 0;
        continue;
      }
      ++track.clear_count;
      if (track.clear_count < rule.debounce_k) continue;
      for (Alert& a : alerts_) {
        if (a.kind == rule.kind && a.device == r.device && a.state != AlertState::kCleared) {
          a.state = AlertState::kCleared;
          a.updated_at_ms = r.t_ms;
          cleared.push_back({AlertEventType::kCleared, r.t_ms, a});
        }
      }
    }
  }
  return cleared;
}

std::vector<AlertEvent> AlertEngine::process(std::span<const SensorReading> readings) {
  std::vector<AlertEvent> events;
  for (auto& a : evaluate(readings)) {
    const std::int64_t t = a.raised_at_ms;
    events.push_back({AlertEventType::kRaised, t, std::move(a)});
  }
  for (auto& e : clear_check(readings)) events.push_back(std::move(e));
  return events;
}

bool AlertEngine::set_mode(HomeMode mode) {
  if (mode == mode_) return false;
  mode_ = mode;
  for (auto& [key, track] : tracks_) {
    if (is_mode_gated(rules_[key.first].kind)) {
      track.raise_count = 0;
      track.evidence.clear();
    }
  }
  return true;
}

std::optional<AlertEvent> AlertEngine::acknowledge(std::uint64_t alert_id, std::int64_t t_ms) {
  for (Alert& a : alerts_) {
    if (a.id != alert_id) continue;
    if (a.state != AlertState::kActive) return std::nullopt;
    a.state = AlertState::kAcked;
    a.updated_at_ms = t_ms;
    return AlertEvent{AlertEventType::kAcked, t_ms, a};
  }
  throw Error(ErrorCode::kNotFound, "no alert with id " + std::to_string(alert_id));
}

const Alert* AlertEngine::find(std::uint64_t alert_id) const {
  for (const Alert& a : alerts_) {
    if (a.id == alert_id) return &a;
  }
  return nullptr;
}

std::size_t AlertEngine::active_count() const {
  return static_cast<std::size_t>(std::count_if(alerts_.begin(), alerts_.end(), [](const Alert& a) {
    return a.state == AlertState::kActive;
  }));
}

void AlertEngine::diagnose(const std::string& key, std::string message) {
  if (reported_.insert(key).second) diagnostics_.push_back(std::move(message));
}

std::vector<std::string> AlertEngine::take_diagnostics() {
  std::vector<std::string> out;
  out.swap(diagnostics_);
  return out;
}

}  // namespace hearth
