#pragma once

// Deterministic simulated hardware. A VirtualHome owns a registry of devices,
// each with a latent physical state (ambient temperature, gas concentration,
// motion, pipe vibration, switch position). Sampling pushes that state through
// the same forward models the real board would see (front end, divider, ADC),
// so every reading is exactly what the sensor_models conversions expect.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "hearth/sensor_models.hpp"

namespace hearth {

enum class DeviceKind { kTemp, kGas, kPir, kLeak, kLight };

std::string_view to_string(DeviceKind kind);
std::optional<DeviceKind> parse_device_kind(std::string_view text);

struct TempDevice {
  double baseline_c = 22.5;
  int front_end_gain = kLm35FrontEndGain;
  double noise_sigma_v = 0.0;
};

struct GasDevice {
  Mq2Config mq2{};
  double r0_kohm = 10.0;  // the sensor's physical R0, unknown to the gateway
  GasCurve lpg = GasCurve::default_lpg();
  GasCurve smoke = GasCurve::default_smoke();
  double noise_sigma_v = 0.0;
};

struct PirDevice {};

struct LeakDevice {
  LeakConfig leak{};
  // Whole vibration cycles captured per sampling burst.
  int cycles_per_window = 5;
  double noise_sigma_v = 0.0;
};

struct LightDevice {
  double on_node_v = 4.8;
  double off_node_v = 0.0;
  bool initially_on = false;
  double noise_sigma_v = 0.0;
};

using DeviceConfig = std::variant<TempDevice, GasDevice, PirDevice, LeakDevice, LightDevice>;

struct DeviceDescriptor {
  std::string id;
  std::string channel;  // pin label, e.g. "A0" or "D2"
  DeviceConfig config;

  DeviceKind kind() const { return static_cast<DeviceKind>(config.index()); }
};

// Stimulus payloads, one per device kind.
struct AmbientTemp {
  double celsius = 0.0;
};
struct GasConcentration {
  Gas gas = Gas::kLpg;
  double ppm = 0.0;
};
struct Motion {
  bool present = false;
};
struct Vibration {
  double microvolts = 0.0;  // RMS at the sensor output, before amplification
};
struct SwitchPosition {
  bool on = false;
};

using StimulusPayload = std::variant<AmbientTemp, GasConcentration, Motion, Vibration, SwitchPosition>;

struct Stimulus {
  std::int64_t t_ms = 0;
  std::string target;
  StimulusPayload payload;
};

struct Scenario {
  std::vector<Stimulus> stimuli;  // sorted by t_ms
};

struct SensorReading {
  std::int64_t t_ms = 0;
  std::string device;
  DeviceKind kind = DeviceKind::kTemp;
  std::uint32_t raw = 0;  // ADC code or digital level (0/1)
  double value = 0.0;     // engineering units; NaN when the conversion faults
  std::string unit;

  bool operator==(const SensorReading&) const = default;
};

nlohmann::ordered_json to_json(const SensorReading& reading);

struct ActuatorCommand {
  std::string device;
  bool on = false;
};

struct ActuatorChange {
  std::int64_t t_ms = 0;
  std::string device;
  LightState state = LightState::kOff;
};

struct Trace {
  std::uint64_t seed = 0;
  std::vector<SensorReading> readings;
  std::vector<ActuatorChange> actuator_changes;
};

// One reading per line: {"t_ms","device","raw","value","unit"}.
std::string trace_to_jsonl(const Trace& trace);

struct HomeOptions {
  std::int64_t tick_ms = 100;
  std::uint64_t seed = 0;
  AdcConfig adc{};
};

class VirtualHome {
 public:
  // Throws InvalidInput for duplicate ids or invalid device configs.
  explicit VirtualHome(std::vector<DeviceDescriptor> devices, HomeOptions options = {});

  const std::vector<DeviceDescriptor>& devices() const { return devices_; }
  const DeviceDescriptor* find(std::string_view id) const;
  std::int64_t now_ms() const { return now_ms_; }
  std::int64_t tick_ms() const { return options_.tick_ms; }
  std::uint64_t seed() const { return options_.seed; }
  const AdcConfig& adc() const { return options_.adc; }

  // Throws UnknownDevice for an absent target and SchemaError when the payload
  // does not fit the target's kind.
  void validate(const Stimulus& stimulus) const;
  void apply_stimulus(const Stimulus& stimulus);

  // Returns the change record, or nullopt when the light already had the
  // requested state. Throws UnknownDevice / UnsupportedActuator.
  std::optional<ActuatorChange> apply_command(const ActuatorCommand& command);

  // Switch position of a LIGHT device (latent, not sampled).
  bool switch_on(std::string_view id) const;

  // Samples every device once at the current clock, then advances the clock.
  // dt_ms must equal the tick.
  std::vector<SensorReading> step(std::int64_t dt_ms);

 private:
  struct Latent {
    double ambient_c = 0.0;
    double rs_ratio = 0.0;
    bool motion = false;
    double vibration_uv = 0.0;
    bool switch_on = false;
  };

  std::size_t index_of(std::string_view id) const;
  double noise(double sigma);
  SensorReading sample(std::size_t i);

  std::vector<DeviceDescriptor> devices_;
  std::vector<Latent> latent_;
  HomeOptions options_;
  std::int64_t now_ms_ = 0;
  std::mt19937_64 rng_;
};

// Parses a JSON array of stimulus objects, e.g.
//   {"t_ms": 0, "target": "temp1", "ambient_c": 22.0}
// Errors name the offending array index.
Scenario load_scenario(const nlohmann::json& document, const VirtualHome& home);
Scenario load_scenario_file(const std::filesystem::path& path, const VirtualHome& home);

// Applies each stimulus before sampling the tick it falls in, for n_ticks ticks.
Trace run(VirtualHome& home, const Scenario& scenario, std::int64_t n_ticks);

}  // namespace hearth
