#include "hearth/virtual_home.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <set>
#include <sstream>

#include "hearth/error.hpp"

namespace hearth {
namespace {

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

constexpr double kLm35VoltsPerDegree = 0.010;

DeviceKind payload_kind(const StimulusPayload& payload) {
  return std::visit(Overloaded{
                        [](const AmbientTemp&) { return DeviceKind::kTemp; },
                        [](const GasConcentration&) { return DeviceKind::kGas; },
                        [](const Motion&) { return DeviceKind::kPir; },
                        [](const Vibration&) { return DeviceKind::kLeak; },
                        [](const SwitchPosition&) { return DeviceKind::kLight; },
                    },
                    payload);
}

void validate_config(const DeviceDescriptor& d) {
  std::visit(Overloaded{
                 [&](const TempDevice& c) {
                   if (c.front_end_gain < 1) {
                     throw Error(ErrorCode::kInvalidInput, d.id + ": front-end gain must be >= 1");
                   }
                   if (c.noise_sigma_v < 0) {
                     throw Error(ErrorCode::kInvalidInput, d.id + ": negative noise sigma");
                   }
                 },
                 [&](const GasDevice& c) {
                   c.lpg.validate();
                   c.smoke.validate();
                   if (!(c.r0_kohm > 0.0)) {
                     throw Error(ErrorCode::kInvalidInput, d.id + ": R0 must be positive");
                   }
                   if (c.noise_sigma_v < 0) {
                     throw Error(ErrorCode::kInvalidInput, d.id + ": negative noise sigma");
                   }
                 },
                 [](const PirDevice&) {},
                 [&](const LeakDevice& c) {
                   c.leak.validate();
                   if (c.cycles_per_window < 1) {
                     throw Error(ErrorCode::kInvalidInput, d.id + ": cycles_per_window must be >= 1");
                   }
                   if (c.noise_sigma_v < 0) {
                     throw Error(ErrorCode::kInvalidInput, d.id + ": negative noise sigma");
                   }
                 },
                 [&](const LightDevice& c) {
                   if (c.noise_sigma_v < 0) {
                     throw Error(ErrorCode::kInvalidInput, d.id + ": negative noise sigma");
                   }
                 },
             },
             d.config);
}

}  // namespace

std::string_view to_string(DeviceKind kind) {
  switch (kind) {
    case DeviceKind::kTemp: return "TEMP";
    case DeviceKind::kGas: return "GAS";
    case DeviceKind::kPir: return "PIR";
    case DeviceKind::kLeak: return "LEAK";
    case DeviceKind::kLight: return "LIGHT";
  }
  return "?";
}

std::optional<DeviceKind> parse_device_kind(std::string_view text) {
  for (auto k : {DeviceKind::kTemp, DeviceKind::kGas, DeviceKind::kPir, DeviceKind::kLeak,
                 DeviceKind::kLight}) {
    if (to_string(k) == text) return k;
  }
  return std::nullopt;
}

nlohmann::ordered_json to_json(const SensorReading& reading) {
  nlohmann::ordered_json j;
  j["t_ms"] = reading.t_ms;
  j["device"] = reading.device;
  j["raw"] = reading.raw;
  if (std::isfinite(reading.value)) {
    j["value"] = reading.value;
  } else {
    j["value"] = nullptr;
  }
  j["unit"] = reading.unit;
  return j;
}

std::string trace_to_jsonl(const Trace& trace) {
  std::string out;
  for (const auto& r : trace.readings) {
    out += to_json(r).dump();
    out += '\n';
  }
  return out;
}

VirtualHome::VirtualHome(std::vector<DeviceDescriptor> devices, HomeOptions options)
    : devices_(std::move(devices)), options_(options), rng_(options.seed) {
  options_.adc.validate();
  if (options_.tick_ms <= 0) throw Error(ErrorCode::kInvalidInput, "tick must be positive");

  std::set<std::string, std::less<>> seen;
  latent_.reserve(devices_.size());
  for (const auto& d : devices_) {
    if (d.id.empty()) throw Error(ErrorCode::kInvalidInput, "device id must not be empty");
    if (!seen.insert(d.id).second) {
      throw Error(ErrorCode::kInvalidInput, "duplicate device id '" + d.id + "'");
    }
    validate_config(d);

    Latent l;
    if (const auto* t = std::get_if<TempDevice>(&d.config)) l.ambient_c = t->baseline_c;
    if (const auto* g = std::get_if<GasDevice>(&d.config)) l.rs_ratio = g->mq2.clean_air_ratio();
    if (const auto* s = std::get_if<LightDevice>(&d.config)) l.switch_on = s->initially_on;
    latent_.push_back(l);
  }
}

const DeviceDescriptor* VirtualHome::find(std::string_view id) const {
  for (const auto& d : devices_) {
    if (d.id == id) return &d;
  }
  return nullptr;
}

std::size_t VirtualHome::index_of(std::string_view id) const {
  for (std::size_t i = 0; i < devices_.size(); ++i) {
    if (devices_[i].id == id) return i;
  }
  throw Error(ErrorCode::kUnknownDevice, "no device '" + std::string(id) + "'");
}

void VirtualHome::validate(const Stimulus& stimulus) const {
  if (stimulus.t_ms < 0) throw Error(ErrorCode::kSchemaError, "t_ms must be >= 0");
  const auto& d = devices_[index_of(stimulus.target)];
  const DeviceKind want = payload_kind(stimulus.payload);
  if (want != d.kind()) {
    throw Error(ErrorCode::kSchemaError, "payload for " + std::string(to_string(want)) +
                                             " sent to " + std::string(to_string(d.kind())) +
                                             " device '" + d.id + "'");
  }
  std::visit(Overloaded{
                 [](const AmbientTemp& p) {
                   if (!std::isfinite(p.celsius)) {
                     throw Error(ErrorCode::kSchemaError, "ambient_c must be finite");
                   }
                 },
                 [](const GasConcentration& p) {
                   if (!std::isfinite(p.ppm) || p.ppm < 0) {
                     throw Error(ErrorCode::kSchemaError, "gas ppm must be finite and >= 0");
                   }
                 },
                 [](const Motion&) {},
                 [](const Vibration& p) {
                   if (!std::isfinite(p.microvolts) || p.microvolts < 0) {
                     throw Error(ErrorCode::kSchemaError, "vibration_uV must be finite and >= 0");
                   }
                 },
                 [](const SwitchPosition&) {},
             },
             stimulus.payload);
}

void VirtualHome::apply_stimulus(const Stimulus& stimulus) {
  validate(stimulus);
  const std::size_t i = index_of(stimulus.target);
  Latent& l = latent_[i];
  std::visit(Overloaded{
                 [&](const AmbientTemp& p) { l.ambient_c = p.celsius; },
                 [&](const GasConcentration& p) {
                   const auto& g = std::get<GasDevice>(devices_[i].config);
                   const GasCurve& curve = p.gas == Gas::kLpg ? g.lpg : g.smoke;
                   const double clean = g.mq2.clean_air_ratio();
                   // Concentrations below the clean-air equivalent read as clean air.
                   l.rs_ratio = p.ppm > 0.0 ? std::min(mq2_ratio_for_ppm(p.ppm, curve), clean) : clean;
                 },
                 [&](const Motion& p) { l.motion = p.present; },
                 [&](const Vibration& p) { l.vibration_uv = p.microvolts; },
                 [&](const SwitchPosition& p) { l.switch_on = p.on; },
             },
             stimulus.payload);
}

std::optional<ActuatorChange> VirtualHome::apply_command(const ActuatorCommand& command) {
  const std::size_t i = index_of(command.device);
  if (devices_[i].kind() != DeviceKind::kLight) {
    throw Error(ErrorCode::kUnsupportedActuator,
                "device '" + command.device + "' is " +
                    std::string(to_string(devices_[i].kind())) + ", not LIGHT");
  }
  if (latent_[i].switch_on == command.on) return std::nullopt;
  latent_[i].switch_on = command.on;
  return ActuatorChange{now_ms_, command.device, command.on ? LightState::kOn : LightState::kOff};
}

bool VirtualHome::switch_on(std::string_view id) const {
  const std::size_t i = index_of(id);
  if (devices_[i].kind() != DeviceKind::kLight) {
    throw Error(ErrorCode::kUnsupportedActuator, "device '" + std::string(id) + "' is not LIGHT");
  }
  return latent_[i].switch_on;
}

double VirtualHome::noise(double sigma) {
  if (sigma <= 0.0) return 0.0;
  std::normal_distribution<double> dist(0.0, sigma);
  return dist(rng_);
}

SensorReading VirtualHome::sample(std::size_t i) {
  const DeviceDescriptor& d = devices_[i];
  const Latent& l = latent_[i];
  const AdcConfig& adc = options_.adc;

  SensorReading r;
  r.t_ms = now_ms_;
  r.device = d.id;
  r.kind = d.kind();

  std::visit(
      Overloaded{
          [&](const TempDevice& c) {
            const double pin_v = l.ambient_c * kLm35VoltsPerDegree * c.front_end_gain;
            const AdcCode code = adc_encode(pin_v + noise(c.noise_sigma_v), adc);
            r.raw = code.count;
            r.value = lm35_celsius(code, adc, c.front_end_gain).celsius;
            r.unit = "C";
          },
          [&](const GasDevice& c) {
            const double vout = mq2_divider_voltage(l.rs_ratio * c.r0_kohm, c.mq2);
            const AdcCode code = adc_encode(vout + noise(c.noise_sigma_v), adc);
            r.raw = code.count;
            r.value = code.count == 0 ? std::nan("") : mq2_rs(code, c.mq2, adc);
            r.unit = "kohm";
          },
          [&](const PirDevice&) {
            r.raw = l.motion ? 1 : 0;
            r.value = l.motion ? 1.0 : 0.0;
            r.unit = "level";
          },
          [&](const LeakDevice& c) {
            // One burst of `window` samples of a sinusoidal vibration whose RMS
            // equals the latent amplitude; whole cycles make the RMS exact.
            const std::size_t n = c.leak.window;
            const double amplitude = l.vibration_uv * 1e-6 * std::numbers::sqrt2;
            std::vector<double> burst(n);
            for (std::size_t k = 0; k < n; ++k) {
              const double phase = 2.0 * std::numbers::pi * c.cycles_per_window *
                                   static_cast<double>(k) / static_cast<double>(n);
              burst[k] = amplitude * std::sin(phase) + noise(c.noise_sigma_v);
            }
            const double amplified = leak_amplified_rms(burst, c.leak);
            r.raw = amplified > c.leak.threshold ? 1 : 0;
            r.value = amplified;
            r.unit = "V";
          },
          [&](const LightDevice& c) {
            const double node_v = l.switch_on ? c.on_node_v : c.off_node_v;
            const AdcCode code = adc_encode(node_v + noise(c.noise_sigma_v), adc);
            r.raw = code.count;
            r.value = light_state(code, adc) == LightState::kOn ? 1.0 : 0.0;
            r.unit = "state";
          },
      },
      d.config);
  return r;
}

std::vector<SensorReading> VirtualHome::step(std::int64_t dt_ms) {
  if (dt_ms != options_.tick_ms) {
    throw Error(ErrorCode::kInvalidInput, "step of " + std::to_string(dt_ms) +
                                              " ms does not match the " +
                                              std::to_string(options_.tick_ms) + " ms tick");
  }
  std::vector<SensorReading> out;
  out.reserve(devices_.size());
  for (std::size_t i = 0; i < devices_.size(); ++i) out.push_back(sample(i));
  now_ms_ += dt_ms;
  return out;
}

namespace {

Stimulus parse_stimulus(const nlohmann::json& j, const VirtualHome& home) {
  if (!j.is_object()) throw Error(ErrorCode::kSchemaError, "stimulus must be an object");
  if (!j.contains("t_ms") || !j["t_ms"].is_number_integer()) {
    throw Error(ErrorCode::kSchemaError, "t_ms must be an integer");
  }
  if (!j.contains("target") || !j["target"].is_string()) {
    throw Error(ErrorCode::kSchemaError, "target must be a string");
  }
  Stimulus s;
  s.t_ms = j["t_ms"].get<std::int64_t>();
  s.target = j["target"].get<std::string>();

  std::vector<StimulusPayload> payloads;
  for (const auto& [key, value] : j.items()) {
    if (key == "t_ms" || key == "target") continue;
    if (key == "ambient_c" && value.is_number()) {
      payloads.emplace_back(AmbientTemp{value.get<double>()});
    } else if (key == "lpg_ppm" && value.is_number()) {
      payloads.emplace_back(GasConcentration{Gas::kLpg, value.get<double>()});
    } else if (key == "smoke_ppm" && value.is_number()) {
      payloads.emplace_back(GasConcentration{Gas::kSmoke, value.get<double>()});
    } else if (key == "motion" && value.is_boolean()) {
      payloads.emplace_back(Motion{value.get<bool>()});
    } else if (key == "vibration_uV" && value.is_number()) {
      payloads.emplace_back(Vibration{value.get<double>()});
    } else if (key == "switch_on" && value.is_boolean()) {
      payloads.emplace_back(SwitchPosition{value.get<bool>()});
    } else {
      throw Error(ErrorCode::kSchemaError, "unexpected field '" + key + "'");
    }
  }
  if (payloads.size() != 1) {
    throw Error(ErrorCode::kSchemaError, "exactly one payload field required");
  }
  s.payload = payloads.front();
  home.validate(s);
  return s;
}

}  // namespace

Scenario load_scenario(const nlohmann::json& document, const VirtualHome& home) {
  if (!document.is_array()) {
    throw Error(ErrorCode::kSchemaError, "scenario must be a JSON array");
  }
  Scenario sc;
  sc.stimuli.reserve(document.size());
  for (std::size_t i = 0; i < document.size(); ++i) {
    try {
      sc.stimuli.push_back(parse_stimulus(document[i], home));
    } catch (const Error& e) {
      throw Error(e.code(), "stimulus[" + std::to_string(i) + "]: " + e.what());
    }
  }
  std::stable_sort(sc.stimuli.begin(), sc.stimuli.end(),
                   [](const Stimulus& a, const Stimulus& b) { return a.t_ms < b.t_ms; });
  return sc;
}

Scenario load_scenario_file(const std::filesystem::path& path, const VirtualHome& home) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kInvalidInput, "cannot open scenario '" + path.string() + "'");
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorCode::kSchemaError, "scenario '" + path.string() + "': " + e.what());
  }
  return load_scenario(doc, home);
}

Trace run(VirtualHome& home, const Scenario& scenario, std::int64_t n_ticks) {
  Trace trace;
  trace.seed = home.seed();
  std::size_t next = 0;
  for (std::int64_t t = 0; t < n_ticks; ++t) {
    while (next < scenario.stimuli.size() && scenario.stimuli[next].t_ms <= home.now_ms()) {
      home.apply_stimulus(scenario.stimuli[next++]);
    }
    auto readings = home.step(home.tick_ms());
    trace.readings.insert(trace.readings.end(), std::make_move_iterator(readings.begin()),
                          std::make_move_iterator(readings.end()));
  }
  return trace;
}

}  // namespace hearth
