#include "hearth/config.hpp"

#include <fstream>
#include <set>

#include "hearth/error.hpp"

namespace hearth {
namespace {

// Reads typed fields from one JSON object and rejects keys nobody asked for,
// so a typo in the config fails loudly instead of silently taking a default.
class ObjectReader {
 public:
  ObjectReader(const nlohmann::json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw Error(ErrorCode::kSchemaError, where_ + " must be an object");
  }

  template <class T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    const auto& v = j_.at(key);
    try {
      if constexpr (std::is_same_v<T, bool>) {
        if (!v.is_boolean()) throw Error(ErrorCode::kSchemaError, name(key) + " must be a boolean");
      } else if constexpr (std::is_integral_v<T>) {
        if (!v.is_number_integer()) {
          throw Error(ErrorCode::kSchemaError, name(key) + " must be an integer");
        }
      } else if constexpr (std::is_floating_point_v<T>) {
        if (!v.is_number()) throw Error(ErrorCode::kSchemaError, name(key) + " must be a number");
      } else {
        if (!v.is_string()) throw Error(ErrorCode::kSchemaError, name(key) + " must be a string");
      }
      out = v.get<T>();
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::kSchemaError, name(key) + ": " + e.what());
    }
  }

  const nlohmann::json* child(const char* key) {
    seen_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }

  std::string name(const char* key) const { return where_ + "." + key; }

  void finish() const {
    for (const auto& [key, value] : j_.items()) {
      if (!seen_.count(key)) throw Error(ErrorCode::kSchemaError, "unknown key " + where_ + "." + key);
    }
  }

 private:
  const nlohmann::json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

GasCurve read_curve(const nlohmann::json& j, const std::string& where, GasCurve curve) {
  ObjectReader r(j, where);
  r.get("a", curve.a);
  r.get("b", curve.b);
  r.finish();
  curve.validate();
  return curve;
}

DeviceDescriptor read_device(const nlohmann::json& j, const std::string& where,
                             const GasCurve& lpg, const GasCurve& smoke) {
  ObjectReader r(j, where);
  DeviceDescriptor d;
  std::string kind_text;
  r.get("id", d.id);
  r.get("kind", kind_text);
  r.get("channel", d.channel);
  const auto kind = parse_device_kind(kind_text);
  if (!kind) throw Error(ErrorCode::kSchemaError, where + ".kind '" + kind_text + "' is not a device kind");

  switch (*kind) {
    case DeviceKind::kTemp: {
      TempDevice c;
      r.get("baseline_c", c.baseline_c);
      r.get("front_end_gain", c.front_end_gain);
      r.get("noise_sigma_v", c.noise_sigma_v);
      d.config = c;
      break;
    }
    case DeviceKind::kGas: {
      GasDevice c;
      double r_adjust = c.mq2.r_adjust();
      double vcc = c.mq2.vcc();
      double ratio = c.mq2.clean_air_ratio();
      r.get("r_adjust_kohm", r_adjust);
      r.get("vcc", vcc);
      r.get("clean_air_ratio", ratio);
      r.get("r0_kohm", c.r0_kohm);
      r.get("noise_sigma_v", c.noise_sigma_v);
      c.mq2 = Mq2Config(r_adjust, vcc, ratio);
      c.lpg = lpg;
      c.smoke = smoke;
      if (const auto* v = r.child("lpg")) c.lpg = read_curve(*v, where + ".lpg", c.lpg);
      if (const auto* v = r.child("smoke")) c.smoke = read_curve(*v, where + ".smoke", c.smoke);
      d.config = c;
      break;
    }
    case DeviceKind::kPir: d.config = PirDevice{}; break;
    case DeviceKind::kLeak: {
      LeakDevice c;
      r.get("gain", c.leak.gain);
      r.get("window", c.leak.window);
      r.get("threshold_v", c.leak.threshold);
      r.get("rail_v", c.leak.rail);
      r.get("cycles_per_window", c.cycles_per_window);
      r.get("noise_sigma_v", c.noise_sigma_v);
      d.config = c;
      break;
    }
    case DeviceKind::kLight: {
      LightDevice c;
      r.get("on_node_v", c.on_node_v);
      r.get("off_node_v", c.off_node_v);
      r.get("initially_on", c.initially_on);
      r.get("noise_sigma_v", c.noise_sigma_v);
      d.config = c;
      break;
    }
  }
  r.finish();
  return d;
}

}  // namespace

std::vector<DeviceDescriptor> default_devices() {
  return {
      {"temp1", "A1", TempDevice{}},
      {"gas1", "A2", GasDevice{}},
      {"pir1", "D2", PirDevice{}},
      {"leak1", "A3", LeakDevice{}},
      {"light1", "A0", LightDevice{}},
  };
}

GatewayConfig default_config() {
  GatewayConfig c;
  c.devices = default_devices();
  return c;
}

GatewayConfig parse_config(const nlohmann::json& document) {
  GatewayConfig c = default_config();
  ObjectReader r(document, "config");
  r.get("home_name", c.home_name);
  r.get("seed", c.home.seed);
  r.get("tick_ms", c.home.tick_ms);
  std::string data_dir = c.data_dir.string();
  r.get("data_dir", data_dir);
  c.data_dir = data_dir;
  r.get("calibration_samples", c.calibration_samples);
  r.get("sim_epoch", c.sim_epoch);
  std::string mode_text(to_string(c.initial_mode));
  r.get("initial_mode", mode_text);
  const auto mode = parse_home_mode(mode_text);
  if (!mode) throw Error(ErrorCode::kInvalidInput, "initial_mode must be HOME or AWAY");
  c.initial_mode = *mode;

  if (const auto* adc = r.child("adc")) {
    ObjectReader a(*adc, "config.adc");
    a.get("vref", c.home.adc.vref);
    a.get("resolution_bits", c.home.adc.resolution_bits);
    a.finish();
  }
  c.home.adc.validate();

  GasCurve lpg = GasCurve::default_lpg();
  GasCurve smoke = GasCurve::default_smoke();
  if (const auto* curves = r.child("curves")) {
    ObjectReader cr(*curves, "config.curves");
    if (const auto* v = cr.child("lpg")) lpg = read_curve(*v, "config.curves.lpg", lpg);
    if (const auto* v = cr.child("smoke")) smoke = read_curve(*v, "config.curves.smoke", smoke);
    cr.finish();
  }

  if (const auto* devices = r.child("devices")) {
    if (!devices->is_array()) throw Error(ErrorCode::kSchemaError, "config.devices must be an array");
    c.devices.clear();
    for (std::size_t i = 0; i < devices->size(); ++i) {
      c.devices.push_back(
          read_device((*devices)[i], "config.devices[" + std::to_string(i) + "]", lpg, smoke));
    }
  } else {
    for (auto& d : c.devices) {
      if (auto* g = std::get_if<GasDevice>(&d.config)) {
        g->lpg = lpg;
        g->smoke = smoke;
      }
    }
  }

  if (const auto* rules = r.child("rules")) {
    ObjectReader rr(*rules, "config.rules");
    rr.get("debounce_k", c.rules.debounce_k);
    rr.get("temp_raise_c", c.rules.temp_raise_c);
    rr.get("temp_clear_c", c.rules.temp_clear_c);
    rr.get("gas_raise_ppm", c.rules.gas_raise_ppm);
    rr.get("gas_clear_ppm", c.rules.gas_clear_ppm);
    rr.get("smoke_raise_ppm", c.rules.smoke_raise_ppm);
    rr.get("smoke_clear_ppm", c.rules.smoke_clear_ppm);
    rr.get("leak_clear_v", c.rules.leak_clear_v);
    rr.finish();
  }
  for (const auto& rule : make_rules(c.rules)) rule.validate();
  for (const auto& d : c.devices) {
    const auto* leak = std::get_if<LeakDevice>(&d.config);
    if (leak && !(leak->leak.threshold > c.rules.leak_clear_v)) {
      throw Error(ErrorCode::kInvalidInput,
                  "leak device '" + d.id + "' threshold_v must exceed rules.leak_clear_v");
    }
  }

  if (const auto* sms = r.child("sms")) {
    ObjectReader sr(*sms, "config.sms");
    sr.get("destination", c.sms.destination);
    sr.get("max_retries", c.sms.retry.max_retries);
    sr.get("base_ms", c.sms.retry.base_ms);
    sr.get("multiplier", c.sms.retry.multiplier);
    sr.get("sink", c.sms.sink);
    sr.get("webhook_url", c.sms.webhook_url);
    if (const auto* link = sr.child("link")) {
      ObjectReader lr(*link, "config.sms.link");
      lr.get("loss_probability", c.sms.loss_probability);
      lr.get("latency_min_ms", c.sms.latency_min_ms);
      lr.get("latency_max_ms", c.sms.latency_max_ms);
      lr.get("seed", c.sms.link_seed);
      lr.finish();
    }
    sr.finish();
  }
  if (!is_e164(c.sms.destination)) {
    throw Error(ErrorCode::kInvalidDestination, "'" + c.sms.destination + "' is not E.164");
  }
  c.sms.retry.validate();
  LinkModel(c.sms.loss_probability, c.sms.link_seed, c.sms.latency_min_ms, c.sms.latency_max_ms);
  if (c.sms.sink != "modem" && c.sms.sink != "file" && c.sms.sink != "webhook") {
    throw Error(ErrorCode::kInvalidInput, "config.sms.sink must be modem, file or webhook");
  }
  if (c.sms.sink == "webhook" && c.sms.webhook_url.empty()) {
    throw Error(ErrorCode::kInvalidInput, "config.sms.webhook_url is required for the webhook sink");
  }

  if (const auto* api = r.child("api")) {
    ObjectReader ar(*api, "config.api");
    ar.get("token", c.api.token);
    ar.get("host", c.api.host);
    ar.get("port", c.api.port);
    ar.get("ui_dir", c.api.ui_dir);
    ar.finish();
  }
  if (c.api.token.empty()) throw Error(ErrorCode::kInvalidInput, "config.api.token must not be empty");
  if (c.api.port < 0 || c.api.port > 65535) {
    throw Error(ErrorCode::kInvalidInput, "config.api.port out of range");
  }
  if (c.calibration_samples < 1) {
    throw Error(ErrorCode::kCalibrationError, "calibration_samples must be >= 1");
  }
  r.finish();
  VirtualHome probe(c.devices, c.home);  // validates device parameters
  return c;
}

GatewayConfig load_config_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kInvalidInput, "cannot open config '" + path.string() + "'");
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorCode::kSchemaError, "config '" + path.string() + "': " + e.what());
  }
  return parse_config(doc);
}

}  // namespace hearth
