#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "hearth/alert_engine.hpp"
#include "hearth/sms_gateway.hpp"
#include "hearth/virtual_home.hpp"

namespace hearth {

struct SmsConfig {
  std::string destination = "+97455500001";
  RetryPolicy retry{};
  double loss_probability = 0.0;
  std::int64_t latency_min_ms = 0;
  std::int64_t latency_max_ms = 0;
  std::uint64_t link_seed = 1;
  std::string sink = "modem";  // modem | file | webhook
  std::string webhook_url;
};

struct ApiConfig {
  std::string token = "change-me";
  std::string host = "127.0.0.1";
  int port = 8080;
  std::string ui_dir;  // static dashboard files served under /ui when set
};

// Everything the gateway needs, from one JSON document. Missing keys take the
// defaults below.
struct GatewayConfig {
  std::string home_name = "home";
  HomeOptions home{};
  std::vector<DeviceDescriptor> devices;
  RuleDefaults rules{};
  SmsConfig sms{};
  ApiConfig api{};
  std::filesystem::path data_dir = "data";
  int calibration_samples = 50;
  HomeMode initial_mode = HomeMode::kHome;
  std::string sim_epoch = "2020-01-01T00:00:00Z";
};

// temp1 (A1), gas1 (A2), pir1 (D2), leak1 (A3), light1 (A0).
std::vector<DeviceDescriptor> default_devices();

GatewayConfig default_config();

// Throws SchemaError for type/shape problems and InvalidInput for values
// outside their ranges.
GatewayConfig parse_config(const nlohmann::json& document);
GatewayConfig load_config_file(const std::filesystem::path& path);

}  // namespace hearth
