#include "hearth/sensor_models.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "hearth/error.hpp"

namespace hearth {

void AdcConfig::validate() const {
  if (!(vref > 0.0) || !std::isfinite(vref)) {
    throw Error(ErrorCode::kInvalidInput, "ADC reference must be positive");
  }
  if (resolution_bits < 8 || resolution_bits > 16) {
    throw Error(ErrorCode::kInvalidInput,
                "ADC resolution must be 8..16 bits, got " + std::to_string(resolution_bits));
  }
}

AdcCode adc_encode(double volts, const AdcConfig& adc) {
  if (!std::isfinite(volts)) throw Error(ErrorCode::kInvalidInput, "non-finite voltage");
  const double scaled = std::floor(volts / adc.vref * static_cast<double>(adc.full_scale()));
  if (scaled <= 0.0) return {0};
  if (scaled >= static_cast<double>(adc.max_code())) return {adc.max_code()};
  return {static_cast<std::uint32_t>(scaled)};
}

double adc_decode(AdcCode code, const AdcConfig& adc) {
  return static_cast<double>(code.count) / static_cast<double>(adc.full_scale()) * adc.vref;
}

TempReading lm35_celsius(AdcCode code, const AdcConfig& adc, int front_end_gain) {
  const std::int64_t vref_mv = std::llround(adc.vref * 1000.0);
  const std::int64_t pin_mv = static_cast<std::int64_t>(code.count) * vref_mv / adc.full_scale();
  const std::int64_t sensor_mv = pin_mv / front_end_gain;
  TempReading out;
  out.millivolts = static_cast<int>(pin_mv);
  out.celsius = static_cast<int>(sensor_mv / kLm35MillivoltsPerDegree);
  out.alarm = out.celsius > kTempAlarmAboveCelsius;
  return out;
}

Mq2Config::Mq2Config(double r_adjust_kohm, double vcc, double clean_air_ratio)
    : r_adjust_(r_adjust_kohm), vcc_(vcc), clean_air_ratio_(clean_air_ratio) {
  if (!(r_adjust_kohm >= 0.0 && r_adjust_kohm <= kMq2AdjustMaxKohm)) {
    throw Error(ErrorCode::kInvalidInput,
                "MQ-2 trimmer must be within 0..50 kOhm, got " + std::to_string(r_adjust_kohm));
  }
  if (!(vcc > 0.0) || !std::isfinite(vcc)) {
    throw Error(ErrorCode::kInvalidInput, "MQ-2 supply voltage must be positive");
  }
  if (!(clean_air_ratio > 0.0) || !std::isfinite(clean_air_ratio)) {
    throw Error(ErrorCode::kInvalidInput, "clean-air ratio must be positive");
  }
}

std::string_view to_string(Gas gas) { return gas == Gas::kLpg ? "LPG" : "SMOKE"; }

void GasCurve::validate() const {
  if (!(a > 0.0) || !std::isfinite(a)) {
    throw Error(ErrorCode::kInvalidInput, "gas curve scale must be positive");
  }
  if (!(b < 0.0) || !std::isfinite(b)) {
    throw Error(ErrorCode::kInvalidInput, "gas curve exponent must be negative");
  }
}

double mq2_rs(AdcCode code, const Mq2Config& cfg, const AdcConfig& adc) {
  if (code.count == 0) {
    throw Error(ErrorCode::kSensorOpenCircuit, "MQ-2 divider output at ground");
  }
  const double vout = adc_decode(code, adc);
  return std::max(0.0, cfg.r_load() * (cfg.vcc() - vout) / vout);
}

double mq2_divider_voltage(double rs_kohm, const Mq2Config& cfg) {
  return cfg.vcc() * cfg.r_load() / (rs_kohm + cfg.r_load());
}

CalibrationRecord mq2_calibrate(std::span<const AdcCode> samples, const Mq2Config& cfg,
                                const AdcConfig& adc, std::int64_t t_ms) {
  if (samples.empty()) {
    throw Error(ErrorCode::kCalibrationError, "no clean-air samples");
  }
  // Welford: identical samples keep the mean exact and the spread at zero.
  double mean = 0.0;
  double m2 = 0.0;
  std::int64_t n = 0;
  for (const AdcCode code : samples) {
    const double rs = mq2_rs(code, cfg, adc);
    ++n;
    const double delta = rs - mean;
    mean += delta / static_cast<double>(n);
    m2 += delta * (rs - mean);
  }

  CalibrationRecord rec;
  rec.sample_count = n;
  rec.rs_mean = mean;
  rec.rs_stddev = std::sqrt(m2 / static_cast<double>(n));
  rec.r0 = mean / cfg.clean_air_ratio();
  rec.r_load = cfg.r_load();
  rec.t_ms = t_ms;
  if (!(rec.r0 > 0.0)) {
    throw Error(ErrorCode::kCalibrationError, "clean-air samples imply a non-positive R0");
  }
  return rec;
}

double mq2_ppm(double rs_kohm, double r0_kohm, const GasCurve& curve) {
  if (!(r0_kohm > 0.0)) throw Error(ErrorCode::kNotCalibrated, "R0 must be positive");
  if (!(rs_kohm > 0.0)) throw Error(ErrorCode::kInvalidInput, "Rs must be positive");
  return curve.a * std::pow(rs_kohm / r0_kohm, curve.b);
}

double mq2_ratio_for_ppm(double ppm, const GasCurve& curve) {
  if (!(ppm > 0.0)) throw Error(ErrorCode::kInvalidInput, "ppm must be positive");
  return std::pow(ppm / curve.a, 1.0 / curve.b);
}

void LeakConfig::validate() const {
  if (!(gain >= 1.0)) throw Error(ErrorCode::kInvalidInput, "leak amplifier gain must be >= 1");
  if (window < 1) throw Error(ErrorCode::kInvalidInput, "leak window must hold a sample");
  if (!(threshold > 0.0)) throw Error(ErrorCode::kInvalidInput, "leak threshold must be > 0");
  if (!(rail > 0.0)) throw Error(ErrorCode::kInvalidInput, "leak rail must be > 0");
}

double leak_amplified_rms(std::span<const double> raw_window, const LeakConfig& cfg) {
  if (raw_window.size() != cfg.window) {
    throw Error(ErrorCode::kInvalidInput, "leak window holds " + std::to_string(raw_window.size()) +
                                              " samples, expected " + std::to_string(cfg.window));
  }
  double sq = 0.0;
  for (const double v : raw_window) {
    if (!std::isfinite(v)) throw Error(ErrorCode::kInvalidInput, "non-finite leak sample");
    sq += v * v;
  }
  const double rms = std::sqrt(sq / static_cast<double>(raw_window.size()));
  return std::min(cfg.gain * rms, cfg.rail);
}

LeakVerdict leak_detect(std::span<const double> raw_window, const LeakConfig& cfg) {
  return leak_amplified_rms(raw_window, cfg) > cfg.threshold ? LeakVerdict::kLeak
                                                             : LeakVerdict::kQuiet;
}

std::string_view to_string(LightState state) { return state == LightState::kOn ? "ON" : "OFF"; }

LightState light_state(AdcCode code, const AdcConfig& adc) {
  return code.count >= adc.full_scale() / 2 ? LightState::kOn : LightState::kOff;
}

}  // namespace hearth
