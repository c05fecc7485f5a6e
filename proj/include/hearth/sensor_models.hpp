#pragma once

// Conversion and detection math for the home's sensors. Everything here is a
// pure function over its arguments: no I/O, no clock, no shared state.

#include <compare>
#include <cstdint>
#include <span>
#include <string_view>

namespace hearth {

struct AdcConfig {
  double vref = 5.0;
  int resolution_bits = 10;

  // Throws InvalidInput unless vref > 0 and resolution_bits is in [8, 16].
  void validate() const;

  std::uint32_t full_scale() const { return 1U << resolution_bits; }
  std::uint32_t max_code() const { return full_scale() - 1; }
  // Volts represented by one code step.
  double quantum() const { return vref / static_cast<double>(full_scale()); }
};

struct AdcCode {
  std::uint32_t count = 0;

  auto operator<=>(const AdcCode&) const = default;
};

enum class DigitalLevel { kLow, kHigh };

// ---------------------------------------------------------------------------
// ADC

// floor(v / vref * 2^bits), clamped to the code range. Throws InvalidInput for
// non-finite voltages.
AdcCode adc_encode(double volts, const AdcConfig& adc = {});

// Lower edge of the code's bin: code / 2^bits * vref.
double adc_decode(AdcCode code, const AdcConfig& adc = {});

// ---------------------------------------------------------------------------
// LM35 temperature

struct TempReading {
  int millivolts = 0;  // at the ADC pin
  int celsius = 0;
  bool alarm = false;

  bool operator==(const TempReading&) const = default;
};

inline constexpr int kTempAlarmAboveCelsius = 25;
// The LM35 emits 10 mV/C; the analog front end amplifies by this factor before
// the ADC so that one code is well under the sensor's 0.5 C accuracy.
inline constexpr int kLm35FrontEndGain = 10;
inline constexpr int kLm35MillivoltsPerDegree = 10;

// Integer-only pipeline: pin_mV = code * vref_mV / 2^bits, sensor_mV = pin_mV /
// gain, celsius = sensor_mV / 10. alarm is set strictly above 25 C.
TempReading lm35_celsius(AdcCode code, const AdcConfig& adc = {},
                         int front_end_gain = kLm35FrontEndGain);

// ---------------------------------------------------------------------------
// MQ-2 gas sensor

inline constexpr double kMq2ProtectKohm = 4.7;
inline constexpr double kMq2AdjustMaxKohm = 50.0;
inline constexpr double kDefaultCleanAirRatio = 9.83;

// Module board: trimmer (0-50 kOhm) in series with a 4.7 kOhm protection
// resistor forms the divider's load resistor.
class Mq2Config {
 public:
  // Throws InvalidInput if r_adjust is outside [0, 50] kOhm, vcc <= 0 or
  // clean_air_ratio <= 0.
  explicit Mq2Config(double r_adjust_kohm = 5.3, double vcc = 5.0,
                     double clean_air_ratio = kDefaultCleanAirRatio);

  double r_adjust() const { return r_adjust_; }
  double r_protect() const { return kMq2ProtectKohm; }
  double r_load() const { return r_adjust_ + kMq2ProtectKohm; }
  double vcc() const { return vcc_; }
  double clean_air_ratio() const { return clean_air_ratio_; }

 private:
  double r_adjust_;
  double vcc_;
  double clean_air_ratio_;
};

enum class Gas { kLpg, kSmoke };

std::string_view to_string(Gas gas);

// ppm = a * (Rs/R0)^b with b < 0.
struct GasCurve {
  Gas gas = Gas::kLpg;
  double a = 574.25;
  double b = -2.222;

  void validate() const;

  static GasCurve default_lpg() { return {Gas::kLpg, 574.25, -2.222}; }
  static GasCurve default_smoke() { return {Gas::kSmoke, 3616.1, -2.675}; }
};

struct CalibrationRecord {
  double r0 = 0.0;  // kOhm
  std::int64_t sample_count = 0;
  double rs_mean = 0.0;
  double rs_stddev = 0.0;
  double r_load = 0.0;
  std::int64_t t_ms = 0;

  bool operator==(const CalibrationRecord&) const = default;
};

// Sensor resistance (kOhm) from the divider output. Throws SensorOpenCircuit
// for code 0.
double mq2_rs(AdcCode code, const Mq2Config& cfg, const AdcConfig& adc = {});

// Divider output voltage for a given sensor resistance (forward model).
double mq2_divider_voltage(double rs_kohm, const Mq2Config& cfg);

// Clean-air calibration. Throws CalibrationError for an empty sample set and
// SensorOpenCircuit if any sample is zero.
CalibrationRecord mq2_calibrate(std::span<const AdcCode> samples, const Mq2Config& cfg,
                                const AdcConfig& adc = {}, std::int64_t t_ms = 0);

// Throws NotCalibrated when r0 <= 0 and InvalidInput when rs <= 0.
double mq2_ppm(double rs_kohm, double r0_kohm, const GasCurve& curve);

// Rs/R0 ratio at which the curve yields `ppm`.
double mq2_ratio_for_ppm(double ppm, const GasCurve& curve);

// ---------------------------------------------------------------------------
// PIR, water leak, lights

enum class MotionState { kNone, kMotion };

constexpr MotionState pir_state(DigitalLevel level) {
  return level == DigitalLevel::kHigh ? MotionState::kMotion : MotionState::kNone;
}

struct LeakConfig {
  double gain = 1000.0;
  std::size_t window = 50;
  double threshold = 0.5;  // volts, after amplification
  double rail = 5.0;       // op-amp output saturates here

  void validate() const;
};

enum class LeakVerdict { kQuiet, kLeak };

// min(gain * RMS(window), rail). Throws InvalidInput if the window length does
// not match cfg.window.
double leak_amplified_rms(std::span<const double> raw_window, const LeakConfig& cfg);

// LEAK iff the amplified RMS is strictly above the threshold.
LeakVerdict leak_detect(std::span<const double> raw_window, const LeakConfig& cfg);

enum class LightState { kOff, kOn };

std::string_view to_string(LightState state);

// ON iff the switch node reads at or above mid-scale.
LightState light_state(AdcCode code, const AdcConfig& adc = {});

}  // namespace hearth
