#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace hearth {

enum class ErrorCode {
  kInvalidInput,
  kSensorOpenCircuit,
  kCalibrationError,
  kNotCalibrated,
  kUnknownDevice,
  kSchemaError,
  kUnsupportedActuator,
  kNotFound,
  kInvalidDestination,
  kStorageError,
  kReplayError,
};

std::string_view to_string(ErrorCode code);

// Every failure the gateway reports carries one of the codes above so callers
// (HTTP handlers, the CLI) can map it to a status without string matching.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

// Replay failures name the 1-based line that could not be parsed.
class ReplayError : public Error {
 public:
  ReplayError(std::size_t line, const std::string& message)
      : Error(ErrorCode::kReplayError, "line " + std::to_string(line) + ": " + message),
        line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

}  // namespace hearth
