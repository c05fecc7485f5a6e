#include "hearth/error.hpp"

namespace hearth {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidInput: return "InvalidInput";
    case ErrorCode::kSensorOpenCircuit: return "SensorOpenCircuit";
    case ErrorCode::kCalibrationError: return "CalibrationError";
    case ErrorCode::kNotCalibrated: return "NotCalibrated";
    case ErrorCode::kUnknownDevice: return "UnknownDevice";
    case ErrorCode::kSchemaError: return "SchemaError";
    case ErrorCode::kUnsupportedActuator: return "UnsupportedActuator";
    case ErrorCode::kNotFound: return "NotFound";
    case ErrorCode::kInvalidDestination: return "InvalidDestination";
    case ErrorCode::kStorageError: return "StorageError";
    case ErrorCode::kReplayError: return "ReplayError";
  }
  return "Unknown";
}

}  // namespace hearth
