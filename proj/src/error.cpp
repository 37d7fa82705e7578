#include "unmemo/error.hpp"

namespace unmemo {

const char* to_string(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::kInvalidArgument: return "invalid-argument";
    case ErrorKind::kOutOfRange: return "out-of-range";
    case ErrorKind::kIntegrity: return "integrity";
    case ErrorKind::kVersion: return "version";
    case ErrorKind::kNumeric: return "numeric";
    case ErrorKind::kTrainingFailure: return "training-failure";
    case ErrorKind::kIo: return "io";
    case ErrorKind::kConfig: return "config";
    case ErrorKind::kProtocolInfeasible: return "protocol-infeasible";
    case ErrorKind::kSchema: return "schema";
  }
  return "unknown";
}

}  // namespace unmemo
