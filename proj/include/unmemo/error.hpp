#pragma once

#include <stdexcept>
#include <string>

namespace unmemo {

/// Error classes surfaced by the library. The CLI maps each to a distinct
/// process exit code, so the numeric values are part of the public surface.
enum class ErrorKind : int {
  kInvalidArgument = 2,
  kOutOfRange = 3,
  kIntegrity = 4,
  kVersion = 5,
  kNumeric = 6,
  kTrainingFailure = 7,
  kIo = 8,
  kConfig = 9,
  kProtocolInfeasible = 10,
  kSchema = 11,
};

const char* to_string(ErrorKind kind) noexcept;

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }
  int exit_code() const noexcept { return static_cast<int>(kind_); }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) {
  throw Error(kind, what);
}

inline void require(bool cond, ErrorKind kind, const std::string& what) {
  if (!cond) throw Error(kind, what);
}

}  // namespace unmemo
