#pragma once

#include <stdexcept>
#include <string>

namespace tpld {

// Process exit codes used by the command-line tool.
enum class ExitCode : int { kOk = 0, kUsage = 1, kData = 2, kNumeric = 3 };

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual ExitCode exit_code() const noexcept { return ExitCode::kData; }
};

// Bad configuration keys, unknown modes, path collisions.
class UsageError : public Error {
 public:
  using Error::Error;
  ExitCode exit_code() const noexcept override { return ExitCode::kUsage; }
};

// Schema violations, missing files, invariant violations in data.
class DataError : public Error {
 public:
  using Error::Error;
};

// Shape mismatches and other misuse of the tensor API.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Non-finite losses or gradients, degenerate normalizations.
class NumericError : public Error {
 public:
  using Error::Error;
  ExitCode exit_code() const noexcept override { return ExitCode::kNumeric; }
};

}  // namespace tpld
