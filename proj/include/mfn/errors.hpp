#pragma once

#include <stdexcept>
#include <string>

namespace mfn {

// Process exit codes used by the command-line front end.
enum class ExitCode : int { ok = 0, usage = 1, data = 2, numeric = 3 };

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual ExitCode exit_code() const noexcept { return ExitCode::data; }
};

// Bad configuration, unknown flag, inconsistent module construction.
class ConfigError : public Error {
 public:
  using Error::Error;
  ExitCode exit_code() const noexcept override { return ExitCode::usage; }
};

// Missing/undecodable inputs, malformed manifests, invalid annotations.
class DataError : public Error {
 public:
  using Error::Error;
};

// Tensor shapes that violate an operation's contract.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Non-finite losses or values during training/evaluation.
class NumericError : public Error {
 public:
  using Error::Error;
  ExitCode exit_code() const noexcept override { return ExitCode::numeric; }
};

}  // namespace mfn
