#pragma once

#include <stdexcept>
#include <string>

namespace oxa {

// Exit-code contract of the CLI: validation 1, I/O 2, internal invariant 3.
enum class ExitCode : int { kOk = 0, kValidation = 1, kIo = 2, kInvariant = 3 };

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual ExitCode exit_code() const noexcept = 0;
};

// Malformed input, violated record invariant, bad argument.
class ValidationError : public Error {
 public:
  using Error::Error;
  ExitCode exit_code() const noexcept override { return ExitCode::kValidation; }
};

// Argument outside the mathematical domain of an operation (empty list,
// positive log-probability, unnormalized distribution, ...).
class DomainError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

// A required optional field is absent for the requested stage.
class PreconditionError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class IoError : public Error {
 public:
  using Error::Error;
  ExitCode exit_code() const noexcept override { return ExitCode::kIo; }
};

class InvariantError : public Error {
 public:
  using Error::Error;
  ExitCode exit_code() const noexcept override { return ExitCode::kInvariant; }
};

}  // namespace oxa
