#pragma once

#include <stdexcept>
#include <string>

namespace revmap {

// Exit codes used by the command line tool. Each error category maps onto one.
enum class ExitCode : int { ok = 0, usage = 2, data = 3, numeric = 4 };

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual ExitCode exit_code() const noexcept { return ExitCode::data; }
};

// Operand dimensions disagree.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Unknown or inconsistent configuration (activation kind, layer kind, ...).
class ConfigError : public Error {
 public:
  using Error::Error;
  ExitCode exit_code() const noexcept override { return ExitCode::usage; }
};

// API misuse, e.g. running backward twice on one tape.
class UsageError : public Error {
 public:
  using Error::Error;
  ExitCode exit_code() const noexcept override { return ExitCode::usage; }
};

// Invalid input values (empty dataset, bad fractions, unreachable target...).
class InputError : public Error {
 public:
  using Error::Error;
};

class FileError : public Error {
 public:
  using Error::Error;
};

// Numeric failures.
class TrainingError : public Error {
 public:
  using Error::Error;
  ExitCode exit_code() const noexcept override { return ExitCode::numeric; }
};

class DegeneracyError : public Error {
 public:
  using Error::Error;
  ExitCode exit_code() const noexcept override { return ExitCode::numeric; }
};

class IntegrationError : public Error {
 public:
  IntegrationError(const std::string& what, long step) : Error(what), step_(step) {}
  long step() const noexcept { return step_; }
  ExitCode exit_code() const noexcept override { return ExitCode::numeric; }

 private:
  long step_;
};

class EstimationError : public Error {
 public:
  using Error::Error;
  ExitCode exit_code() const noexcept override { return ExitCode::numeric; }
};

}  // namespace revmap
