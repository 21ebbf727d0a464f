#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace oscid {

// Exit codes used by the command line driver.
enum class ExitCode : int {
  kSuccess = 0,
  kConfig = 2,
  kData = 3,
  kNumerical = 4,
};

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual ExitCode exit_code() const noexcept = 0;
  virtual const char* kind() const noexcept = 0;
};

class ConfigError : public Error {
 public:
  using Error::Error;
  ExitCode exit_code() const noexcept override { return ExitCode::kConfig; }
  const char* kind() const noexcept override { return "config_error"; }
};

class DataError : public Error {
 public:
  using Error::Error;
  ExitCode exit_code() const noexcept override { return ExitCode::kData; }
  const char* kind() const noexcept override { return "data_error"; }
};

class InsufficientDataError : public DataError {
 public:
  using DataError::DataError;
  const char* kind() const noexcept override { return "insufficient_data"; }
};

class DegenerateSignalError : public DataError {
 public:
  using DataError::DataError;
  const char* kind() const noexcept override { return "degenerate_signal"; }
};

class NoDominantFrequencyError : public DataError {
 public:
  using DataError::DataError;
  const char* kind() const noexcept override { return "no_dominant_frequency"; }
};

class SelectionError : public DataError {
 public:
  using DataError::DataError;
  const char* kind() const noexcept override { return "selection_failure"; }
};

class ParseError : public DataError {
 public:
  ParseError(std::size_t line, const std::string& what)
      : DataError("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }
  const char* kind() const noexcept override { return "parse_error"; }

 private:
  std::size_t line_;
};

class NumericalError : public Error {
 public:
  using Error::Error;
  ExitCode exit_code() const noexcept override { return ExitCode::kNumerical; }
  const char* kind() const noexcept override { return "numerical_failure"; }
};

class DomainError : public NumericalError {
 public:
  using NumericalError::NumericalError;
  const char* kind() const noexcept override { return "domain_error"; }
};

class BlowUpError : public NumericalError {
 public:
  BlowUpError(double time, const std::string& what)
      : NumericalError(what), time_(time) {}
  double time() const noexcept { return time_; }
  const char* kind() const noexcept override { return "blow_up"; }

 private:
  double time_;
};

class InitializerError : public NumericalError {
 public:
  using NumericalError::NumericalError;
  const char* kind() const noexcept override { return "initializer_failure"; }
};

}  // namespace oscid
