#pragma once

#include <stdexcept>
#include <string>

namespace spikecpg {

// Exception families map onto the CLI exit codes (see tools/cpgsim.cpp).

class ConfigError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

class ParseError : public ConfigError {
public:
  ParseError(const std::string& source, int line, const std::string& what)
      : ConfigError(source + ":" + std::to_string(line) + ": " + what), line_(line) {}

  int line() const { return line_; }

private:
  int line_;
};

// Value outside the mathematical domain of an operation (e.g. an angle beyond [0, pi]).
class DomainError : public ConfigError {
public:
  using ConfigError::ConfigError;
};

class CalibrationError : public std::runtime_error {
public:
  CalibrationError(int phase, const std::string& what)
      : std::runtime_error("calibration failed for phase " + std::to_string(phase) + ": " + what),
        phase_(phase) {}

  int phase() const { return phase_; }

private:
  int phase_;
};

class NumericError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

class ResourceError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

class InsufficientDataError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

}  // namespace spikecpg
