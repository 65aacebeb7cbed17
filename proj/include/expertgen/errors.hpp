#pragma once

#include <stdexcept>
#include <string>

namespace expertgen {

// Base for every error raised by the library. The CLI maps subclasses to exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Out-of-range timestep, malformed schedule, bad step counts.
class ParameterError : public Error {
 public:
  using Error::Error;
};

// A Conditioning that selects no positive-weight component.
class ConditioningError : public Error {
 public:
  using Error::Error;
};

// Evaluation outside an operation's mathematical domain (e.g. eps at t = 0).
class DomainError : public Error {
 public:
  using Error::Error;
};

// Expert construction or evaluation failure (shape mismatch, zero embedding).
class ExpertError : public Error {
 public:
  using Error::Error;
};

// Invalid experiment configuration file or flag.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Raised from inside a guided sampling run; carries the failing timestep.
class GuidanceError : public Error {
 public:
  GuidanceError(const std::string& what, int timestep)
      : Error(what + " (t=" + std::to_string(timestep) + ")"), timestep_(timestep) {}

  int timestep() const noexcept { return timestep_; }

 private:
  int timestep_;
};

}  // namespace expertgen
