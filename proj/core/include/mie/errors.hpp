#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace mie {

/// Caller passed something outside an operation's domain (index out of
/// range, malformed policy, bad configuration value).
class UsageError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A computation produced a non-finite value or failed to converge.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Data contradicts the model it is fed to, e.g. an observation that every
/// hypothesis assigns zero likelihood.
class InconsistencyError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Not enough recorded data for the requested diagnostic.
class InsufficientDataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed or mismatched configuration. `key` names the offending entry.
class ConfigError : public std::runtime_error {
 public:
  ConfigError(std::string key, const std::string& message)
      : std::runtime_error(key.empty() ? message : key + ": " + message), key_(std::move(key)) {}
  const std::string& key() const noexcept { return key_; }

 private:
  std::string key_;
};

/// Interaction log that cannot be parsed or does not match its metadata.
class LogFormatError : public std::runtime_error {
 public:
  LogFormatError(std::size_t line, std::int64_t tick, const std::string& message)
      : std::runtime_error("line " + std::to_string(line) +
                           (tick >= 0 ? " (tick " + std::to_string(tick) + ")" : std::string()) + ": " +
                           message),
        line_(line),
        tick_(tick) {}
  std::size_t line() const noexcept { return line_; }
  /// Last tick successfully associated with the failure, or -1.
  std::int64_t tick() const noexcept { return tick_; }

 private:
  std::size_t line_;
  std::int64_t tick_;
};

}  // namespace mie
