#pragma once

#include <stdexcept>
#include <string>

namespace dmd {

/// Caller handed in something outside an operation's domain (bad shape, empty mask, ...).
class InvalidInput : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Malformed bytes on disk: bad magic, truncated payload, header/payload mismatch.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid run configuration or missing upstream artifact (stage ordering).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Data-level failure while running a stage (missing files, empty sample lists).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace dmd
