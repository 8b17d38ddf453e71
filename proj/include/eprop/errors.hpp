#pragma once

#include <stdexcept>
#include <string>

namespace eprop {

/// Invalid configuration value or unknown key.
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Non-finite or otherwise invalid numeric input.
struct NumericError : std::runtime_error {
  explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Mismatched tensor/vector dimensions.
struct ShapeError : std::runtime_error {
  explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};

/// File parsing, missing paths, malformed payloads.
struct IoError : std::runtime_error {
  explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace eprop
