#pragma once

#include <stdexcept>
#include <string>

namespace sustain {

/// Base class for all library errors.
struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

/// Shape disagreement between tensors (names both shapes in the message).
struct DimensionError : Error {
  using Error::Error;
};

/// Invalid convolution / segmentation geometry (kernel larger than input, etc).
struct GeometryError : Error {
  using Error::Error;
};

/// Malformed on-disk data: bad magic, version, truncation, column counts.
struct FormatError : Error {
  using Error::Error;
};

/// Invalid configuration value (rejected before any work starts).
struct ConfigError : Error {
  using Error::Error;
};

/// API misuse, e.g. backward() without a recorded forward pass.
struct UsageError : Error {
  using Error::Error;
};

}  // namespace sustain
