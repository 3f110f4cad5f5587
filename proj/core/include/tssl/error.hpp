#pragma once

#include <stdexcept>
#include <string>

namespace tssl {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Incompatible tensor shapes handed to a primitive.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A value outside the domain an operation accepts.
class DomainError : public Error {
 public:
  using Error::Error;
};

/// Invalid or unknown configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Malformed on-disk data (PPM, packed container, checkpoint).
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Filesystem failures; the message always carries the path.
class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace tssl
