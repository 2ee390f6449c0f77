// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace vigage {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Incompatible tensor or parameter shapes.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Invalid model, training or run configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// An object used before it was fully prepared (e.g. a graph without edge weights).
class StateError : public Error {
 public:
  using Error::Error;
};

/// Bad argument values for otherwise well-formed calls.
class ArgumentError : public Error {
 public:
  using Error::Error;
};

/// Malformed file contents. Carries the byte offset at which decoding failed.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t offset)
      : Error(what + " (at byte " + std::to_string(offset) + ")"), offset_(offset) {}

  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

/// Dataset or checkpoint could not be loaded.
class LoadError : public Error {
 public:
  using Error::Error;
};

/// The finite-difference oracle hit a non-finite objective value.
class OracleError : public Error {
 public:
  using Error::Error;
};

/// Training produced a non-finite loss or gradient.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

}  // namespace vigage
