#pragma once

#include <stdexcept>
#include <string>

namespace hvsmark {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidShape : public Error {
 public:
  using Error::Error;
};

class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// Bad or inconsistent configuration (config files, specs, flags).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Missing, unreadable or inconsistent input data.
class DataError : public Error {
 public:
  using Error::Error;
};

/// Training produced a non-finite loss.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

/// Checkpoint archive is corrupt, of the wrong version, or does not match
/// the requested configuration.
class CheckpointError : public Error {
 public:
  using Error::Error;
};

}  // namespace hvsmark
