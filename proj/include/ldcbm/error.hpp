#pragma once

#include <stdexcept>
#include <string>

namespace ldcbm {

/// Base class for every failure raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes do not conform to what a primitive or module expects.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A computation would produce (or has produced) a non-finite value.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration or spec values.
class ConfigError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

/// Manifest could not be parsed or is missing required fields.
class FormatError : public IoError {
 public:
  using IoError::IoError;
};

class ChecksumError : public IoError {
 public:
  using IoError::IoError;
};

/// Manifest dimensions disagree with payload sizes (or with another artifact).
class DimensionError : public IoError {
 public:
  using IoError::IoError;
};

class ClusteringError : public Error {
 public:
  using Error::Error;
};

/// Concept head weights no longer match the current filter groups.
class GroupSyncError : public Error {
 public:
  using Error::Error;
};

}  // namespace ldcbm
