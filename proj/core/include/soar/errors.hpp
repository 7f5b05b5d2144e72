#pragma once

#include <stdexcept>
#include <string>

namespace soar {

// Base class for every error raised by the library. The CLI maps the
// subclasses onto process exit codes.
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

// Invalid parameters or configuration (usage-level problem).
class ConfigError : public Error {
public:
  using Error::Error;
};

// Malformed, inconsistent or corrupt input data.
class DataError : public Error {
public:
  using Error::Error;
};

class SplitError : public DataError {
public:
  using DataError::DataError;
};

class FormatError : public DataError {
public:
  using DataError::DataError;
};

class ChecksumError : public FormatError {
public:
  using FormatError::FormatError;
};

class ValidationError : public DataError {
public:
  using DataError::DataError;
};

// Geometric degeneracy: singular calibration systems, points behind the
// camera plane, collinear hull input.
class GeometryError : public Error {
public:
  using Error::Error;
};

class OcclusionError : public Error {
public:
  using Error::Error;
};

// NaN/Inf in values, gradients or losses.
class NumericError : public Error {
public:
  using Error::Error;
};

// An operation was called in a state that does not allow it.
class StateError : public Error {
public:
  using Error::Error;
};

}  // namespace soar
