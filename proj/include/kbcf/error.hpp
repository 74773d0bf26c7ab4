#pragma once

#include <stdexcept>
#include <string>

namespace kbcf {

// Base of every error raised by the library. The CLI maps these to exit code 2.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed input files.
class FormatError : public Error {
 public:
  using Error::Error;
};

// Invalid or incompatible configuration values.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// A well-formed request that cannot be served (index or size out of range).
class RequestError : public Error {
 public:
  using Error::Error;
};

// Mismatched vector or matrix dimensions.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// NaN/Inf or out-of-domain values met during computation.
class NumericError : public Error {
 public:
  using Error::Error;
};

// A quantity that needs data the caller did not supply (ground truth, test grid, both classes).
class UnavailableError : public Error {
 public:
  using Error::Error;
};

// Balancing constraints that cannot be met exactly.
class InfeasibleError : public Error {
 public:
  using Error::Error;
};

}  // namespace kbcf
