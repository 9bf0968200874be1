#pragma once

#include <stdexcept>
#include <string>

namespace s3m {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bad magic, unsupported version or malformed text record.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// File ends before the header-declared payload.
class CorruptionError : public Error {
 public:
  using Error::Error;
};

/// Well-formed input whose content violates an invariant (non-finite values,
/// overlapping spans, unknown phoneme labels, ...).
class DataError : public Error {
 public:
  using Error::Error;
};

/// Numeric-domain failure: zero-norm cosine, singular design, divergence.
class NumericError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace s3m
