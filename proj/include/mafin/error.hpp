#pragma once

#include <stdexcept>
#include <string>

namespace mafin {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Caller violated an API contract (bad arguments, invalid config).
class UsageError : public Error {
 public:
  using Error::Error;
};

/// Mismatched vector dimensions.
class DimensionError : public UsageError {
 public:
  using UsageError::UsageError;
};

/// Degenerate numeric input, e.g. a zero-norm embedding where a direction is required.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Malformed or inconsistent input data (dataset files, checkpoints, caches).
class DataError : public Error {
 public:
  using Error::Error;
};

/// Failure talking to an embedding or generation backend.
class ProviderError : public Error {
 public:
  ProviderError(const std::string& what, bool retriable, int attempts = 0)
      : Error(what), retriable_(retriable), attempts_(attempts) {}

  bool retriable() const noexcept { return retriable_; }
  int attempts() const noexcept { return attempts_; }

 private:
  bool retriable_;
  int attempts_;
};

/// Training diverged or hit an unrecoverable state.
class TrainingError : public Error {
 public:
  using Error::Error;
};

}  // namespace mafin
