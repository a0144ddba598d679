#pragma once

#include <stdexcept>
#include <string>

namespace handnet {

// Every failure the engine reports derives from Error. Each family maps to a
// stable process exit code (see exit_code()).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Shape or dimension contract violated.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Invalid hyperparameter, profile or option value.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Bad manifest, undecodable image, malformed label.
class DataError : public Error {
 public:
  using Error::Error;
};

// Non-finite value produced during a computation.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

// Malformed binary file (checkpoint or tensor dump).
class FormatError : public Error {
 public:
  using Error::Error;
};

// API misuse: missing cache, mismatched gradient keys, bad epoch index.
class UsageError : public Error {
 public:
  using Error::Error;
};

// A checkpoint does not belong to the requested network.
class MismatchError : public Error {
 public:
  using Error::Error;
};

// Evaluation protocol broken, e.g. a negative sample in a positive test.
class ProtocolError : public UsageError {
 public:
  using UsageError::UsageError;
};

namespace exit_codes {
inline constexpr int kOk = 0;
inline constexpr int kFailure = 1;  // gradcheck failure, unknown error
inline constexpr int kUsage = 2;
inline constexpr int kConfig = 3;
inline constexpr int kData = 4;
inline constexpr int kDivergence = 5;
inline constexpr int kFormat = 6;
inline constexpr int kMismatch = 7;
inline constexpr int kProtocol = 8;
inline constexpr int kDimension = 9;
}  // namespace exit_codes

int exit_code(const Error& e) noexcept;

}  // namespace handnet
