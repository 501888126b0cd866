#pragma once

#include <stdexcept>
#include <string>

namespace asrsent {

// Malformed or missing input data: bad magic, truncated payloads, bad manifests.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// NaN/Inf where finite values are required, failed gradient checks.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Contract violations by the caller (bad shapes, invalid configs).
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

}  // namespace asrsent
