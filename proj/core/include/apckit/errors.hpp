#pragma once

#include <stdexcept>
#include <string>

namespace apckit {

/// Thrown when a precondition on an argument is violated (bad k, empty cloud, unknown name).
class InvalidArgument : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Thrown when the input is well-formed but geometrically degenerate (e.g. all points coincide).
class DegenerateInput : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class UnsupportedOperation : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

}  // namespace apckit
