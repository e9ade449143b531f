#pragma once

#include <stdexcept>
#include <string>

namespace psmmlab {

// Malformed or missing input (bad shapes, paths, ids). CLI exit code 2.
class InputError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Non-finite values or solver breakdown. CLI exit code 3.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Artifact mismatch, e.g. a checkpoint built for another variant. CLI exit code 4.
class IncompatibleError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw InputError(msg);
}

}  // namespace psmmlab
