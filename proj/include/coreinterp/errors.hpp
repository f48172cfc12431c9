#pragma once

#include <stdexcept>
#include <string>

namespace coreinterp {

/// Bad input: malformed files, contract violations, out-of-range parameters.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A numerical routine failed on otherwise valid input (divergence, degeneracy).
class ComputationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace coreinterp
