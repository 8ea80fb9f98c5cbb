#pragma once

#include <stdexcept>

namespace vpo {

struct ShapeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct StateError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Raised when a preference trainer sees only degenerate (all-equal) candidate
// sets for a long stretch and can no longer make progress.
struct DegeneratePolicyError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace vpo
