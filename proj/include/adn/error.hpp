#pragma once

#include <stdexcept>
#include <string>

namespace adn {

// Base class for all library failures.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Mismatched operand shapes, bad axes, invalid architecture configs.
struct ShapeError : Error {
  using Error::Error;
};

// Out-of-domain values: labels out of range, non-positive temperature,
// invalid norm mode, malformed skip strings.
struct ValueError : Error {
  using Error::Error;
};

// Filesystem and parsing failures (datasets, checkpoints).
struct IoError : Error {
  using Error::Error;
};

}  // namespace adn
