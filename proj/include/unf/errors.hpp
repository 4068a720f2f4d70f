#pragma once

#include <stdexcept>
#include <string>

namespace unf {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Malformed input document (spec file, sizes, permutation, manifest).
struct ParseError : Error {
  using Error::Error;
};

// Array/channel/dimension mismatch between declared and concrete data.
struct ShapeError : Error {
  using Error::Error;
};

// A configurable resource cap (group order, basis count, matrix size) was hit.
struct CapError : Error {
  using Error::Error;
};

// Non-finite values where finite ones are required.
struct NumericalError : Error {
  using Error::Error;
};

}  // namespace unf
