// Shared error types and small value types used across the library.
#pragma once

#include <stdexcept>
#include <string>

namespace aggcn {

// Shape or dimension disagreement between operands.
struct shape_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// A caller violated a documented precondition.
struct contract_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// A dependency graph is malformed (bad heads, cycles, missing roots, ...).
struct structure_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// A file could not be parsed; message carries the location.
struct parse_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Non-finite values where finite ones are required.
struct numeric_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Inclusive 1-based token range [start, end].
struct Span {
  int start = 0;
  int end = 0;

  int length() const { return end - start + 1; }
  bool contains(int token) const { return token >= start && token <= end; }
  bool operator==(const Span&) const = default;
};

}  // namespace aggcn
