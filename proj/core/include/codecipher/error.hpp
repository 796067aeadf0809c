#pragma once

#include <stdexcept>
#include <string>

namespace codecipher {

/// Operand shapes are incompatible.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A token id or row index is outside its valid range.
class IndexError : public std::out_of_range {
 public:
  using std::out_of_range::out_of_range;
};

/// Caller supplied data that violates an operation's precondition.
class InputError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// An object was used in a state that forbids the call (e.g. a consumed tape).
class StateError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// A computation produced a non-finite value.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed persisted data (corrupt file, bad header, bad line).
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace codecipher
