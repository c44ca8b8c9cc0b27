#pragma once

#include <stdexcept>
#include <string>

namespace cgr {

// Operand shapes do not line up.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// A caller broke an operation's precondition.
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

class IndexError : public std::out_of_range {
 public:
  using std::out_of_range::out_of_range;
};

// Object used before it was initialised (e.g. an empty dictionary).
class StateError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Conditioning on an event of probability zero.
class PositivityError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

// Reading or writing a persisted artifact failed.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace cgr
