#pragma once

#include <stdexcept>
#include <string>

namespace tinyseq {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Operand extents disagree.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// A precondition of an operation was violated by the caller.
class ContractError : public Error {
 public:
  using Error::Error;
};

class VocabularyError : public Error {
 public:
  using Error::Error;
};

// A sequence does not fit into a fixed-size container (pad length, positional table).
class CapacityError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace tinyseq
