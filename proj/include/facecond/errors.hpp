#pragma once

#include <stdexcept>
#include <string>

namespace facecond {

// Base of every error the library raises. Each subclass maps to a CLI exit
// code (see tools/facecond.cpp).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

// Zero-norm vectors, coincident landmarks and similar inputs on which a
// quantity is undefined.
class DegenerateInputError : public Error {
 public:
  using Error::Error;
};

class ContractError : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class DataError : public Error {
 public:
  using Error::Error;
};

class EmptyInputError : public DataError {
 public:
  using DataError::DataError;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace facecond
