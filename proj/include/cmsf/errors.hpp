#pragma once

#include <stdexcept>
#include <string>

namespace cmsf {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Incompatible shapes or widths.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Out-of-range numeric parameter (eps, alpha, tau, ...).
class ParameterError : public Error {
 public:
  using Error::Error;
};

// Operation invoked on an object in the wrong state.
class StateError : public Error {
 public:
  using Error::Error;
};

// Caller violated an operation precondition.
class UsageError : public Error {
 public:
  using Error::Error;
};

// Unknown tag or invalid configuration value.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Required input missing from a structured argument.
class ContractError : public Error {
 public:
  using Error::Error;
};

class AccountingError : public Error {
 public:
  using Error::Error;
};

class DatasetError : public Error {
 public:
  using Error::Error;
};

class CheckpointError : public Error {
 public:
  using Error::Error;
};

class DivergenceError : public Error {
 public:
  using Error::Error;
};

}  // namespace cmsf
