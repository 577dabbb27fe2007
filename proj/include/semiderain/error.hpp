#pragma once

#include <stdexcept>
#include <string>

namespace semiderain {

/// Base class for every failure raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ImageError : public Error {
 public:
  using Error::Error;
};

class DatasetError : public Error {
 public:
  using Error::Error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class CheckpointError : public Error {
 public:
  using Error::Error;
};

/// Raised when a loss term evaluates to NaN/Inf. `term()` names the first offender.
class NonFiniteError : public Error {
 public:
  NonFiniteError(std::string term, const std::string& where)
      : Error("non-finite value in '" + term + "' (" + where + ")"), term_(std::move(term)) {}
  const std::string& term() const noexcept { return term_; }

 private:
  std::string term_;
};

}  // namespace semiderain
