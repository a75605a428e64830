#ifndef RAIL_ERRORS_HPP_
#define RAIL_ERRORS_HPP_

#include <stdexcept>
#include <string>

namespace rail {

// Base for every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Dimension mismatch between tensors, layers or segments.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Caller violated an operation precondition (stale cache, step after done...).
class ContractError : public Error {
 public:
  using Error::Error;
};

class NonFiniteError : public Error {
 public:
  using Error::Error;
};

// Raised whenever expert actions are requested from observation-only data.
class ActionsUnavailable : public Error {
 public:
  ActionsUnavailable() : Error("actions unavailable") {}
  explicit ActionsUnavailable(const std::string& what)
      : Error("actions unavailable: " + what) {}
};

// Malformed or truncated file payload.
class FormatError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace rail

#endif  // RAIL_ERRORS_HPP_
