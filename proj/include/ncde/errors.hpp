#pragma once

#include <stdexcept>
#include <string>

namespace ncde {

/// Bad input: shapes, ranges, malformed configuration.
class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Path synthesis failed (e.g. a covariance factorization that stays
/// indefinite after jitter).
class SynthesisError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Non-finite intermediate value during a forward or backward pass.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A bound formula was evaluated outside the region where it is defined.
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

namespace detail {

inline void require(bool ok, const char* what) {
  if (!ok) {
    throw ValidationError(what);
  }
}

inline void require(bool ok, const std::string& what) {
  if (!ok) {
    throw ValidationError(what);
  }
}

}  // namespace detail
}  // namespace ncde
