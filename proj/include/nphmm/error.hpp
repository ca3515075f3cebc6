#pragma once

#include <stdexcept>
#include <string>

namespace nphmm {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A value violates a construction invariant (row sums, floors, lengths).
class InvariantError : public Error {
 public:
  using Error::Error;
};

/// An observation does not belong to the domain of an emission family.
class DomainError : public Error {
 public:
  using Error::Error;
};

/// An iterative or randomized procedure failed to reach its target.
class NumericalError : public Error {
 public:
  using Error::Error;
};

/// A request exceeds a hard computational budget (enumeration, permutations).
class BudgetError : public Error {
 public:
  using Error::Error;
};

/// Malformed configuration or parameter file.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Malformed or inconsistent data file.
class DataError : public Error {
 public:
  using Error::Error;
};

namespace detail {

inline void require(bool condition, const std::string& message) {
  if (!condition) throw InvariantError(message);
}

}  // namespace detail
}  // namespace nphmm
