#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace twoscale {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// An argument lies outside the mathematical domain of an operation.
class DomainError : public Error {
 public:
  using Error::Error;
};

/// Non-finite or otherwise corrupt numerical data.
class DataError : public Error {
 public:
  using Error::Error;
};

/// The caller violated an API contract (sizes, grids, empty inputs).
class UsageError : public Error {
 public:
  using Error::Error;
};

/// Malformed or inconsistent scenario configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// A fit could not be formed because the data collapsed below the floor.
class DegenerateFitError : public Error {
 public:
  using Error::Error;
};

/// An integrator left the finite range. Carries the step at which it
/// happened and the last state that was still finite.
class DivergenceError : public Error {
 public:
  DivergenceError(const std::string& what, std::size_t step, std::vector<double> last_state)
      : Error(what), step_(step), last_state_(std::move(last_state)) {}

  std::size_t step() const noexcept { return step_; }
  const std::vector<double>& last_state() const noexcept { return last_state_; }

 private:
  std::size_t step_;
  std::vector<double> last_state_;
};

}  // namespace twoscale
