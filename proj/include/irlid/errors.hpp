#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace irlid {

/// Malformed input: wrong shapes, non-finite entries, out-of-range parameters.
class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A numerical routine could not deliver its postcondition.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConvergenceError : public NumericalError {
 public:
  ConvergenceError(const std::string& what, double residual, std::size_t iterations)
      : NumericalError(what), residual_(residual), iterations_(iterations) {}

  double residual() const noexcept { return residual_; }
  std::size_t iterations() const noexcept { return iterations_; }

 private:
  double residual_;
  std::size_t iterations_;
};

/// The observed policies admit no common reward: the stacked system has no
/// (least-squares) solution within the residual guard.
class InconsistentExpertsError : public NumericalError {
 public:
  InconsistentExpertsError(const std::string& what, double relative_residual)
      : NumericalError(what), relative_residual_(relative_residual) {}

  double relative_residual() const noexcept { return relative_residual_; }

 private:
  double relative_residual_;
};

/// Recovery was requested on an instance that fails its rank condition and
/// the caller did not ask for a best-effort representative.
class NotIdentifiableError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

}  // namespace irlid
