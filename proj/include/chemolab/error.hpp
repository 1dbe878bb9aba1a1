#pragma once

#include <stdexcept>
#include <string>

namespace chemo {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed input: bad descriptor, invalid domain, invalid config field.
/// `path()` names the offending field when known (e.g. "domain.cells").
class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& msg, std::string path = {})
      : Error(path.empty() ? msg : path + ": " + msg), path_(std::move(path)) {}
  const std::string& path() const noexcept { return path_; }

 private:
  std::string path_;
};

/// An operation required a strictly positive field and did not get one.
class PositivityError : public Error {
 public:
  using Error::Error;
};

/// The chemotactic sensitivity chi/v was evaluated with v <= 0.
class SingularityError : public Error {
 public:
  using Error::Error;
};

/// Iterative or direct linear solve missed its residual target.
class SolverError : public Error {
 public:
  SolverError(const std::string& msg, double residual, int iterations)
      : Error(msg), residual_(residual), iterations_(iterations) {}
  double residual() const noexcept { return residual_; }
  int iterations() const noexcept { return iterations_; }

 private:
  double residual_;
  int iterations_;
};

/// The explicit terms demand a time step below the configured dt_min.
class StiffnessError : public Error {
 public:
  StiffnessError(const std::string& msg, double required_dt)
      : Error(msg), required_dt_(required_dt) {}
  double required_dt() const noexcept { return required_dt_; }

 private:
  double required_dt_;
};

/// A documented precondition of an operation was violated by the caller.
class PreconditionError : public Error {
 public:
  using Error::Error;
};

}  // namespace chemo
