#pragma once

#include <stdexcept>
#include <string>

namespace apcon {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Incompatible tensor or grid dimensions.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Invalid or inconsistent configuration (odd quadrature order, bad ratio, ...).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Non-finite values, failed factorizations, numerical blow-up.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// A differentiable primitive or derivative order the engine does not provide.
class UnsupportedOperation : public Error {
 public:
  using Error::Error;
};

/// Argument outside the mathematical domain of a function (e.g. t <= 0).
class DomainError : public Error {
 public:
  using Error::Error;
};

/// Adaptive quadrature failed to reach the requested tolerance.
class AccuracyError : public Error {
 public:
  AccuracyError(const std::string& what, double achieved)
      : Error(what), achieved_(achieved) {}
  double achieved() const { return achieved_; }

 private:
  double achieved_;
};

/// File-format or filesystem failure.
class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace apcon
