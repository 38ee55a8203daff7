#pragma once

#include <stdexcept>
#include <string>

namespace wavecal {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Point outside its parameter space, or malformed point.
class DomainError : public Error {
 public:
  using Error::Error;
};

/// Invalid design request (empty design, thinning beyond batch size).
class DesignError : public Error {
 public:
  using Error::Error;
};

/// Emulator prior could not be fitted (too few points, collinear basis).
class FitError : public Error {
 public:
  using Error::Error;
};

/// Bayes linear adjustment failed (data variance not PSD or singular).
class AdjustmentError : public Error {
 public:
  using Error::Error;
};

/// Numerical invariant violated inside the library.
class InternalError : public Error {
 public:
  using Error::Error;
};

/// Too few repetitions for the requested second-order statistics.
class InsufficientRepsError : public Error {
 public:
  using Error::Error;
};

/// Implausibility could not be formed (zero total variance, singular matrix).
class ImplausibilityError : public Error {
 public:
  using Error::Error;
};

/// The non-implausible region contains no points. A legitimate stopping
/// condition rather than a fault; the CLI maps it to exit code 2.
class EmptyRegion : public Error {
 public:
  using Error::Error;
};

class ValidationError : public Error {
 public:
  using Error::Error;
};

class ParseError : public Error {
 public:
  using Error::Error;
};

class SimulatorError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace wavecal
