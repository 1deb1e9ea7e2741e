#pragma once

#include <stdexcept>

namespace bihyper {

// Base class for everything this library throws on purpose.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Shape mismatch between operands.
struct DimensionError : Error {
  using Error::Error;
};

// NaN or Inf where a finite value is required.
struct NumericError : Error {
  using Error::Error;
};

// Factorization pivot collapsed, or the solve residual is untrustworthy.
struct SingularMatrixError : Error {
  using Error::Error;
};

// Caller violated a documented precondition.
struct ContractError : Error {
  using Error::Error;
};

// An iteration produced a non-finite value.
struct DivergenceError : Error {
  using Error::Error;
};

// The requested analytic path is not implemented for this problem.
struct NotAvailableError : Error {
  using Error::Error;
};

// Conjugate gradient hit a direction with near-zero curvature.
struct CgBreakdownError : Error {
  using Error::Error;
};

// Malformed configuration file or command line.
struct ConfigError : Error {
  using Error::Error;
};

}  // namespace bihyper
