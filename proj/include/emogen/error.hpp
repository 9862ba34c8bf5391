#pragma once

#include <stdexcept>
#include <string>

namespace emogen {

// Base for everything this library throws. The CLI maps subclasses to
// exit codes: UsageError=2, DataError=3, NumericError=4, anything else=1.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Shape or dimension mismatch between arrays.
struct DimError : Error {
  using Error::Error;
};

// NaN/Inf produced by an operation, or training divergence.
struct NumericError : Error {
  using Error::Error;
};

// Malformed input files, unknown labels, unusable corpus entries.
struct DataError : Error {
  using Error::Error;
};

// Bad command-line arguments or config values.
struct UsageError : Error {
  using Error::Error;
};

// A caller broke an API precondition (plan/trace mismatch, wrong slot width).
struct ContractError : Error {
  using Error::Error;
};

}  // namespace emogen
