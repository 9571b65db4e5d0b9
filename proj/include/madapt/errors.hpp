#pragma once

#include <stdexcept>
#include <string>

namespace madapt {

// Base class for every error thrown by this library.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Shape or rank mismatch between tensors.
struct DimensionError : Error {
    using Error::Error;
};

// Non-finite values, diverging iterations, failed decompositions.
struct NumericError : Error {
    using Error::Error;
};

// A documented precondition was violated by the caller.
struct ContractError : Error {
    using Error::Error;
};

// Malformed file contents (bad magic, truncation, unsupported encoding).
struct FormatError : Error {
    using Error::Error;
};

// Filesystem-level failures.
struct IoError : Error {
    using Error::Error;
};

// Inconsistent or invalid configuration values.
struct ConfigError : Error {
    using Error::Error;
};

}  // namespace madapt
