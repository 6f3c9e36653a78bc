#pragma once

#include <stdexcept>
#include <string>

namespace mislead {

// Error categories map to CLI exit codes: ConfigError -> 2, DataError -> 3,
// NumericError -> 4. Module-specific errors derive from one of these.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ConfigError : Error {
    using Error::Error;
};

struct DataError : Error {
    using Error::Error;
};

struct NumericError : Error {
    using Error::Error;
};

// Shared shape/dimension contract violations (tensor shapes, vector lengths).
struct ShapeMismatch : DataError {
    using DataError::DataError;
};
struct DimMismatch : DataError {
    using DataError::DataError;
};

}  // namespace mislead
