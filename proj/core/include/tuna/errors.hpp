#pragma once

#include <stdexcept>
#include <string>

namespace tuna {

// Error taxonomy shared across the library. The CLI maps these onto stable
// process exit codes (0 success, 1 I/O, 2 config, 3 compatibility,
// 4 numerical abort).
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Shape/dimension mismatch between tensors.
struct ShapeError : Error {
    using Error::Error;
};

// Invalid configuration value or unknown configuration key.
struct ConfigError : Error {
    using Error::Error;
};

// API precondition violated (caller bug, not user input).
struct ContractError : Error {
    using Error::Error;
};

// Malformed sample or file content.
struct DataError : Error {
    using Error::Error;
};

// Filesystem / stream failure.
struct IoError : Error {
    using Error::Error;
};

// Checkpoint does not match the model it is being applied to.
struct CompatError : Error {
    using Error::Error;
};

// NaN/Inf encountered where finite values are required.
struct NumericError : Error {
    using Error::Error;
};

}  // namespace tuna
