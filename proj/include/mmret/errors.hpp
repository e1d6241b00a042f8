#pragma once

#include <stdexcept>
#include <string>

namespace mmret {

// Exceptions are classified so the CLI can map them to exit codes:
// usage/config -> 1, data -> 2, numerical abort -> 3.

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Shape or dimension disagreement between operands.
struct DimensionError : Error {
    using Error::Error;
};

/// An index (token id, target class, ...) outside its valid range.
struct IndexError : Error {
    using Error::Error;
};

/// Mathematically degenerate input (all-zero mask, near-zero norm, ...).
struct DegenerateInputError : Error {
    using Error::Error;
};

/// Malformed or insufficient data (bad JSONL line, missing split, ...).
struct DataError : Error {
    using Error::Error;
};

/// Invalid configuration value.
struct ConfigError : Error {
    using Error::Error;
};

/// Non-finite loss or gradient; training aborts.
struct NumericError : Error {
    using Error::Error;
};

/// A structurally impossible request (e.g. intent head on an MDR bundle).
struct StructureError : Error {
    using Error::Error;
};

}  // namespace mmret
