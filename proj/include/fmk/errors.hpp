#ifndef FMK_ERRORS_HPP
#define FMK_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace fmk {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Shape of an input or weight tensor does not match what the operation expects.
struct ShapeError : Error {
    using Error::Error;
};

// Invalid argument value (out-of-range label, bad config field, ...).
struct ArgumentError : Error {
    using Error::Error;
};

// Operation called in the wrong order (e.g. backward without a forward trace).
struct StateError : Error {
    using Error::Error;
};

// Malformed or truncated file.
struct FormatError : Error {
    using Error::Error;
};

// File has a valid container layout but an unsupported version tag.
struct VersionError : FormatError {
    using FormatError::FormatError;
};

// Registry already holds this user id.
struct ConflictError : Error {
    using Error::Error;
};

// User id not present in the registry.
struct KeyError : Error {
    using Error::Error;
};

// Non-finite value encountered during optimization.
struct NumericalError : Error {
    using Error::Error;
};

// Stage-2 walk failed to cross the boundary within the step budget.
struct CrossingError : Error {
    using Error::Error;
};

// Pair generation exhausted its retry budget.
struct ForgeError : Error {
    using Error::Error;
};

// Tamper operation failed to reach its stated end state.
struct TamperError : Error {
    using Error::Error;
};

} // namespace fmk

#endif
