#pragma once

#include <stdexcept>
#include <string>

namespace trusttune {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Tensor shapes incompatible with the requested op.
struct ShapeError : Error {
    using Error::Error;
};

// NaN/Inf where a finite result is contracted, or divergence diagnostics.
struct NumericError : Error {
    using Error::Error;
};

// Bad or unknown configuration keys/values. CLI maps this to exit code 2.
struct ConfigError : Error {
    using Error::Error;
};

// A hard internal invariant failed (e.g. a frozen encoder changed under a
// probe). CLI maps this to exit code 3.
struct InvariantViolation : Error {
    using Error::Error;
};

// Malformed external input (split files, checkpoints, manifests).
struct ParseError : Error {
    using Error::Error;
};

}  // namespace trusttune
