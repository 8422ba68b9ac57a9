// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace streammem {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Operand dimensions do not fit together.
class ShapeError : public Error {
public:
    using Error::Error;
};

/// Input is well-formed but mathematically degenerate (empty, zero norm).
class DegenerateInputError : public Error {
public:
    using Error::Error;
};

/// Invalid or mutually inconsistent configuration.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// A sequence that must be nondecreasing is not.
class OrderingError : public Error {
public:
    using Error::Error;
};

/// Malformed, truncated or corrupted persisted data.
class FormatError : public Error {
public:
    using Error::Error;
};

/// Operation is not valid in the current object state.
class StateError : public Error {
public:
    using Error::Error;
};

} // namespace streammem
