#pragma once

#include <stdexcept>
#include <string>

namespace shapefit {

/// Base class for every error raised by the library. Messages are stable and
/// are matched verbatim by callers (e.g. "empty point set").
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Raised when an argument violates a documented precondition.
class InvalidArgument : public Error {
public:
    using Error::Error;
};

/// Raised when an input file cannot be read or has an unsupported layout.
class IoError : public Error {
public:
    using Error::Error;
};

}  // namespace shapefit
