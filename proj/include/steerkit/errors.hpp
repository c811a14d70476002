#pragma once

#include <stdexcept>
#include <string>

namespace steerkit {

/// Base for everything the library throws on bad input or degenerate data.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A precondition or type invariant was violated by the caller.
class ValidationError : public Error {
public:
    using Error::Error;
};

/// Trace, manifest or vector file on disk is malformed.
class FormatError : public Error {
public:
    using Error::Error;
};

/// The data admit no answer: empty partition, zero weights, zero variance.
class DegenerateError : public Error {
public:
    using Error::Error;
};

}  // namespace steerkit
