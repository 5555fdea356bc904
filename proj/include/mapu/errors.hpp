#pragma once

#include <stdexcept>
#include <string>

namespace mapu {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Tensor extents that do not fit the operation.
class ShapeError : public Error {
public:
    using Error::Error;
};

/// Argument outside the operation's domain (x <= 0 for digamma, bad label, ...).
class DomainError : public Error {
public:
    using Error::Error;
};

/// A forward or backward pass produced NaN/Inf.
class NumericError : public Error {
public:
    using Error::Error;
};

/// backward() on a loss whose tape has been cleared, or on a non-scalar.
class TapeError : public Error {
public:
    using Error::Error;
};

/// Malformed binary file (bad magic, truncation, unsupported version).
class FormatError : public Error {
public:
    using Error::Error;
};

class BadMagicError : public FormatError {
public:
    using FormatError::FormatError;
};

class TruncatedError : public FormatError {
public:
    using FormatError::FormatError;
};

class VersionError : public FormatError {
public:
    using FormatError::FormatError;
};

class IoError : public Error {
public:
    using Error::Error;
};

/// Configuration document failed validation.
class ConfigError : public Error {
public:
    using Error::Error;
};

}  // namespace mapu
