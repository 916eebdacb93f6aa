#pragma once

#include <stdexcept>
#include <string>

namespace vegs {

/// A parameter violates its documented domain (non-unit quaternion, negative scale, ...).
class InvalidParameter : public std::invalid_argument {
public:
    explicit InvalidParameter(const std::string& what) : std::invalid_argument(what) {}
};

/// Caller-supplied data is malformed (shape mismatch, corrupt file, bad header).
class InvalidInput : public std::invalid_argument {
public:
    explicit InvalidInput(const std::string& what) : std::invalid_argument(what) {}
};

/// A keyed entry (instance id, frame pose) does not exist.
class LookupError : public std::out_of_range {
public:
    explicit LookupError(const std::string& what) : std::out_of_range(what) {}
};

/// An instance was requested but never observed in any frame.
class EmptyInstanceError : public LookupError {
public:
    explicit EmptyInstanceError(const std::string& what) : LookupError(what) {}
};

/// An operation was called against a stale or mismatched record.
class StateError : public std::logic_error {
public:
    explicit StateError(const std::string& what) : std::logic_error(what) {}
};

/// File system failure; carries the offending path in the message.
class IoError : public std::runtime_error {
public:
    explicit IoError(const std::string& what) : std::runtime_error(what) {}
};

/// Network failure talking to a score provider. Retryable.
class TransportError : public std::runtime_error {
public:
    explicit TransportError(const std::string& what) : std::runtime_error(what) {}
};

/// Non-finite parameter values detected during optimization.
class NumericalError : public std::runtime_error {
public:
    explicit NumericalError(const std::string& what) : std::runtime_error(what) {}
};

} // namespace vegs
