#pragma once

#include <stdexcept>
#include <string>

namespace sparsesplat {

// Base of every error thrown by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class InvalidInputError : public Error {
public:
    using Error::Error;
};

class DimensionMismatchError : public InvalidInputError {
public:
    using InvalidInputError::InvalidInputError;
};

class DegenerateRotationError : public InvalidInputError {
public:
    using InvalidInputError::InvalidInputError;
};

// A correlation-based loss had nothing to correlate (constant maps, no tiles).
class NoSignalError : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

class FormatError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

class ServiceError : public Error {
public:
    using Error::Error;
};

class NonFiniteLossError : public Error {
public:
    using Error::Error;
};

class EmptyCloudError : public Error {
public:
    using Error::Error;
};

} // namespace sparsesplat
