#pragma once

#include <stdexcept>
#include <string>

namespace gaitlab {

/// Base class for every error thrown by this library.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& what) : std::runtime_error(what) {}
};

/// Malformed input text (JSON, CSV, wire frames).
class ParseError : public Error {
public:
    using Error::Error;
};

/// Input violates a documented invariant (duplicate ids, out-of-range samples).
class ValidationError : public Error {
public:
    using Error::Error;
};

/// Filesystem or socket failure.
class IoError : public Error {
public:
    using Error::Error;
};

/// Argument outside its documented domain (cutoff, window length, ...).
class ParameterError : public Error {
public:
    using Error::Error;
};

/// Inconsistent run configuration (missing window length, bad flag combo).
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Data unusable for the requested computation (zero steps, single class).
class DataError : public Error {
public:
    using Error::Error;
};

/// Matrix dimensions do not match a trained model.
class ShapeError : public Error {
public:
    using Error::Error;
};

/// Numerical breakdown (singular scatter, non-finite loss).
class NumericError : public Error {
public:
    using Error::Error;
};

} // namespace gaitlab
