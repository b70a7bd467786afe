#pragma once

#include <stdexcept>
#include <string>

namespace sketchmass {

/// Base for all library errors. The CLI maps each subclass to an exit code.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Invalid configuration or arguments (exit code 2).
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Malformed, missing or inconsistent input data (exit code 3).
class DataError : public Error {
public:
    using Error::Error;
};

/// Parse failure that carries the offending line.
class ParseError : public DataError {
public:
    ParseError(const std::string& what, std::size_t line)
        : DataError(what + " (line " + std::to_string(line) + ")"), line_(line) {}

    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

/// Degenerate geometry, e.g. a zero-extent mesh.
class GeometryError : public DataError {
public:
    using DataError::DataError;
};

/// Non-finite loss or parameters during training (exit code 4).
class NumericError : public Error {
public:
    using Error::Error;
};

}  // namespace sketchmass
