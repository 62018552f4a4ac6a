#pragma once

#include <stdexcept>
#include <string>

namespace beamvista {

// Process exit codes used by the command line tool.
enum class ExitCode : int {
    ok = 0,
    config = 2,
    data = 3,
    numeric = 4,
    io = 5,
};

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
    virtual ExitCode exit_code() const noexcept { return ExitCode::data; }
};

// Invalid configuration or argument outside the documented domain.
class ConfigError : public Error {
public:
    using Error::Error;
    ExitCode exit_code() const noexcept override { return ExitCode::config; }
};

class InputDomainError : public ConfigError {
public:
    using ConfigError::ConfigError;
};

class DataError : public Error {
public:
    using Error::Error;
};

// Stored bytes do not match their recorded hash, or the file is truncated.
class CorruptionError : public DataError {
public:
    using DataError::DataError;
};

// Wrong magic or unsupported version.
class FormatError : public DataError {
public:
    using DataError::DataError;
};

class ShapeError : public DataError {
public:
    using DataError::DataError;
};

class LabelError : public DataError {
public:
    using DataError::DataError;
};

class StateError : public Error {
public:
    using Error::Error;
};

class GeometryError : public DataError {
public:
    using DataError::DataError;
};

class VisibilityError : public DataError {
public:
    using DataError::DataError;
};

// Pruning request that would break a shape constraint of the network.
class StructuralError : public ConfigError {
public:
    using ConfigError::ConfigError;
};

class NumericError : public Error {
public:
    using Error::Error;
    ExitCode exit_code() const noexcept override { return ExitCode::numeric; }
};

class IoError : public Error {
public:
    using Error::Error;
    ExitCode exit_code() const noexcept override { return ExitCode::io; }
};

}  // namespace beamvista
