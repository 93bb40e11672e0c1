#pragma once

#include <stdexcept>
#include <string>

namespace cardiogen {

// Base of every error raised by the library. The CLI maps these to
// machine-parsable "error: <kind>: <message>" lines.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
    virtual const char* kind() const noexcept { return "error"; }
};

class ConfigError : public Error {
public:
    using Error::Error;
    const char* kind() const noexcept override { return "config"; }
};

class ShapeError : public Error {
public:
    using Error::Error;
    const char* kind() const noexcept override { return "shape"; }
};

class NumericError : public Error {
public:
    using Error::Error;
    const char* kind() const noexcept override { return "numeric"; }
};

class IoError : public Error {
public:
    using Error::Error;
    const char* kind() const noexcept override { return "io"; }
};

class MissingArtifactError : public Error {
public:
    using Error::Error;
    const char* kind() const noexcept override { return "missing-artifact"; }
};

}  // namespace cardiogen
