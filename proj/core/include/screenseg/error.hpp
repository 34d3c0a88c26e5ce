#pragma once

#include <stdexcept>
#include <string>

namespace screenseg {

// Invalid configuration or malformed input data. The CLI maps this to exit
// code 2; everything else that escapes maps to exit code 1.
class ValidationError : public std::runtime_error {
public:
    explicit ValidationError(const std::string& msg) : std::runtime_error(msg) {}
};

// Filesystem / serialization failures.
class IoError : public std::runtime_error {
public:
    explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

// Mismatched array shapes between operands.
class ShapeError : public std::runtime_error {
public:
    explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace screenseg
