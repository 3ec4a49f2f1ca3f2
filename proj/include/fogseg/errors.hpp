#pragma once

#include <stdexcept>
#include <string>

namespace fogseg {

// Bad shapes, schemas, configs, or file contents. CLI exit code 2.
class ValidationError : public std::runtime_error {
public:
    explicit ValidationError(const std::string& msg) : std::runtime_error(msg) {}
};

// Non-finite values where finite ones are required (diverged training,
// NaN gradients). CLI exit code 3.
class NumericError : public std::runtime_error {
public:
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

// Cross-validation contamination guard. CLI exit code 4.
class LeakageError : public std::runtime_error {
public:
    explicit LeakageError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace fogseg
