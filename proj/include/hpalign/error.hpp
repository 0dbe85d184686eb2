#pragma once

#include <stdexcept>
#include <string>

namespace hpalign {

// Bad input, shapes, or configuration. CLI exit code 2.
class ValidationError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// Numerical breakdown: log(0) in a likelihood, Sinkhorn kernel underflow. CLI exit code 3.
class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Parameters whose intensity vanishes at an observed event, so log-likelihood is -inf.
class InfeasibleParameters : public NumericalError {
public:
    using NumericalError::NumericalError;
};

// File access and parse failures. CLI exit code 4.
class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

namespace detail {

inline void require(bool condition, const std::string& message)
{
    if (!condition) {
        throw ValidationError(message);
    }
}

}  // namespace detail
}  // namespace hpalign
