#pragma once

#include <stdexcept>
#include <string>

namespace qbeat {

/// Bad input: parameters out of range, malformed files, unknown keys.
/// Maps to CLI exit code 1.
class ValidationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Numerical failure: integration drift, singular systems, fits that do
/// not converge. Maps to CLI exit code 2.
class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class DegenerateFitError : public NumericError {
public:
    using NumericError::NumericError;
};

} // namespace qbeat
