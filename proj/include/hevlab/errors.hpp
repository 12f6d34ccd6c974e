#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace hevlab {

// Argument outside the mathematical domain of an operation (negative power,
// out-of-range index, non-finite input).
class DomainError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// The environment has no admissible battery power for the current state.
class InfeasibleStateError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Malformed input file. `row` is 1-based over data rows; 0 means "whole file".
class ParseError : public std::runtime_error {
public:
    ParseError(const std::string& what, std::size_t row = 0)
        : std::runtime_error(row == 0 ? what : what + " (row " + std::to_string(row) + ")"),
          row_(row) {}

    std::size_t row() const noexcept { return row_; }

private:
    std::size_t row_;
};

// A battery power request outside [lb, ub]. Callers are expected to clamp or
// mask before stepping.
class FeasibilityError : public DomainError {
public:
    using DomainError::DomainError;
};

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace hevlab
