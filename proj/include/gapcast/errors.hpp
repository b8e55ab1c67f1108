#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace gapcast {

/// Bad input: shapes, ranges, file contents, configuration. Maps to CLI exit code 1.
class ValidationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A computation produced NaN/Inf or diverged. Maps to CLI exit code 2.
class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Non-finite tensor value; locates the first offending entry.
class NonFiniteError : public NumericalError {
public:
    NonFiniteError(const std::string& what, std::size_t row, std::size_t col, std::size_t rows)
        : NumericalError(what), row(row), col(col), rows(rows) {}
    std::size_t row;
    std::size_t col;
    std::size_t rows; ///< row count of the offending tensor
};

} // namespace gapcast
