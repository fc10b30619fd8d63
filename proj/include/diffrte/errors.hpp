#pragma once

#include <stdexcept>
#include <string>

namespace diffrte {

// Contract violations: bad shapes, out-of-range indices, invalid configs.
struct ValidationError : std::invalid_argument {
    explicit ValidationError(const std::string& msg) : std::invalid_argument(msg) {}
};

// I/O and parse failures; message carries the file path / line number.
struct DataError : std::runtime_error {
    explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

// Non-finite values where finiteness is required.
struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace diffrte
