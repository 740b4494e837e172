#ifndef CFX_ERROR_HPP
#define CFX_ERROR_HPP

#include <stdexcept>
#include <string>

namespace cfx {

// Bad command line or config file input. CLI exit code 1.
class UsageError : public std::runtime_error {
public:
    explicit UsageError(const std::string& msg) : std::runtime_error(msg) {}
};

// Schema, range, or contract violation in data. CLI exit code 2.
class DataError : public std::runtime_error {
public:
    explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

// Numerical failure (divergence, non-finite values). CLI exit code 3.
class NumericError : public std::runtime_error {
public:
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace cfx

#endif
