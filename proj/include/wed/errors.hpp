#pragma once

#include <cstdio>
#include <stdexcept>
#include <string>

namespace wed {

/// Invalid argument value (nonpositive sizes, bad exponents, bad schedules).
class DomainError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Requested tree would exceed the configured node budget.
class CapacityError : public std::length_error {
public:
    using std::length_error::length_error;
};

/// Operands of incompatible shape (grid width, tree, time support).
class SizeMismatch : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// An iterative solver stopped without meeting its tolerance.
class ConvergenceError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Line search could not find descent; the gradient disagrees with the objective.
class LineSearchError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

namespace detail {

inline std::string real_str(double x)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3e", x);
    return buf;
}

inline void require_size(std::size_t got, std::size_t expected, const char* what)
{
    if (got != expected) {
        throw SizeMismatch(std::string(what) + ": expected size " + std::to_string(expected) + ", got " +
                           std::to_string(got));
    }
}

} // namespace detail

} // namespace wed
