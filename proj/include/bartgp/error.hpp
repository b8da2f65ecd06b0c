#pragma once

#include <stdexcept>
#include <string>

namespace bartgp {

// Bad arguments: shapes, domains, empty inputs.
class DomainError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// A recursion or search exceeded its configured resource limit.
class BudgetExceeded : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Numerical procedure could not proceed (e.g. sampler bracketing).
class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

namespace detail {

inline void require(bool cond, const std::string& what) {
    if (!cond) throw DomainError(what);
}

}  // namespace detail
}  // namespace bartgp
