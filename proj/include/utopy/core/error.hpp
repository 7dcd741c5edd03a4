#pragma once

#include <stdexcept>
#include <string>

namespace utopy {

/// A caller broke an operation's precondition (shape, range, configuration).
class ContractViolation : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// A computation produced NaN/Inf or diverged.
class NumericFailure : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// An iterative method exhausted its budget without meeting its tolerance.
class ConvergenceFailure : public std::runtime_error {
public:
    ConvergenceFailure(const std::string& what, double last_residual)
        : std::runtime_error(what), last_residual_(last_residual) {}
    double last_residual() const noexcept { return last_residual_; }

private:
    double last_residual_;
};

/// A file or staged artifact an operation depends on does not exist.
class MissingPrerequisite : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

} // namespace utopy

// The message expression is only evaluated on failure.
#define UTOPY_REQUIRE(cond, msg)                                   \
    do {                                                           \
        if (!(cond)) throw ::utopy::ContractViolation(msg);        \
    } while (0)
