#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace bsing {

/// Precondition or regime violation (bad dimension, exponent outside the
/// admissible window, mismatched grids).
class DomainError : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

/// A solver failed to meet its stopping criterion.  Carries the residual
/// history so callers can report how far it got.
class ConvergenceError : public std::runtime_error {
public:
    ConvergenceError(const std::string& what, std::vector<double> history = {})
        : std::runtime_error(what), history_(std::move(history)) {}

    const std::vector<double>& history() const noexcept { return history_; }

private:
    std::vector<double> history_;
};

/// NaN reached a place where it can only mean a bug upstream.
class NumericalFault : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Raised when an identity check is requested without its weight constants.
class NotDerivedYet : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

} // namespace bsing
