#pragma once

#include <stdexcept>
#include <string>

namespace tsot {

// Argument outside the mathematical domain of a function (e.g. log of a
// nonpositive number).
class DomainError : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

// Caller misuse: mismatched dimensions, unsupported tags, invalid configs.
class UsageError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// An algorithm failed numerically (bracket lost, singular system, ...).
class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace tsot
