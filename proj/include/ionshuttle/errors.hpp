#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace ionshuttle {

// Input files that do not conform to their documented layout.
class ParseError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Probe point outside the sampled region of a grid basis.
class OutOfBoundsError : public std::out_of_range {
public:
    using std::out_of_range::out_of_range;
};

// Numerical failure that is not a caller error (exit code 3 in the CLI).
class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class SingularInputError : public NumericalError {
public:
    using NumericalError::NumericalError;
};

class InsufficientDataError : public NumericalError {
public:
    using NumericalError::NumericalError;
};

class DegenerateLikelihoodError : public NumericalError {
public:
    using NumericalError::NumericalError;
};

class UnidentifiableError : public NumericalError {
public:
    using NumericalError::NumericalError;
};

class InfeasibleStepError : public NumericalError {
public:
    InfeasibleStepError(std::size_t step, std::size_t electrode, const std::string& what)
        : NumericalError(what), step_(step), electrode_(electrode) {}

    std::size_t step() const noexcept { return step_; }
    std::size_t electrode() const noexcept { return electrode_; }

private:
    std::size_t step_;
    std::size_t electrode_;
};

}  // namespace ionshuttle
