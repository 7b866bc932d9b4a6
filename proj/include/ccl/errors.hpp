#pragma once

#include <stdexcept>

namespace ccl {

// Shape or length disagreement between operands.
class DimensionError : public std::invalid_argument {
   public:
    using std::invalid_argument::invalid_argument;
};

// A documented precondition was violated by the caller.
class ContractError : public std::logic_error {
   public:
    using std::logic_error::logic_error;
};

// Invalid run or model configuration.
class ConfigError : public std::invalid_argument {
   public:
    using std::invalid_argument::invalid_argument;
};

// Malformed or missing cohort input.
class CohortError : public std::runtime_error {
   public:
    using std::runtime_error::runtime_error;
};

// A statistic is undefined for the given sample.
class UndefinedStatistic : public std::domain_error {
   public:
    using std::domain_error::domain_error;
};

// Training produced a non-finite value.
class NumericalError : public std::runtime_error {
   public:
    using std::runtime_error::runtime_error;
};

// Output could not be written.
class IoError : public std::runtime_error {
   public:
    using std::runtime_error::runtime_error;
};

}  // namespace ccl
