#pragma once

#include <stdexcept>
#include <string>

namespace starksim {

// Invalid inputs: geometry, protocol, configuration values.
class ValidationError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// An iterative method ran out of iterations. Carries the last residual it saw.
class ConvergenceError : public std::runtime_error {
public:
    ConvergenceError(const std::string& what, double last_residual)
        : std::runtime_error(what), last_residual_(last_residual) {}

    double last_residual() const noexcept { return last_residual_; }

private:
    double last_residual_;
};

class RangeError : public std::out_of_range {
public:
    using std::out_of_range::out_of_range;
};

} // namespace starksim
