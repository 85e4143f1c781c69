#pragma once

#include <stdexcept>
#include <string>

namespace rsmlp {

struct ConvergenceError : std::runtime_error {
    double residual;
    ConvergenceError(const std::string& what, double r) : std::runtime_error(what), residual(r) {}
};

struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ConfigError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

}  // namespace rsmlp
