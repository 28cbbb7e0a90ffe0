#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace gridopf {

/// Base class for every failure raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed or inconsistent input: grid/scenario files, referential
/// integrity, structural invariants. Maps to CLI exit code 2.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Newton or Gauss-Newton iteration failed to converge.
class DivergenceError : public Error {
public:
    DivergenceError(const std::string& what, double residual, int iterations)
        : Error(what), residual_(residual), iterations_(iterations) {}

    double residual() const noexcept { return residual_; }
    int iterations() const noexcept { return iterations_; }

private:
    double residual_;
    int iterations_;
};

/// A node voltage collapsed below the admissible floor during iteration.
class LowVoltageError : public Error {
public:
    LowVoltageError(const std::string& what, std::size_t node, double magnitude)
        : Error(what), node_(node), magnitude_(magnitude) {}

    std::size_t node() const noexcept { return node_; }
    double magnitude() const noexcept { return magnitude_; }

private:
    std::size_t node_;
    double magnitude_;
};

/// The measurement set does not determine the state.
class UnobservableError : public Error {
public:
    UnobservableError(const std::string& what, std::size_t nullity)
        : Error(what), nullity_(nullity) {}

    std::size_t nullity() const noexcept { return nullity_; }

private:
    std::size_t nullity_;
};

class DegenerateEstimateError : public Error {
public:
    using Error::Error;
};

class InvalidCovarianceError : public Error {
public:
    using Error::Error;
};

}  // namespace gridopf
