#pragma once

#include <stdexcept>
#include <string>

namespace gfmstab {

/// Base of every error raised by the toolkit.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A physical or control parameter is outside its admissible range.
class InvalidParameter : public Error {
public:
    using Error::Error;
};

/// Caller broke an interface precondition (dimension mismatch, frame mix-up, ...).
class ContractViolation : public Error {
public:
    using Error::Error;
};

/// A constant-power or constant-current branch sees zero voltage.
class SingularLoad : public Error {
public:
    using Error::Error;
};

/// The ZIP share parameter requests more CPL power than the total load.
class InvalidSplit : public Error {
public:
    using Error::Error;
};

/// Scenario file is malformed or names an unsupported combination.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Power flow / equilibrium solve did not converge (typically past the P-V nose).
class NoEquilibrium : public Error {
public:
    NoEquilibrium(const std::string& what, double last_residual)
        : Error(what), residual_(last_residual) {}
    double last_residual() const noexcept { return residual_; }

private:
    double residual_;
};

/// g_y is singular at the requested point, so the reduced matrix does not exist.
class Singularity : public Error {
public:
    Singularity(const std::string& what, double det)
        : Error(what), det_(det) {}
    double det_gy() const noexcept { return det_; }

private:
    double det_;
};

/// Bisection bracket whose ends share the same stability verdict.
class InvalidBracket : public Error {
public:
    using Error::Error;
};

/// Linear algebra or iteration failure that is not a modelling issue.
class NumericalFailure : public Error {
public:
    using Error::Error;
};

/// The trajectory or probe point left the region where a model is defined (e.g. v_DC <= 0).
class ModelInvalid : public Error {
public:
    using Error::Error;
};

}  // namespace gfmstab
