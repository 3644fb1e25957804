#pragma once

#include <stdexcept>
#include <string>

namespace dpinn {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// A non-finite value appeared in a loss, gradient or derivative tower.
struct NumericalOverflow : Error {
    using Error::Error;
};

// A network graph contains an operation the tape cannot differentiate.
struct UnsupportedPrimitive : Error {
    using Error::Error;
};

// Vector/feature dimensions do not line up.
struct ShapeError : Error {
    using Error::Error;
};

// A derivative tower is too short for the operator applied to it.
struct OrderError : Error {
    using Error::Error;
};

struct UnknownScheme : Error {
    using Error::Error;
};

struct UnknownProblem : Error {
    using Error::Error;
};

// A reference solver produced a non-finite mode; carries the failing time.
struct OracleDiverged : Error {
    explicit OracleDiverged(const std::string& what, double t_fail = -1.0)
        : Error(what), t(t_fail) {}
    double t;
};

// Reference field is identically zero; relative error undefined.
struct DegenerateReference : Error {
    using Error::Error;
};

struct DomainError : Error {
    using Error::Error;
};

struct ConfigError : Error {
    using Error::Error;
};

} // namespace dpinn
