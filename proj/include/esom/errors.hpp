#pragma once

#include <stdexcept>
#include <string>

namespace esom {

// Root of every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class DimensionError : public Error {
public:
    using Error::Error;
};

class SymmetryError : public Error {
public:
    using Error::Error;
};

class NumericalFailure : public Error {
public:
    using Error::Error;
};

class NotPositiveDefinite : public Error {
public:
    using Error::Error;
};

class ParameterError : public Error {
public:
    using Error::Error;
};

class InfeasibleRatio : public Error {
public:
    using Error::Error;
};

// A node read data out of protocol order (stale or missing neighbor message).
class ProtocolError : public Error {
public:
    using Error::Error;
};

class DivergenceError : public Error {
public:
    using Error::Error;
};

class InconsistentState : public Error {
public:
    using Error::Error;
};

// The ζ interval of the ESOM rate is empty; carries the smallest ε that would open it.
class InfeasibleEpsilon : public Error {
public:
    InfeasibleEpsilon(const std::string& what, double minimal_epsilon)
        : Error(what), minimal_epsilon_(minimal_epsilon) {}
    double minimal_epsilon() const noexcept { return minimal_epsilon_; }

private:
    double minimal_epsilon_;
};

class IoError : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

} // namespace esom
