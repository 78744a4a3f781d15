#pragma once

#include <stdexcept>
#include <string>

namespace oscillab {

/// Base of every failure raised by the library. The CLI maps these to exit code 1.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class InvalidArgument : public Error {
public:
    explicit InvalidArgument(const std::string& what) : Error("invalid argument: " + what) {}
};

class EvaluationFailure : public Error {
public:
    explicit EvaluationFailure(const std::string& what) : Error("evaluation failure: " + what) {}
};

class CapacityExceeded : public Error {
public:
    explicit CapacityExceeded(const std::string& what) : Error("capacity exceeded: " + what) {}
};

/// A hypothesis of a construction does not hold (e.g. gluing measures with different deformations).
class PreconditionViolation : public Error {
public:
    explicit PreconditionViolation(const std::string& what)
        : Error("precondition violation: " + what) {}
};

class UnsupportedDimension : public Error {
public:
    explicit UnsupportedDimension(const std::string& what)
        : Error("unsupported dimension: " + what) {}
};

class InvalidSchedule : public Error {
public:
    explicit InvalidSchedule(const std::string& what) : Error("invalid schedule: " + what) {}
};

/// The request is well formed but the library declines to run it (aliasing guard, audit witness).
class Refused : public Error {
public:
    explicit Refused(const std::string& what) : Error("refused: " + what) {}
};

}  // namespace oscillab
