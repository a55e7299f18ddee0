#pragma once

#include <stdexcept>
#include <string>

namespace tslim {

struct ParseError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ValidationError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct NonConvergence : std::runtime_error {
    explicit NonConvergence(const std::string& msg, std::string trace = {})
        : std::runtime_error(msg), iteration_trace(std::move(trace)) {}
    std::string iteration_trace;
};

struct IslandingError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct InitError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct NoEquilibrium : InitError {
    using InitError::InitError;
};

// Network algebraic solve failed inside a simulation step. Callers convert
// this into an "unstable" verdict rather than crashing the run.
struct AlgebraicDivergence : std::runtime_error {
    explicit AlgebraicDivergence(const std::string& msg, double at_time)
        : std::runtime_error(msg), time(at_time) {}
    double time;
};

struct LengthMismatch : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

struct NoCandidate : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct AllFailed : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct SourceCapacityExceeded : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct BaseInfeasible : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace tslim
