#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

namespace gridreserve {

constexpr double kInf = std::numeric_limits<double>::infinity();

/// Base class for all library errors. Message always names the offending
/// element so callers can report actionable diagnostics.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

#define GRIDRESERVE_ERROR(Name)                                                \
    class Name : public Error {                                                \
    public:                                                                    \
        using Error::Error;                                                    \
    }

GRIDRESERVE_ERROR(ParseError);
GRIDRESERVE_ERROR(ValidationError);
GRIDRESERVE_ERROR(TopologyError);
GRIDRESERVE_ERROR(DuplicateName);
GRIDRESERVE_ERROR(UnknownIndex);
GRIDRESERVE_ERROR(DomainError);
GRIDRESERVE_ERROR(NegativeCost);
GRIDRESERVE_ERROR(InfeasibleCase);
GRIDRESERVE_ERROR(VertexBudgetExceeded);
GRIDRESERVE_ERROR(InfeasibleRobust);
GRIDRESERVE_ERROR(NotPSD);
GRIDRESERVE_ERROR(InsufficientSamples);
GRIDRESERVE_ERROR(NonConvergence);
GRIDRESERVE_ERROR(NoFeasibleSigma);
GRIDRESERVE_ERROR(DegenerateActiveSet);
GRIDRESERVE_ERROR(NoFeasibleGain);
GRIDRESERVE_ERROR(BisectionNotConverged);
GRIDRESERVE_ERROR(SignError);
GRIDRESERVE_ERROR(UnknownEvent);
GRIDRESERVE_ERROR(IoError);

#undef GRIDRESERVE_ERROR

inline bool nearly_equal(double a, double b, double tol = 1e-12) {
    return std::fabs(a - b) <= tol * std::max({1.0, std::fabs(a), std::fabs(b)});
}

inline double inf_norm(const std::vector<double>& v) {
    double m = 0.0;
    for (double x : v) m = std::max(m, std::fabs(x));
    return m;
}

} // namespace gridreserve
