#include "bsing/exponents.hpp"

#include "bsing/errors.hpp"

#include <cmath>
#include <string>

namespace bsing {

namespace {

void require_dimension(int N) {
    if (N < 4)
        throw DomainError("dimension N must be >= 4 (got " + std::to_string(N) + ")");
}

void require_exponent(double q) {
    if (!(q > 1.0) || !std::isfinite(q))
        throw DomainError("exponent q must be a finite number > 1");
}

} // namespace

void ProblemParams::validate() const {
    require_dimension(N);
    require_exponent(q);
    if (!std::isfinite(lambda))
        throw DomainError("lambda must be finite");
}

std::string_view to_string(Regime r) {
    switch (r) {
    case Regime::SubcriticalNoSolution: return "SubcriticalNoSolution";
    case Regime::UniqueSolution: return "UniqueSolution";
    case Regime::SupercriticalNoSolution: return "SupercriticalNoSolution";
    }
    return "?";
}

CriticalSet critical_exponents(int N) {
    require_dimension(N);
    CriticalSet c;
    c.q1_exact = Rational(N + 1, N - 1);
    c.q2_exact = Rational(N + 2, N - 2);
    c.q3_exact = Rational(N + 1, N - 3);
    c.q1 = c.q1_exact.value();
    c.q2 = c.q2_exact.value();
    c.q3 = c.q3_exact.value();
    return c;
}

double ell(int N, double q) {
    require_dimension(N);
    require_exponent(q);
    const double qm1 = q - 1.0;
    return 2.0 * (N - q * (N - 2)) / (qm1 * qm1);
}

double damping_coefficient(int N, double q) {
    require_dimension(N);
    require_exponent(q);
    // N - 2(q+1)/(q-1) written over a common denominator so that q2 gives 0
    // exactly: ((N-2)q - (N+2)) / (q-1)
    return ((N - 2) * q - (N + 2)) / (q - 1.0);
}

Regime classify_regime(int N, double q) {
    require_exponent(q);
    const CriticalSet c = critical_exponents(N);
    if (q <= c.q1)
        return Regime::SubcriticalNoSolution;
    if (q < c.q3)
        return Regime::UniqueSolution;
    return Regime::SupercriticalNoSolution;
}

Regime classify_regime(int N, Rational q) {
    if (!(q > Rational(1)))
        throw DomainError("exponent q must be > 1");
    const CriticalSet c = critical_exponents(N);
    if (q <= c.q1_exact)
        return Regime::SubcriticalNoSolution;
    if (q < c.q3_exact)
        return Regime::UniqueSolution;
    return Regime::SupercriticalNoSolution;
}

} // namespace bsing
