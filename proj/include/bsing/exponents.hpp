#pragma once

#include <compare>
#include <cstdint>
#include <string_view>

namespace bsing {

/// Exact rational with positive denominator, used for the exponent
/// thresholds so that q1 and q3 supplied as fractions classify exactly.
struct Rational {
    std::int64_t num = 0;
    std::int64_t den = 1;

    constexpr Rational() = default;
    constexpr Rational(std::int64_t n, std::int64_t d = 1) : num(n), den(d) { normalize(); }

    constexpr double value() const { return static_cast<double>(num) / static_cast<double>(den); }

    friend constexpr bool operator==(const Rational& a, const Rational& b) {
        return a.num == b.num && a.den == b.den;
    }
    friend constexpr std::strong_ordering operator<=>(const Rational& a, const Rational& b) {
        // denominators are positive, so cross multiplication preserves order
        return static_cast<__int128>(a.num) * b.den <=> static_cast<__int128>(b.num) * a.den;
    }

private:
    constexpr void normalize() {
        if (den < 0) {
            num = -num;
            den = -den;
        }
        std::int64_t a = num < 0 ? -num : num;
        std::int64_t b = den;
        while (b != 0) {
            const std::int64_t r = a % b;
            a = b;
            b = r;
        }
        if (a > 1) {
            num /= a;
            den /= a;
        }
    }
};

/// The triple every solver consumes: dimension N, exponent q and the
/// spectral parameter lambda of  -Δ'v = λ v + v^q  on the upper half sphere.
struct ProblemParams {
    int N = 4;
    double q = 2.0;
    double lambda = 0.0;

    /// Throws DomainError unless N >= 4 and q > 1 (and everything is finite).
    void validate() const;
};

struct CriticalSet {
    Rational q1_exact;
    Rational q2_exact;
    Rational q3_exact;
    double q1 = 0.0;
    double q2 = 0.0;
    double q3 = 0.0;
};

enum class Regime { SubcriticalNoSolution, UniqueSolution, SupercriticalNoSolution };

std::string_view to_string(Regime r);

/// q1 = (N+1)/(N-1), q2 = (N+2)/(N-2), q3 = (N+1)/(N-3).
CriticalSet critical_exponents(int N);

/// ℓ_{N,q} = 2(N - q(N-2)) / (q-1)^2, the coefficient that makes
/// r^{-2/(q-1)} ω(σ) a solution.
double ell(int N, double q);

/// β = N - 2(q+1)/(q-1), the first-order coefficient of the cylinder equation.
/// Vanishes exactly at q = q2.
double damping_coefficient(int N, double q);

/// Existence regime for the separable profile equation with λ = ℓ_{N,q}.
/// Thresholds are inclusive on the no-solution side.
Regime classify_regime(int N, double q);
Regime classify_regime(int N, Rational q);

} // namespace bsing
