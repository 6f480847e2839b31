#pragma once

#include "bsing/exponents.hpp"
#include "bsing/sphere_ode.hpp"

#include <optional>
#include <string>

namespace bsing {

struct IdentityReport {
    std::string name;
    double lhs = 0.0;
    double rhs = 0.0;
    /// lhs - rhs as computed.
    double residual = 0.0;
    /// |residual| / max(|lhs|, |rhs|, 1e-30).
    double relative_residual = 0.0;
    /// Set when lhs and rhs carry strictly incompatible signs, i.e. the
    /// identity cannot hold for the supplied profile whatever the accuracy.
    bool sign_violation = false;
};

IdentityReport make_report(std::string name, double lhs, double rhs);

/// (λ1 - λ) ∫ v φ dσ  versus  ∫ v^q φ dσ, with φ = cos θ and λ1 = N - 1.
IdentityReport phi_balance_residual(const RadialProfile& profile, const ProblemParams& params);

/// (N-3)(q-q3)/(q+1): the coefficient of ∫|∇'v|²φ in the Pohožaev identity.
double pohozaev_gradient_coefficient(int N, double q);

/// (N-3)(q-q3)/(q+1) ∫|∇'v|²φ - (N-1)(q-1)/(q+1) (λ + (N-1)/(q-1)) ∫v²φ
/// versus -∫_{∂S+} |∇'v|² dτ = -|S^{N-2}| v'(π/2)².
IdentityReport pohozaev_residual(const RadialProfile& profile, const ProblemParams& params);

/// G(θ) = sin^β' θ (α1 sin²θ + α2) for w = sin^α θ v.
struct KwongLiWeight {
    double alpha = 0.0;
    double beta_prime = 0.0;
    double alpha1 = 0.0;
    double alpha2 = 0.0;

    double G(double theta) const;
    double dG(double theta) const;
};

/// Closed-form constants for the given (N, q, λ):
///   α = 2(N-2)/(q+3),  μ = α(α + 3 - N),
///   β' = 2N - 6 - 4α,  α1 = λ + α - μ,  α2 = μ.
/// With this α, μ ≤ 0 for N ≥ 4, q > 1.
KwongLiWeight derive_kwong_li_weight(const ProblemParams& params);

struct KwongLiProfile {
    /// w = sin^α θ v and w' nodewise.  w' is unbounded at the pole when
    /// α < 1; dv[0] is stored as 0 there.
    RadialProfile w;
    double dw_equator = 0.0;
};

KwongLiProfile kwong_li_transform(const RadialProfile& profile, const ProblemParams& params);

/// w'(π/2)² versus ∫_0^{π/2} G'(θ) w² dθ.  Throws NotDerivedYet without a
/// weight.  The integrand behaves like θ^{2N-7-2α} at the pole, so the
/// first panels use product integration against that power.
IdentityReport kwong_li_residual(const RadialProfile& profile, const ProblemParams& params,
                                 const std::optional<KwongLiWeight>& weight);

/// ∫_0^{π/2} v1 v2 (v2^{q-1} - v1^{q-1}) sin^{N-2}θ dθ  (rhs 0).
IdentityReport cross_term(const RadialProfile& p1, const RadialProfile& p2, const ProblemParams& params);

/// Sign changes of v1 - v2 over interior nodes; nodes where the difference
/// is exactly 0 are skipped.
int intersection_count(const RadialProfile& p1, const RadialProfile& p2);

/// ∫_0^{π/2} θ^p g(θ) dθ: quadratic product integration on the first
/// `pole_panels` Simpson panels, composite Simpson beyond.  p > -1.
double pole_power_integral(const ThetaGrid& grid, std::span<const double> g, double p,
                           std::size_t pole_panels = 32);

} // namespace bsing
