#include "bsing/identities.hpp"

#include "bsing/errors.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace bsing {

IdentityReport make_report(std::string name, double lhs, double rhs) {
    IdentityReport r;
    r.name = std::move(name);
    r.lhs = lhs;
    r.rhs = rhs;
    r.residual = lhs - rhs;
    r.relative_residual = std::abs(r.residual) / std::max({std::abs(lhs), std::abs(rhs), 1e-30});
    r.sign_violation = (lhs <= 0.0 && rhs > 0.0) || (lhs >= 0.0 && rhs < 0.0);
    return r;
}

IdentityReport phi_balance_residual(const RadialProfile& p, const ProblemParams& params) {
    const int N = params.N;
    const double lambda1 = N - 1.0;
    const double vphi =
        sphere_integral(p, N, [](double th, double v, double) { return v * std::cos(th); });
    const double vqphi = sphere_integral(
        p, N, [q = params.q](double th, double v, double) { return odd_power(v, q) * std::cos(th); });
    return make_report("phi_balance", (lambda1 - params.lambda) * vphi, vqphi);
}

double pohozaev_gradient_coefficient(int N, double q) {
    const double q3 = critical_exponents(N).q3;
    return (N - 3.0) * (q - q3) / (q + 1.0);
}

IdentityReport pohozaev_residual(const RadialProfile& p, const ProblemParams& params) {
    const int N = params.N;
    const double q = params.q;
    const double grad =
        sphere_integral(p, N, [](double th, double, double dv) { return dv * dv * std::cos(th); });
    const double mass =
        sphere_integral(p, N, [](double th, double v, double) { return v * v * std::cos(th); });
    const double lhs = pohozaev_gradient_coefficient(N, q) * grad -
                       (N - 1.0) * (q - 1.0) / (q + 1.0) * (params.lambda + (N - 1.0) / (q - 1.0)) * mass;
    const double edge = p.dv.back();
    return make_report("pohozaev", lhs, -sphere_area(N - 2) * edge * edge);
}

double KwongLiWeight::G(double theta) const {
    const double s = std::sin(theta);
    return std::pow(s, beta_prime) * (alpha1 * s * s + alpha2);
}

double KwongLiWeight::dG(double theta) const {
    const double s = std::sin(theta);
    return std::cos(theta) *
           (alpha1 * (beta_prime + 2.0) * std::pow(s, beta_prime + 1.0) +
            alpha2 * beta_prime * std::pow(s, beta_prime - 1.0));
}

KwongLiWeight derive_kwong_li_weight(const ProblemParams& params) {
    params.validate();
    const int N = params.N;
    KwongLiWeight k;
    k.alpha = 2.0 * (N - 2.0) / (params.q + 3.0);
    const double mu = k.alpha * (k.alpha + 3.0 - N);
    k.beta_prime = 2.0 * N - 6.0 - 4.0 * k.alpha;
    k.alpha1 = params.lambda + k.alpha - mu;
    k.alpha2 = mu;
    return k;
}

KwongLiProfile kwong_li_transform(const RadialProfile& p, const ProblemParams& params) {
    const double alpha = 2.0 * (params.N - 2.0) / (params.q + 3.0);
    KwongLiProfile out;
    out.w = RadialProfile(p.grid);
    for (std::size_t i = 0; i < p.size(); ++i) {
        const double th = p.grid.node(i);
        const double s = std::sin(th);
        out.w.v[i] = std::pow(s, alpha) * p.v[i];
        if (i == 0) {
            out.w.dv[i] = 0.0;
            continue;
        }
        out.w.dv[i] = alpha * std::pow(s, alpha - 1.0) * std::cos(th) * p.v[i] + std::pow(s, alpha) * p.dv[i];
    }
    // sin(π/2) = 1 and cos(π/2) = 0 exactly in the limit; avoid cos(kHalfPi) ≈ 6e-17.
    out.dw_equator = p.dv.back();
    out.w.dv.back() = out.dw_equator;
    out.w.v.back() = p.v.back();
    return out;
}

double pole_power_integral(const ThetaGrid& grid, std::span<const double> g, double p,
                           std::size_t pole_panels) {
    if (g.size() != grid.size())
        throw DomainError("integrand size does not match the theta grid");
    if (!(p > -1.0))
        throw DomainError("pole power must exceed -1");
    const double h = grid.spacing();
    const std::size_t intervals = grid.size() - 1;
    std::size_t panels = std::min(pole_panels, intervals / 2);
    while (panels > 0 && intervals - 2 * panels < 3)
        --panels;

    double total = 0.0;
    for (std::size_t k = 0; k < panels; ++k) {
        const double x0 = grid.node(2 * k), x1 = grid.node(2 * k + 1), x2 = grid.node(2 * k + 2);
        // Moments ∫ θ^{p+j} over [x0, x2], j = 0, 1, 2.
        double M[3];
        for (int j = 0; j < 3; ++j) {
            const double e = p + j + 1.0;
            M[j] = (std::pow(x2, e) - (x0 > 0.0 ? std::pow(x0, e) : 0.0)) / e;
        }
        // Lagrange basis L_i(θ) = (θ - a)(θ - b) / d as c2 θ² + c1 θ + c0.
        auto weight = [&](double xi, double a, double b) {
            const double d = (xi - a) * (xi - b);
            return (M[2] - (a + b) * M[1] + a * b * M[0]) / d;
        };
        total += weight(x0, x1, x2) * g[2 * k] + weight(x1, x0, x2) * g[2 * k + 1] +
                 weight(x2, x0, x1) * g[2 * k + 2];
    }
    const std::size_t start = 2 * panels;
    std::vector<double> f(grid.size() - start);
    for (std::size_t i = start; i < grid.size(); ++i)
        f[i - start] = std::pow(grid.node(i), p) * g[i];
    return total + simpson(f, h);
}

IdentityReport kwong_li_residual(const RadialProfile& p, const ProblemParams& params,
                                 const std::optional<KwongLiWeight>& weight) {
    if (!weight)
        throw NotDerivedYet("Kwong-Li weight constants (beta', alpha1, alpha2) were not supplied");
    const KwongLiWeight& k = *weight;
    const KwongLiProfile t = kwong_li_transform(p, params);
    // G' w² = cos θ v² [A sin^{a1} θ + B sin^{a2} θ], a1 = a2 + 2.
    const double A = k.alpha1 * (k.beta_prime + 2.0);
    const double B = k.alpha2 * k.beta_prime;
    const double a2 = k.beta_prime - 1.0 + 2.0 * k.alpha;
    std::vector<double> g(p.size());
    for (std::size_t i = 0; i < p.size(); ++i) {
        const double th = p.grid.node(i);
        const double sinc = th == 0.0 ? 1.0 : std::sin(th) / th;
        const double s = std::sin(th);
        // g = G' w² / θ^{a2}
        g[i] = std::cos(th) * p.v[i] * p.v[i] * std::pow(sinc, a2) * (A * s * s + B);
    }
    g.back() = 0.0; // cos(π/2)
    const double rhs = pole_power_integral(p.grid, g, a2);
    return make_report("kwong_li", t.dw_equator * t.dw_equator, rhs);
}

IdentityReport cross_term(const RadialProfile& p1, const RadialProfile& p2, const ProblemParams& params) {
    if (!(p1.grid == p2.grid) || p1.size() != p2.size())
        throw DomainError("cross_term needs both profiles on the same grid");
    const double qm1 = params.q - 1.0;
    std::vector<double> f(p1.size());
    for (std::size_t i = 0; i < f.size(); ++i) {
        const double a = p1.v[i], b = p2.v[i];
        f[i] = a * b * (odd_power(b, qm1) - odd_power(a, qm1));
    }
    return make_report("cross_term", weighted_integral(p1.grid, f, params.N - 2), 0.0);
}

int intersection_count(const RadialProfile& p1, const RadialProfile& p2) {
    if (p1.size() != p2.size())
        throw DomainError("intersection_count needs both profiles on the same grid");
    int count = 0;
    int last = 0;
    for (std::size_t i = 1; i + 1 < p1.size(); ++i) {
        const double d = p1.v[i] - p2.v[i];
        const int s = (d > 0.0) - (d < 0.0);
        if (s == 0)
            continue;
        if (last != 0 && s != last)
            ++count;
        last = s;
    }
    return count;
}

} // namespace bsing
