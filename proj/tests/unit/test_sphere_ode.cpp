#include "../oracle.hpp"

#include "bsing/errors.hpp"
#include "bsing/shooting.hpp"
#include "bsing/sphere_ode.hpp"

#include <doctest.h>

#include <cmath>
#include <numbers>
#include <sstream>

using namespace bsing;

namespace {

double cos_error(const IvpResult& r) {
    double e = 0.0;
    for (std::size_t i = 0; i < r.profile.size(); ++i)
        e = std::max(e, std::abs(r.profile.v[i] - std::cos(r.profile.grid.node(i))));
    return e;
}

IvpResult linear_shot(std::size_t nodes) {
    OdeOptions o;
    o.nonlinear = false;
    return integrate_ivp({4, 2.0, 3.0}, 1.0, ThetaGrid(nodes), o);
}

}  // namespace

TEST_SUITE("sphere_ode") {

TEST_CASE("theta grid endpoints and minimum size") {
    const ThetaGrid g(2048);
    CHECK(g.node(0) == 0.0);
    CHECK(g.node(2047) == kHalfPi);
    CHECK(g.spacing() == doctest::Approx(kHalfPi / 2047));
    CHECK_NOTHROW(ThetaGrid(66));
    CHECK_THROWS_AS(ThetaGrid(65), DomainError);
    const auto nodes = g.nodes();
    for (std::size_t i = 1; i < nodes.size(); ++i)
        CHECK(nodes[i] > nodes[i - 1]);
}

TEST_CASE("linear probe reproduces cos theta") {
    const auto r = linear_shot(2048);
    CHECK(r.positive());
    CHECK(cos_error(r) <= 1e-8);
}

TEST_CASE("fourth order against cos theta") {
    // above the roundoff floor, which 1025 nodes already reach
    const double e1 = cos_error(linear_shot(129));
    const double e2 = cos_error(linear_shot(257));
    const double e3 = cos_error(linear_shot(513));
    CHECK(e1 / e2 >= 15.0);
    CHECK(e2 / e3 >= 15.0);
}

TEST_CASE("small amplitude stays close to the lambda = 0 linear solution") {
    // λ = 0 linear problem with v'(0) = 0 has the constant solution v = a
    const double a = 1e-3;
    const auto r = integrate_ivp({4, 2.0, 0.0}, a, ThetaGrid(4096));
    REQUIRE(r.positive());
    REQUIRE_FALSE(r.first_zero);
    double dev = 0.0;
    for (double v : r.profile.v)
        dev = std::max(dev, std::abs(v - a));
    CHECK(dev <= 1e-4);
    // and matches the independent integrator
    const auto ref = oracle::shoot(4, 2.0, 0.0, a);
    CHECK(r.profile.v.back() == doctest::Approx(ref.end_value).epsilon(1e-10));
}

TEST_CASE("large amplitude zero agrees with a 10x finer run") {
    const ProblemParams p{4, 2.0, 0.0};
    const auto coarse = integrate_ivp(p, 1e3, ThetaGrid(4096));
    const auto fine = integrate_ivp(p, 1e3, ThetaGrid(40951));
    REQUIRE(coarse.first_zero);
    REQUIRE(fine.first_zero);
    CHECK(*coarse.first_zero < kHalfPi);
    CHECK(*coarse.first_zero == doctest::Approx(*fine.first_zero).epsilon(1e-8));
    const auto ref = oracle::shoot(4, 2.0, 0.0, 1e3, 400000);
    REQUIRE(ref.zero);
    CHECK(*coarse.first_zero == doctest::Approx(*ref.zero).epsilon(1e-6));
}

TEST_CASE("exactly one event per shot") {
    const ProblemParams p{4, 2.0, 0.0};
    for (double a : {1e-3, 0.5, 4.0, 6.0, 50.0, 1e3, 1e4}) {
        CAPTURE(a);
        const auto r = integrate_ivp(p, a, ThetaGrid(1024));
        const int events = int(r.first_zero.has_value()) + int(r.positive()) + int(r.blowup);
        CHECK(events == 1);
        CHECK(r.event_angle() == (r.first_zero ? *r.first_zero : INFINITY));
    }
}

TEST_CASE("first zero is bracketed by the last two stored nodes") {
    const ThetaGrid g(2048);
    for (double a : {6.0, 20.0, 300.0}) {
        CAPTURE(a);
        const auto r = integrate_ivp({4, 2.0, 0.0}, a, g);
        REQUIRE(r.first_zero);
        REQUIRE(r.reached >= 2);
        const std::size_t k = r.reached - 1;
        CHECK(r.profile.v[k - 1] > 0.0);
        CHECK(r.profile.v[k] < 0.0);
        CHECK(g.node(k - 1) <= *r.first_zero);
        CHECK(*r.first_zero <= g.node(k));
    }
}

TEST_CASE("series start agrees with the two-term expansion to fourth order") {
    // both integrators deviate from a - (λa + a^q)θ²/(2(N-1)) by the same θ⁴ term
    const ProblemParams p{4, 2.0, 0.0};
    const ThetaGrid g(4096);
    const std::size_t k = 20;  // θ = 2ε with ε = 10h
    const double theta = g.node(k);
    for (double a : {0.1, 1.0, 4.9, 10.0}) {
        CAPTURE(a);
        const auto r = integrate_ivp(p, a, g);
        const double two_term = a - (p.lambda * a + a * a) * theta * theta / (2.0 * (p.N - 1));
        const double diff = std::abs(r.profile.v[k] - two_term);
        const auto ref = oracle::shoot(p.N, p.q, p.lambda, a, 4095 * 50, true, true);
        const double ref_diff = std::abs(ref.v[k * 50] - two_term);
        CHECK(diff <= 1.01 * ref_diff + 1e-14);
        CHECK(diff / std::pow(theta, 4) <= 1.01 * ref_diff / std::pow(theta, 4) + 1.0);
    }
}

TEST_CASE("pole series leading coefficients") {
    const auto s = pole_series({4, 2.0, 0.5}, 2.0);
    CHECK(s.c[0] == 2.0);
    CHECK(s.c[1] == doctest::Approx(-(0.5 * 2.0 + 4.0) / 6.0));
    CHECK(s.derivative(0.0) == 0.0);
}

TEST_CASE("amplitude must be positive") {
    CHECK_THROWS_AS(integrate_ivp({4, 2.0, 0.0}, 0.0, ThetaGrid(128)), DomainError);
    CHECK_THROWS_AS(integrate_ivp({4, 2.0, 0.0}, -1.0, ThetaGrid(128)), DomainError);
}

TEST_CASE("sphere integral closed forms") {
    constexpr double pi = std::numbers::pi;
    const ThetaGrid g(1001);
    const auto one = RadialProfile::from_function(g, [](double) { return 1.0; });
    CHECK(sphere_integral(g, 4, one.v) == doctest::Approx(pi * pi).epsilon(1e-12));
    const auto phi2 = RadialProfile::from_function(g, [](double t) { return std::cos(t) * std::cos(t); });
    CHECK(sphere_integral(g, 4, phi2.v) == doctest::Approx(pi * pi / 4).epsilon(1e-12));
    CHECK(sphere_area(2) == doctest::Approx(4 * pi).epsilon(1e-15));
}

TEST_CASE("quadrature of cubics in cos theta on even and odd interval counts") {
    for (std::size_t n : {4096u, 4097u, 66u, 67u})
        for (int N = 4; N <= 9; ++N) {
            CAPTURE(n);
            CAPTURE(N);
            const ThetaGrid g(n);
            const int m = N - 2;
            // ∫ cos^k sin^m on [0, π/2], closed form via the Beta function
            for (int k = 0; k <= 3; ++k) {
                const double exact = oracle::sphere_area(N - 2) * 0.5 * std::tgamma(0.5 * (k + 1)) *
                                     std::tgamma(0.5 * (m + 1)) / std::tgamma(0.5 * (k + m + 2));
                const auto f = RadialProfile::from_function(g, [k](double t) { return std::pow(std::cos(t), k); });
                const double tol = n >= 4096 ? 1e-12 : 1e-6;
                CHECK(sphere_integral(g, N, f.v) == doctest::Approx(exact).epsilon(tol));
            }
        }
}

TEST_CASE("omega0 squared integral matches a 10x finer quadrature") {
    const ProblemParams p{4, 2.0, 0.0};
    const auto w = omega0(4, 2.0);
    const auto fine = integrate_ivp(p, w.v[0], ThetaGrid(40951));
    auto sq = [](double, double v, double) { return v * v; };
    REQUIRE(fine.reached == 40951);
    const double a = sphere_integral(w, 4, sq);
    const double b = sphere_integral(fine.profile, 4, sq);
    CHECK(a > 0.0);
    CHECK(std::abs(a - b) <= 1e-8 * b);
}

TEST_CASE("ode residual: eigenfunction, zero, and second order on a solution") {
    const ThetaGrid g(1024);
    const auto c = RadialProfile::from_function(g, [](double t) { return std::cos(t); });
    const double r1 = ode_residual(c, {4, 2.0, 3.0}, false);
    CHECK(r1 <= 1.0 * g.spacing() * g.spacing());
    const RadialProfile zero(g);
    CHECK(ode_residual(zero, {4, 2.0, 0.0}) == 0.0);

    const ProblemParams p{4, 2.0, 0.0};
    double prev = 0.0;
    for (std::size_t n : {513u, 1025u, 2049u}) {
        const auto r = integrate_ivp(p, oracle::a_star_4_2, ThetaGrid(n));
        const double res = ode_residual(r.profile, p);
        if (prev > 0.0)
            CHECK(prev / res >= 3.5);
        prev = res;
    }
}

TEST_CASE("resample is exact for cubic data") {
    const ThetaGrid a(200), b(333);
    auto f = [](double t) { return 1.0 + t - 2.0 * t * t + 0.5 * t * t * t; };
    auto df = [](double t) { return 1.0 - 4.0 * t + 1.5 * t * t; };
    const auto p = RadialProfile::from_function(a, f, df);
    const auto r = resample(p, b);
    for (std::size_t i = 0; i < b.size(); ++i)
        CHECK(r.v[i] == doctest::Approx(f(b.node(i))).epsilon(1e-12));
}

TEST_CASE("profile CSV layout") {
    const auto p = RadialProfile::from_function(ThetaGrid(66), [](double t) { return std::cos(t); });
    std::ostringstream os;
    write_profile_csv(os, p);
    const std::string s = os.str();
    CHECK(s.rfind("theta,v,dv\n", 0) == 0);
    CHECK(std::count(s.begin(), s.end(), '\n') == 67);
    CHECK(s.find('\r') == std::string::npos);
}

TEST_CASE("odd power") {
    CHECK(odd_power(-2.0, 3.0) == doctest::Approx(-8.0));
    CHECK(odd_power(4.0, 1.5) == doctest::Approx(8.0));
    CHECK(odd_power(0.0, 2.0) == 0.0);
}

}
