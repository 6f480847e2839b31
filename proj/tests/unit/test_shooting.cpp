#include "../oracle.hpp"

#include "bsing/errors.hpp"
#include "bsing/exponents.hpp"
#include "bsing/shooting.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>

using namespace bsing;

namespace {

ShootingConfig tight(std::size_t nodes = ThetaGrid::kDefaultNodes) {
    ShootingConfig c;
    c.grid = ThetaGrid(nodes);
    c.tol = 1e-14;
    c.bracket_rel = 1e-15;
    return c;
}

void check_certificate(const ShootingOutcome& r, const ShootingConfig& c) {
    REQUIRE(r.status == ShootStatus::Solution);
    REQUIRE(r.amplitude);
    REQUIRE(r.profile);
    const auto& p = *r.profile;
    for (std::size_t i = 0; i + 1 < p.size(); ++i)
        REQUIRE(p.v[i] > 0.0);
    CHECK(std::abs(p.v.back()) <= c.tol);
    CHECK(r.boundary_residual <= c.tol);
    CHECK(std::abs(*r.amplitude - p.v[0]) <= c.tol);
    CHECK(std::abs(p.dv[0]) <= 1e-12);
    CHECK(r.bracket_width <= c.bracket_rel * *r.amplitude);
}

}  // namespace

TEST_SUITE("shooting") {

TEST_CASE("amplitudes match the independent reference") {
    struct Case {
        ProblemParams p;
        double a;
    };
    for (const Case& c : {Case{{4, 2.0, 0.0}, oracle::a_star_4_2}, Case{{5, 2.0, -2.0}, oracle::a_star_5_2},
                          Case{{4, 2.5, 0.0}, oracle::a_star_4_2p5}}) {
        CAPTURE(c.p.N);
        CAPTURE(c.p.q);
        const ShootingConfig cfg;
        const auto r = solve_positive(c.p, cfg);
        check_certificate(r, cfg);
        CHECK(*r.amplitude == doctest::Approx(c.a).epsilon(1e-8));
    }
}

TEST_CASE("in-test RK4 bisection agrees with the library") {
    const double a = oracle::amplitude(4, 2.0, 0.0, 4.0, 6.0);
    CHECK(a == doctest::Approx(oracle::a_star_4_2).epsilon(1e-8));
}

TEST_CASE("nonexistence at q3 and q1 with lambda = ell") {
    for (double q : {5.0, 5.0 / 3.0}) {
        CAPTURE(q);
        const auto r = solve_positive({4, q, ell(4, q)});
        CHECK(r.status == ShootStatus::NonexistenceCertified);
        CHECK_FALSE(r.amplitude);
        REQUIRE(r.scan_log.size() == 400);
        CHECK(r.scan_log.front().amplitude == doctest::Approx(1e-4));
        CHECK(r.scan_log.back().amplitude == doctest::Approx(1e4));
        // no admissible-to-inadmissible switch anywhere
        for (std::size_t i = 0; i + 1 < r.scan_log.size(); ++i)
            CHECK(r.scan_log[i].admissible_side() == r.scan_log[i + 1].admissible_side());
    }
}

TEST_CASE("scan log is sorted and covers the range") {
    ShootingConfig c;
    c.samples = 50;
    c.grid = ThetaGrid(512);
    const auto log = amplitude_scan({4, 2.0, 0.0}, c);
    REQUIRE(log.size() == 50);
    CHECK(log.front().amplitude == 1e-4);
    CHECK(log.back().amplitude == 1e4);
    for (std::size_t i = 1; i < log.size(); ++i)
        CHECK(log[i].amplitude > log[i - 1].amplitude);
}

TEST_CASE("scan is independent of the worker count") {
    ShootingConfig a, b;
    a.workers = 1;
    b.workers = 7;
    a.grid = b.grid = ThetaGrid(1024);
    const auto ra = solve_positive({4, 3.0, ell(4, 3.0)}, a);
    const auto rb = solve_positive({4, 3.0, ell(4, 3.0)}, b);
    REQUIRE(ra.amplitude);
    REQUIRE(rb.amplitude);
    CHECK(*ra.amplitude == *rb.amplitude);
    CHECK(ra.profile->v == rb.profile->v);
}

TEST_CASE("omega0 examples") {
    const auto w = omega0(4, 2.0);
    // interior maximum sits at the pole
    const auto top = std::max_element(w.v.begin(), w.v.end());
    CHECK(top == w.v.begin());
    CHECK(w.dv[0] == 0.0);
    CHECK_NOTHROW(omega0(4, 3.5));
    CHECK_THROWS_AS(omega0(4, 5.0), DomainError);
    CHECK_THROWS_AS(omega0(4, 5.0 / 3.0), DomainError);
}

TEST_CASE("multiplicity examples") {
    ShootingConfig c;
    CHECK(multiplicity_probe({4, 2.0, 0.0}, c).count == 1);
    CHECK(multiplicity_probe({4, 2.0, 3.5}, c).count == 0);
    CHECK(multiplicity_probe({4, 5.0, -0.75}, c).count == 0);
}

TEST_CASE("existence scan examples") {
    const auto rows = existence_scan(4, {1.2, 2.0, 5.0}, LambdaRule::ell());
    REQUIRE(rows.size() == 3);
    CHECK(rows[0].observed == ShootStatus::NonexistenceCertified);
    CHECK(rows[1].observed == ShootStatus::Solution);
    CHECK(rows[2].observed == ShootStatus::NonexistenceCertified);
    CHECK(rows[0].predicted == Regime::SubcriticalNoSolution);
    CHECK(rows[2].predicted == Regime::SupercriticalNoSolution);
    CHECK(existence_scan(4, {}, LambdaRule::ell()).empty());
    const auto fixed = existence_scan(4, {2.0}, LambdaRule::fixed(0.0));
    REQUIRE(fixed.size() == 1);
    CHECK(fixed[0].observed == ShootStatus::Solution);
    CHECK(*fixed[0].amplitude == doctest::Approx(oracle::a_star_4_2).epsilon(1e-8));
}

TEST_CASE("row failures are recorded, not thrown") {
    const auto rows = existence_scan(4, {0.5, 2.0}, LambdaRule::ell());
    REQUIRE(rows.size() == 2);
    CHECK_FALSE(rows[0].error.empty());
    CHECK(rows[1].observed == ShootStatus::Solution);
}

TEST_CASE("bisection certificate at tight tolerance") {
    const auto c = tight();
    check_certificate(solve_positive({4, 2.0, 0.0}, c), c);
}

TEST_CASE("amplitude is stable under grid refinement at fourth order") {
    const ProblemParams p{4, 2.0, 0.0};
    double prev = 0.0, prev_diff = 0.0;
    for (std::size_t n : {129u, 257u, 513u}) {
        const auto r = solve_positive(p, tight(n));
        REQUIRE(r.amplitude);
        if (prev > 0.0) {
            const double h = kHalfPi / static_cast<double>(n - 1);
            const double diff = std::abs(*r.amplitude - prev);
            CHECK(diff <= 16.0 * std::pow(h, 4) * *r.amplitude);
            if (prev_diff > 0.0)
                CHECK(prev_diff / diff >= 10.0);
            prev_diff = diff;
        }
        prev = *r.amplitude;
    }
}

TEST_CASE("no admissible shot once lambda reaches the first eigenvalue") {
    ShootingConfig c;
    c.samples = 120;
    c.grid = ThetaGrid(1024);
    auto positive_shots = [](const ShootingOutcome& r) {
        return std::count_if(r.scan_log.begin(), r.scan_log.end(),
                             [](const ScanRecord& s) { return s.event == ShotEvent::Positive; });
    };
    // at λ = N-1 exactly the obstruction is of size a^q, lost to roundoff
    // for small shots once q is large; above it the scan is clean
    for (double q : {1.5, 2.0, 3.0}) {
        const auto r = solve_positive({4, q, 3.0}, c);
        CHECK(r.status == ShootStatus::NonexistenceCertified);
        CHECK(positive_shots(r) == 0);
    }
    for (double q : {1.5, 2.0, 3.0, 4.9, 6.0})
        for (double lambda : {3.01, 3.5, 6.0}) {
            CAPTURE(q);
            CAPTURE(lambda);
            const auto r = solve_positive({4, q, lambda}, c);
            CHECK(positive_shots(r) == 0);
            if (q < 5.0)
                CHECK(r.status == ShootStatus::NonexistenceCertified);
        }
}

TEST_CASE("invalid scan configuration") {
    ShootingConfig c;
    c.scan_min = 10.0;
    c.scan_max = 1.0;
    CHECK_THROWS_AS(solve_positive({4, 2.0, 0.0}, c), DomainError);
}

TEST_CASE("status and event names") {
    CHECK(to_string(ShootStatus::NonexistenceCertified) == "NonexistenceCertified");
    CHECK(to_string(ShotEvent::Blowup) == "blowup");
}

}
