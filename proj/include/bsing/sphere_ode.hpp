#pragma once

#include "bsing/exponents.hpp"

#include <array>
#include <cstddef>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <vector>

namespace bsing {

inline constexpr double kHalfPi = 1.57079632679489661923;

/// Uniform grid on the meridian [0, π/2]; node 0 is the pole, the last node
/// the equator.
class ThetaGrid {
public:
    static constexpr std::size_t kMinInteriorNodes = 64;
    static constexpr std::size_t kDefaultNodes = 4096;

    ThetaGrid() : ThetaGrid(kDefaultNodes) {}
    explicit ThetaGrid(std::size_t nodes);

    std::size_t size() const { return n_; }
    double spacing() const { return h_; }
    /// Exact endpoints: node(0) == 0 and node(size()-1) == π/2.
    double node(std::size_t i) const { return i + 1 == n_ ? kHalfPi : static_cast<double>(i) * h_; }
    std::vector<double> nodes() const;

    friend bool operator==(const ThetaGrid& a, const ThetaGrid& b) { return a.n_ == b.n_; }

private:
    std::size_t n_;
    double h_;
};

/// θ ↦ (v, v') sampled on a ThetaGrid.
struct RadialProfile {
    ThetaGrid grid;
    std::vector<double> v;
    std::vector<double> dv;

    RadialProfile() = default;
    explicit RadialProfile(ThetaGrid g) : grid(g), v(g.size(), 0.0), dv(g.size(), 0.0) {}

    std::size_t size() const { return v.size(); }
    double max_abs() const;
    /// Evaluates f(θ, v, v') nodewise into a new profile (derivative left 0).
    static RadialProfile from_function(ThetaGrid g, const std::function<double(double)>& f,
                                       const std::function<double(double)>& df = {});
};

RadialProfile operator*(double c, const RadialProfile& p);

/// Integrator knobs.  Defaults follow the documented design values.
struct OdeOptions {
    /// When false the v^q term is dropped (probe mode for linear oracles).
    bool nonlinear = true;
    /// |v| or |v'| beyond this marks the shot as blown up.
    double blowup_threshold = 1e12;
    /// Regular series is used on [0, pole_factor·h].
    double pole_factor = 10.0;
    /// The series start is pulled below pole_factor·h when θ·κ(a) would
    /// exceed this, κ(a) = sqrt(|λ| + q a^{q-1}) being the local frequency.
    double series_scale = 0.3;
    /// Substeps never exceed freq_fraction / κ(v).  Resolved shots never hit
    /// this, so for them the scheme is plain fixed-step RK4 on the grid.
    double freq_fraction = 0.05;
    /// For shots whose series start had to be pulled in (large amplitude,
    /// profile living far below the grid scale) substeps are also limited
    /// to geom_fraction·θ until they reach h.
    double geom_fraction = 0.02;
    /// Substep sizes below this count as step-size underflow (→ blowup).
    double min_substep = 1e-15;
};

struct IvpResult {
    RadialProfile profile;
    /// Number of leading nodes holding integrated values; nodes past it are 0.
    std::size_t reached = 0;
    std::optional<double> first_zero;
    bool blowup = false;
    std::optional<double> blowup_angle;

    /// +∞ when no zero occurred before π/2 (including blowup), else θ*.
    double event_angle() const;
    /// True when the shot stays nonnegative up to and including π/2.
    bool positive() const { return !first_zero && !blowup; }
};

/// Regular expansion v = Σ c_k θ^{2k} about the pole, the branch selected by
/// v'(0) = 0.  c_0 is the amplitude, c_1 = -(λa + a^q)/(2(N-1)).
struct PoleSeries {
    static constexpr std::size_t kTerms = 8;
    std::array<double, kTerms> c{};

    double value(double theta) const;
    double derivative(double theta) const;
};

PoleSeries pole_series(const ProblemParams& params, double amplitude, bool nonlinear = true);

/// Integrates v'' + (N-2) cot θ v' + λ v + |v|^{q-1} v = 0 from v(0) = a,
/// v'(0) = 0.  Stops at the first sign change, at blowup, or at π/2.
IvpResult integrate_ivp(const ProblemParams& params, double amplitude, const ThetaGrid& grid,
                        const OdeOptions& options = {});

/// |S^n|, the surface measure of the unit n-sphere in R^{n+1}.
double sphere_area(int n);

/// ∫_0^{π/2} f(θ) sin^k θ dθ by composite Simpson; with an odd number of
/// intervals the last three use the 3/8 rule.
double weighted_integral(const ThetaGrid& grid, std::span<const double> f, int weight_exponent);

/// Plain composite Simpson (3/8 closure) on uniformly spaced samples.
double simpson(std::span<const double> f, double h);

/// |S^{N-2}| ∫_0^{π/2} f(θ) sin^{N-2} θ dθ: the integral over S^{N-1}_+ of an
/// axisymmetric function.
double sphere_integral(const ThetaGrid& grid, int N, std::span<const double> f);

/// Same, with f(θ) = extra(θ, v, v') built from a profile.
double sphere_integral(const RadialProfile& profile, int N,
                       const std::function<double(double, double, double)>& extra);

/// max |v'' + (N-2) cot θ v' + λ v + v^q| over interior nodes with θ > 4h,
/// by centered differences of the sampled v.
double ode_residual(const RadialProfile& profile, const ProblemParams& params, bool nonlinear = true);

/// Cubic Hermite resampling of a profile onto another grid.
RadialProfile resample(const RadialProfile& profile, const ThetaGrid& target);

/// CSV with header `theta,v,dv`.
void write_profile_csv(std::ostream& os, const RadialProfile& profile);

/// |v|^{q-1} v, the odd extension of v^q used whenever v may dip below 0.
double odd_power(double v, double q);

} // namespace bsing
