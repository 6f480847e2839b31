#include "bsing/sphere_ode.hpp"

#include "bsing/errors.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numbers>
#include <ostream>

namespace bsing {

ThetaGrid::ThetaGrid(std::size_t nodes) : n_(nodes), h_(0.0) {
    if (nodes < kMinInteriorNodes + 2)
        throw DomainError("theta grid needs at least 64 interior nodes");
    h_ = kHalfPi / static_cast<double>(nodes - 1);
}

std::vector<double> ThetaGrid::nodes() const {
    std::vector<double> out(n_);
    for (std::size_t i = 0; i < n_; ++i)
        out[i] = node(i);
    return out;
}

double RadialProfile::max_abs() const {
    double m = 0.0;
    for (double x : v)
        m = std::max(m, std::abs(x));
    return m;
}

RadialProfile RadialProfile::from_function(ThetaGrid g, const std::function<double(double)>& f,
                                           const std::function<double(double)>& df) {
    RadialProfile p(g);
    for (std::size_t i = 0; i < g.size(); ++i) {
        const double th = g.node(i);
        p.v[i] = f(th);
        p.dv[i] = df ? df(th) : 0.0;
    }
    return p;
}

RadialProfile operator*(double c, const RadialProfile& p) {
    RadialProfile out = p;
    for (auto& x : out.v)
        x *= c;
    for (auto& x : out.dv)
        x *= c;
    return out;
}

double odd_power(double v, double q) {
    if (v == 0.0)
        return 0.0;
    const double m = std::pow(std::abs(v), q);
    return v > 0.0 ? m : -m;
}

double IvpResult::event_angle() const {
    return first_zero ? *first_zero : std::numeric_limits<double>::infinity();
}

double PoleSeries::value(double theta) const {
    const double t2 = theta * theta;
    double s = 0.0;
    for (std::size_t k = kTerms; k-- > 0;)
        s = s * t2 + c[k];
    return s;
}

double PoleSeries::derivative(double theta) const {
    const double t2 = theta * theta;
    double s = 0.0;
    for (std::size_t k = kTerms; k-- > 1;)
        s = s * t2 + 2.0 * static_cast<double>(k) * c[k];
    return s * theta;
}

PoleSeries pole_series(const ProblemParams& params, double amplitude, bool nonlinear) {
    // cot θ = 1/θ - Σ_{k>=1} b_k θ^{2k-1}
    static constexpr std::array<double, PoleSeries::kTerms> b = {
        0.0,           1.0 / 3.0,         1.0 / 45.0,           2.0 / 945.0,
        1.0 / 4725.0,  2.0 / 93555.0,     1382.0 / 638512875.0, 4.0 / 18243225.0};
    const int N = params.N;
    const double q = params.q;
    PoleSeries s;
    auto& c = s.c;
    // u = v^q as a series in θ², by the J.C.P. Miller recurrence
    std::array<double, PoleSeries::kTerms> u{};
    c[0] = amplitude;
    if (nonlinear)
        u[0] = std::pow(amplitude, q);
    for (std::size_t m = 0; m + 1 < PoleSeries::kTerms; ++m) {
        if (nonlinear && m > 0) {
            double acc = 0.0;
            for (std::size_t j = 1; j <= m; ++j)
                acc += ((q + 1.0) * static_cast<double>(j) - static_cast<double>(m)) * c[j] * u[m - j];
            u[m] = acc / (static_cast<double>(m) * c[0]);
        }
        double rhs = -params.lambda * c[m] - u[m];
        for (std::size_t j = 1; j <= m; ++j)
            rhs += (N - 2) * 2.0 * static_cast<double>(j) * c[j] * b[m + 1 - j];
        c[m + 1] = rhs / ((2.0 * m + 2.0) * (2.0 * m + N - 1.0));
    }
    return s;
}

namespace {

struct State {
    double v;
    double p;
};

class MeridianRhs {
public:
    MeridianRhs(const ProblemParams& params, bool nonlinear)
        : nm2_(params.N - 2), lambda_(params.lambda), q_(params.q), nonlinear_(nonlinear) {}

    State operator()(double theta, const State& y) const {
        double force = lambda_ * y.v;
        if (nonlinear_)
            force += odd_power(y.v, q_);
        const double cot = std::cos(theta) / std::sin(theta);
        return {y.p, -nm2_ * cot * y.p - force};
    }

    /// Local oscillation frequency of the linearization.
    double frequency(double v) const {
        double k = std::abs(lambda_);
        if (nonlinear_)
            k += q_ * std::pow(std::abs(v), q_ - 1.0);
        return std::sqrt(k);
    }

private:
    double nm2_;
    double lambda_;
    double q_;
    bool nonlinear_;
};

State rk4_step(const MeridianRhs& f, double theta, const State& y, double h) {
    const State k1 = f(theta, y);
    const State k2 = f(theta + 0.5 * h, {y.v + 0.5 * h * k1.v, y.p + 0.5 * h * k1.p});
    const State k3 = f(theta + 0.5 * h, {y.v + 0.5 * h * k2.v, y.p + 0.5 * h * k2.p});
    const State k4 = f(theta + h, {y.v + h * k3.v, y.p + h * k3.p});
    return {y.v + h / 6.0 * (k1.v + 2.0 * k2.v + 2.0 * k3.v + k4.v),
            y.p + h / 6.0 * (k1.p + 2.0 * k2.p + 2.0 * k3.p + k4.p)};
}

// θ as a cubic Hermite function of v through (v0, θ0, 1/p0), (v1, θ1, 1/p1),
// evaluated at v = 0.
double inverse_hermite_zero(double th0, const State& y0, double th1, const State& y1) {
    const double linear = th0 + (th1 - th0) * y0.v / (y0.v - y1.v);
    if (!(y0.p < 0.0 && y1.p < 0.0))
        return linear;
    const double H = y1.v - y0.v;
    const double s = -y0.v / H;
    const double s2 = s * s;
    const double s3 = s2 * s;
    const double h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
    const double h10 = s3 - 2.0 * s2 + s;
    const double h01 = -2.0 * s3 + 3.0 * s2;
    const double h11 = s3 - s2;
    const double th = h00 * th0 + h10 * H / y0.p + h01 * th1 + h11 * H / y1.p;
    if (!(th >= th0 && th <= th1))
        return linear;
    return th;
}

} // namespace

IvpResult integrate_ivp(const ProblemParams& params, double amplitude, const ThetaGrid& grid,
                        const OdeOptions& options) {
    params.validate();
    if (!(amplitude > 0.0) || !std::isfinite(amplitude))
        throw DomainError("shooting amplitude must be a finite positive number");

    const MeridianRhs rhs(params, options.nonlinear);
    const PoleSeries series = pole_series(params, amplitude, options.nonlinear);
    const std::size_t n = grid.size();
    const double h = grid.spacing();

    IvpResult out;
    out.profile = RadialProfile(grid);
    auto& v = out.profile.v;
    auto& dv = out.profile.dv;

    double theta = options.pole_factor * h;
    const double k0 = rhs.frequency(amplitude);
    const bool fine_start = k0 * theta > options.series_scale;
    if (fine_start)
        theta = options.series_scale / k0;

    std::size_t i = 0;
    while (i < n && grid.node(i) <= theta) {
        v[i] = series.value(grid.node(i));
        dv[i] = series.derivative(grid.node(i));
        ++i;
    }
    out.reached = i;
    State y{series.value(theta), series.derivative(theta)};

    const double thr = options.blowup_threshold;
    for (; i < n; ++i) {
        const double target = grid.node(i);
        while (theta < target) {
            const double remaining = target - theta;
            // theta + h can land an ulp short of the node
            if (remaining <= options.min_substep) {
                theta = target;
                break;
            }
            double hs = std::min(h, options.freq_fraction / rhs.frequency(y.v));
            if (fine_start)
                hs = std::min(hs, options.geom_fraction * theta);
            if (hs >= remaining * (1.0 - 1e-12))
                hs = remaining;
            if (hs < options.min_substep) {
                out.blowup = true;
                out.blowup_angle = theta;
                return out;
            }
            const State next = rk4_step(rhs, theta, y, hs);
            const double next_theta = hs == remaining ? target : theta + hs;
            if (std::isnan(next.v) || std::isnan(next.p))
                throw NumericalFault("NaN in meridian integration at theta = " + std::to_string(theta));
            if (std::abs(next.v) > thr || std::abs(next.p) > thr) {
                out.blowup = true;
                out.blowup_angle = next_theta;
                return out;
            }
            if (!out.first_zero && y.v >= 0.0 && next.v < 0.0)
                out.first_zero = inverse_hermite_zero(theta, y, next_theta, next);
            y = next;
            theta = next_theta;
        }
        v[i] = y.v;
        dv[i] = y.p;
        out.reached = i + 1;
        if (out.first_zero)
            break;
    }
    return out;
}

double sphere_area(int n) {
    const double k = 0.5 * (n + 1);
    return 2.0 * std::pow(std::numbers::pi, k) / std::tgamma(k);
}

double simpson(std::span<const double> f, double h) {
    const std::size_t n = f.size();
    if (n < 2)
        return 0.0;
    const std::size_t m = n - 1;
    if (m == 1)
        return 0.5 * h * (f[0] + f[1]);
    std::size_t simpson_end = m;
    double tail = 0.0;
    if (m % 2 == 1) {
        simpson_end = m - 3;
        const std::size_t j = simpson_end;
        tail = 3.0 * h / 8.0 * (f[j] + 3.0 * f[j + 1] + 3.0 * f[j + 2] + f[j + 3]);
    }
    double s = 0.0;
    for (std::size_t j = 0; j + 2 <= simpson_end; j += 2)
        s += f[j] + 4.0 * f[j + 1] + f[j + 2];
    return h / 3.0 * s + tail;
}

double weighted_integral(const ThetaGrid& grid, std::span<const double> f, int weight_exponent) {
    if (f.size() != grid.size())
        throw DomainError("integrand size does not match the theta grid");
    std::vector<double> g(f.size());
    for (std::size_t i = 0; i < g.size(); ++i) {
        const double s = std::sin(grid.node(i));
        g[i] = f[i] * (weight_exponent == 0 ? 1.0 : std::pow(s, weight_exponent));
    }
    return simpson(g, grid.spacing());
}

double sphere_integral(const ThetaGrid& grid, int N, std::span<const double> f) {
    return sphere_area(N - 2) * weighted_integral(grid, f, N - 2);
}

double sphere_integral(const RadialProfile& profile, int N,
                       const std::function<double(double, double, double)>& extra) {
    std::vector<double> f(profile.size());
    for (std::size_t i = 0; i < f.size(); ++i)
        f[i] = extra(profile.grid.node(i), profile.v[i], profile.dv[i]);
    return sphere_integral(profile.grid, N, f);
}

double ode_residual(const RadialProfile& profile, const ProblemParams& params, bool nonlinear) {
    const auto& g = profile.grid;
    const double h = g.spacing();
    const auto& v = profile.v;
    double worst = 0.0;
    for (std::size_t j = 1; j + 1 < g.size(); ++j) {
        const double th = g.node(j);
        if (th <= 4.0 * h)
            continue;
        const double d2 = (v[j + 1] - 2.0 * v[j] + v[j - 1]) / (h * h);
        const double d1 = (v[j + 1] - v[j - 1]) / (2.0 * h);
        double r = d2 + (params.N - 2) * std::cos(th) / std::sin(th) * d1 + params.lambda * v[j];
        if (nonlinear)
            r += odd_power(v[j], params.q);
        worst = std::max(worst, std::abs(r));
    }
    return worst;
}

RadialProfile resample(const RadialProfile& profile, const ThetaGrid& target) {
    const auto& src = profile.grid;
    const double h = src.spacing();
    RadialProfile out(target);
    for (std::size_t i = 0; i < target.size(); ++i) {
        const double th = target.node(i);
        std::size_t k = std::min(static_cast<std::size_t>(th / h), src.size() - 2);
        const double x0 = src.node(k);
        const double s = (th - x0) / h;
        const double s2 = s * s;
        const double s3 = s2 * s;
        const double y0 = profile.v[k], y1 = profile.v[k + 1];
        const double m0 = profile.dv[k] * h, m1 = profile.dv[k + 1] * h;
        out.v[i] = (2 * s3 - 3 * s2 + 1) * y0 + (s3 - 2 * s2 + s) * m0 + (-2 * s3 + 3 * s2) * y1 +
                   (s3 - s2) * m1;
        out.dv[i] = ((6 * s2 - 6 * s) * y0 + (3 * s2 - 4 * s + 1) * m0 + (-6 * s2 + 6 * s) * y1 +
                     (3 * s2 - 2 * s) * m1) /
                    h;
    }
    return out;
}

void write_profile_csv(std::ostream& os, const RadialProfile& profile) {
    const auto old = os.precision(17);
    os << "theta,v,dv\n";
    for (std::size_t i = 0; i < profile.size(); ++i)
        os << profile.grid.node(i) << ',' << profile.v[i] << ',' << profile.dv[i] << '\n';
    os.precision(old);
}

} // namespace bsing
