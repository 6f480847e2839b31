#include "bsing/shooting.hpp"

#include "bsing/errors.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace bsing {

std::string_view to_string(ShootStatus s) {
    switch (s) {
    case ShootStatus::Solution: return "Solution";
    case ShootStatus::NonexistenceCertified: return "NonexistenceCertified";
    case ShootStatus::Inconclusive: return "Inconclusive";
    }
    return "?";
}

std::string_view to_string(ShotEvent e) {
    switch (e) {
    case ShotEvent::Positive: return "positive";
    case ShotEvent::Zero: return "zero";
    case ShotEvent::Blowup: return "blowup";
    }
    return "?";
}

namespace {

ScanRecord shoot(const ProblemParams& params, double a, const ShootingConfig& config) {
    const IvpResult r = integrate_ivp(params, a, config.grid, config.ode);
    ScanRecord rec;
    rec.amplitude = a;
    rec.theta_star = r.event_angle();
    if (r.first_zero)
        rec.event = ShotEvent::Zero;
    else if (r.blowup)
        rec.event = ShotEvent::Blowup;
    else {
        rec.event = ShotEvent::Positive;
        rec.end_value = r.profile.v.back();
    }
    return rec;
}

void validate_config(const ShootingConfig& c) {
    if (!(c.scan_min > 0.0) || !(c.scan_max > c.scan_min))
        throw DomainError("scan range must satisfy 0 < scan_min < scan_max");
    if (c.samples < 2)
        throw DomainError("amplitude scan needs at least two samples");
    if (!(c.tol > 0.0) || !(c.bracket_rel > 0.0))
        throw DomainError("shooting tolerances must be positive");
}

// Indices i with log[i] and log[i+1] on opposite sides of the event.
std::vector<std::size_t> sign_switches(const std::vector<ScanRecord>& log) {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i + 1 < log.size(); ++i)
        if (log[i].admissible_side() != log[i + 1].admissible_side())
            out.push_back(i);
    return out;
}

struct BisectionResult {
    bool converged = false;
    double amplitude = 0.0;
    double width = 0.0;
    double boundary_residual = std::numeric_limits<double>::infinity();
    std::string note;
};

// Shrinks [lo, hi] around the switch; the admissible endpoint is kept as the
// candidate so the returned amplitude always gives a shot positive up to π/2.
BisectionResult bisect(const ProblemParams& params, ScanRecord lo, ScanRecord hi,
                       const ShootingConfig& config) {
    ScanRecord good = lo.admissible_side() ? lo : hi;
    ScanRecord bad = lo.admissible_side() ? hi : lo;
    BisectionResult out;
    for (int it = 0; it < 400; ++it) {
        const double width = std::abs(good.amplitude - bad.amplitude);
        const double scale = std::min(good.amplitude, bad.amplitude);
        if (width <= config.bracket_rel * scale && good.event == ShotEvent::Positive &&
            std::abs(good.end_value) <= config.tol)
            break;
        const double mid = 0.5 * (good.amplitude + bad.amplitude);
        if (mid == good.amplitude || mid == bad.amplitude)
            break;
        const ScanRecord m = shoot(params, mid, config);
        (m.admissible_side() ? good : bad) = m;
    }
    out.amplitude = good.amplitude;
    out.width = std::abs(good.amplitude - bad.amplitude);
    if (good.event != ShotEvent::Positive) {
        out.note = "admissible side of the bracket blew up";
        return out;
    }
    out.boundary_residual = std::abs(good.end_value);
    out.converged = out.boundary_residual <= config.tol &&
                    out.width <= config.bracket_rel * std::min(good.amplitude, bad.amplitude);
    if (!out.converged) {
        std::ostringstream os;
        os.precision(17);
        os << "bracket at a = " << good.amplitude << " did not reach |v(pi/2)| <= " << config.tol
           << " (got " << out.boundary_residual << ", width " << out.width << ")";
        out.note = os.str();
    }
    return out;
}

bool positive_interior(const RadialProfile& p) {
    for (std::size_t i = 0; i + 1 < p.size(); ++i)
        if (!(p.v[i] > 0.0))
            return false;
    return true;
}

} // namespace

std::vector<ScanRecord> amplitude_scan(const ProblemParams& params, const ShootingConfig& config) {
    params.validate();
    validate_config(config);
    const std::size_t n = config.samples;
    std::vector<ScanRecord> log(n);
    const double l0 = std::log(config.scan_min);
    const double l1 = std::log(config.scan_max);
    parallel_for(n, config.workers, [&](std::size_t i) {
        double a = i + 1 == n ? config.scan_max
                              : std::exp(l0 + (l1 - l0) * static_cast<double>(i) / (n - 1));
        if (i == 0)
            a = config.scan_min;
        log[i] = shoot(params, a, config);
    });
    std::sort(log.begin(), log.end(),
              [](const ScanRecord& x, const ScanRecord& y) { return x.amplitude < y.amplitude; });
    return log;
}

ShootingOutcome solve_positive(const ProblemParams& params, const ShootingConfig& config) {
    ShootingOutcome out;
    out.scan_log = amplitude_scan(params, config);
    const auto switches = sign_switches(out.scan_log);

    if (switches.empty()) {
        out.status = ShootStatus::NonexistenceCertified;
        std::ostringstream os;
        os << "no sign change of theta*(a) - pi/2 over " << out.scan_log.size() << " amplitudes in ["
           << config.scan_min << ", " << config.scan_max << "]";
        out.diagnostic = os.str();
        return out;
    }
    if (switches.size() > 1) {
        out.status = ShootStatus::Inconclusive;
        std::ostringstream os;
        os.precision(17);
        os << "event function changes sign " << switches.size() << " times, near a =";
        for (std::size_t i : switches)
            os << ' ' << out.scan_log[i].amplitude;
        out.diagnostic = os.str();
        return out;
    }

    const std::size_t i = switches.front();
    const BisectionResult b = bisect(params, out.scan_log[i], out.scan_log[i + 1], config);
    out.bracket_width = b.width;
    out.boundary_residual = b.boundary_residual;
    if (!b.converged) {
        out.status = ShootStatus::Inconclusive;
        out.diagnostic = b.note;
        return out;
    }

    IvpResult shot = integrate_ivp(params, b.amplitude, config.grid, config.ode);
    if (!shot.positive() || !positive_interior(shot.profile)) {
        out.status = ShootStatus::Inconclusive;
        out.diagnostic = "re-integrated profile is not positive on (0, pi/2)";
        return out;
    }
    out.status = ShootStatus::Solution;
    out.amplitude = b.amplitude;
    out.boundary_residual = std::abs(shot.profile.v.back());
    out.profile = std::move(shot.profile);
    return out;
}

RadialProfile omega0(int N, double q, const ShootingConfig& config) {
    if (classify_regime(N, q) != Regime::UniqueSolution) {
        const CriticalSet c = critical_exponents(N);
        std::ostringstream os;
        os.precision(17);
        os << "omega0 requires q1 < q < q3 (q1 = " << c.q1 << ", q3 = " << c.q3 << ", q = " << q << ")";
        throw DomainError(os.str());
    }
    const ProblemParams params{N, q, ell(N, q)};
    ShootingOutcome r = solve_positive(params, config);
    if (r.status != ShootStatus::Solution)
        throw ConvergenceError("shooting for omega0 returned " + std::string(to_string(r.status)) +
                               ": " + r.diagnostic);
    return std::move(*r.profile);
}

MultiplicityReport multiplicity_probe(const ProblemParams& params, const ShootingConfig& config) {
    MultiplicityReport rep;
    rep.scan_log = amplitude_scan(params, config);
    std::vector<RadialProfile> found;
    for (std::size_t i : sign_switches(rep.scan_log)) {
        const BisectionResult b = bisect(params, rep.scan_log[i], rep.scan_log[i + 1], config);
        if (!b.converged) {
            ++rep.inconclusive;
            continue;
        }
        IvpResult shot = integrate_ivp(params, b.amplitude, config.grid, config.ode);
        if (!shot.positive() || !positive_interior(shot.profile)) {
            ++rep.inconclusive;
            continue;
        }
        bool duplicate = false;
        for (std::size_t k = 0; k < found.size(); ++k) {
            double diff = 0.0;
            for (std::size_t j = 0; j < found[k].size(); ++j)
                diff = std::max(diff, std::abs(found[k].v[j] - shot.profile.v[j]));
            const bool same_amplitude =
                std::abs(rep.amplitudes[k] - b.amplitude) <= 1e-8 * std::max(1.0, b.amplitude);
            if (diff <= 1e-6 || same_amplitude) {
                duplicate = true;
                break;
            }
        }
        if (duplicate)
            continue;
        rep.amplitudes.push_back(b.amplitude);
        found.push_back(std::move(shot.profile));
    }
    rep.count = static_cast<int>(found.size());
    return rep;
}

std::vector<ExistenceRow> existence_scan(int N, const std::vector<double>& q_grid, LambdaRule rule,
                                         const ShootingConfig& config) {
    std::vector<ExistenceRow> rows;
    rows.reserve(q_grid.size());
    for (double q : q_grid) {
        ExistenceRow row;
        row.q = q;
        try {
            row.predicted = classify_regime(N, q);
            row.lambda = rule.use_ell ? ell(N, q) : rule.value;
            ShootingOutcome r = solve_positive({N, q, row.lambda}, config);
            row.observed = r.status;
            row.amplitude = r.amplitude;
            row.residual = r.boundary_residual;
            if (r.status == ShootStatus::Inconclusive)
                row.error = r.diagnostic;
        } catch (const std::exception& e) {
            row.observed = ShootStatus::Inconclusive;
            row.error = e.what();
        }
        rows.push_back(std::move(row));
    }
    return rows;
}

} // namespace bsing
