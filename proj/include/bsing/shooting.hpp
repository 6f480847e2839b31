#pragma once

#include "bsing/exponents.hpp"
#include "bsing/parallel.hpp"
#include "bsing/sphere_ode.hpp"

#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace bsing {

enum class ShootStatus { Solution, NonexistenceCertified, Inconclusive };
enum class ShotEvent { Positive, Zero, Blowup };

std::string_view to_string(ShootStatus s);
std::string_view to_string(ShotEvent e);

struct ScanRecord {
    double amplitude = 0.0;
    ShotEvent event = ShotEvent::Positive;
    /// First zero, +∞ when the shot reached π/2 positively or blew up.
    double theta_star = 0.0;
    /// v(π/2) for positive shots, 0 otherwise.
    double end_value = 0.0;

    /// Sign of e(a) = θ*(a) - π/2.
    bool admissible_side() const { return event != ShotEvent::Zero; }
};

struct ShootingConfig {
    double scan_min = 1e-4;
    double scan_max = 1e4;
    std::size_t samples = 400;
    /// Required |v(π/2)| at the returned amplitude.
    double tol = 1e-8;
    /// Bisection stops once the bracket is narrower than this times a*.
    double bracket_rel = 1e-10;
    ThetaGrid grid{ThetaGrid::kDefaultNodes};
    OdeOptions ode;
    unsigned workers = default_workers();
};

/// Result of solving the two-point problem  v'(0) = 0, v(π/2) = 0.
///
/// NonexistenceCertified is a numerical statement relative to the scanned
/// amplitude range and resolution, not a proof.
struct ShootingOutcome {
    ShootStatus status = ShootStatus::Inconclusive;
    std::optional<double> amplitude;
    std::optional<RadialProfile> profile;
    double boundary_residual = 0.0;
    double bracket_width = 0.0;
    std::vector<ScanRecord> scan_log;
    std::string diagnostic;
};

/// Logarithmically spaced amplitudes over [scan_min, scan_max], one shot
/// each, sorted by amplitude.
std::vector<ScanRecord> amplitude_scan(const ProblemParams& params, const ShootingConfig& config);

/// Locates the unique sign change of θ*(a) - π/2 in the scan and bisects it.
ShootingOutcome solve_positive(const ProblemParams& params, const ShootingConfig& config = {});

/// The positive solution of the separable profile equation (λ = ℓ_{N,q}).
/// Throws DomainError outside q1 < q < q3 and ConvergenceError if the
/// shooting does not produce a certified solution.
RadialProfile omega0(int N, double q, const ShootingConfig& config = {});

struct MultiplicityReport {
    int count = 0;
    int inconclusive = 0;
    std::vector<double> amplitudes;
    std::vector<ScanRecord> scan_log;
};

/// Counts distinct admissible positive solutions reachable from disjoint
/// amplitude brackets.  config.samples sets the scan resolution.
MultiplicityReport multiplicity_probe(const ProblemParams& params, const ShootingConfig& config = {});

struct LambdaRule {
    bool use_ell = true;
    double value = 0.0;

    static LambdaRule ell() { return {}; }
    static LambdaRule fixed(double v) { return {false, v}; }
};

struct ExistenceRow {
    double q = 0.0;
    double lambda = 0.0;
    Regime predicted = Regime::UniqueSolution;
    ShootStatus observed = ShootStatus::Inconclusive;
    std::optional<double> amplitude;
    double residual = 0.0;
    std::string error;
};

/// One shooting solve per exponent.  Row failures are recorded, not thrown.
std::vector<ExistenceRow> existence_scan(int N, const std::vector<double>& q_grid, LambdaRule rule,
                                         const ShootingConfig& config = {});

} // namespace bsing
