#pragma once

#include "bsing/exponents.hpp"
#include "bsing/identities.hpp"
#include "bsing/sphere_ode.hpp"

#include <cstddef>
#include <iosfwd>
#include <span>
#include <vector>

namespace bsing {

/// [0, T] × [0, π/2] in (t, θ), t = log(1/r).
struct CylinderGrid {
    double T = 20.0;
    std::size_t nt = 129;
    std::size_t ntheta = 129;

    /// Throws DomainError unless T > 0, nt ≥ 64 and ntheta ≥ 66 (the θ
    /// lines must be valid ThetaGrids).
    void validate() const;
    double dt() const { return T / static_cast<double>(nt - 1); }
    double dtheta() const { return kHalfPi / static_cast<double>(ntheta - 1); }
    double t(std::size_t k) const { return k + 1 == nt ? T : static_cast<double>(k) * dt(); }
    ThetaGrid theta_grid() const { return ThetaGrid(ntheta); }
};

/// Finite-volume form of Δ' = ∂θθ + (N-2) cot θ ∂θ on a ThetaGrid with the
/// Dirichlet node at π/2 eliminated:
///   (L w)_j = [c_j (w_{j+1} - w_j) - c_{j-1} (w_j - w_{j-1})] / V_j,
/// V_j the exact sin^{N-2} measure of the cell around θ_j and
/// c_j = sin^{N-2}(θ_j + h/2) / h.  Symmetric for ⟨a, b⟩ = Σ V_j a_j b_j, and
/// at the pole it reduces to 2(N-1)(w_1 - w_0)/h² + O(h²).
class MeridianOperator {
public:
    MeridianOperator(const ThetaGrid& grid, int N);

    const ThetaGrid& grid() const { return grid_; }
    /// Unknowns per θ line (all nodes but π/2).
    std::size_t size() const { return cells_.size(); }
    std::span<const double> cell_measures() const { return cells_; }
    std::span<const double> conductances() const { return faces_; }

    /// L w for w given on all ntheta nodes (the last entry is ignored, taken as 0).
    void apply(std::span<const double> w, std::span<double> out) const;
    /// |S^{N-2}| Σ V_j a_j b_j.
    double inner(std::span<const double> a, std::span<const double> b) const;
    /// |S^{N-2}| Σ c_j (w_{j+1} - w_j)²  (= -⟨w, L w⟩, the Dirichlet energy).
    double gradient_energy(std::span<const double> w) const;

private:
    ThetaGrid grid_;
    double area_;
    std::vector<double> cells_;
    std::vector<double> faces_;
};

/// Steady state of the discrete θ-operator: L v + λ v + v^q = 0, v(π/2) = 0,
/// by Newton from `seed` (typically the shooting ω0 resampled to the grid).
/// dv is filled with centered differences.
RadialProfile discrete_steady_state(const ProblemParams& params, const RadialProfile& seed);

enum class InitialGuess {
    /// t-linear interpolation of the boundary data.
    Blend,
    /// Solution of the problem with the w^q term dropped.
    Linear,
};

enum class Continuation {
    None,
    /// Data (g1 + s (g0 - g1), g1), s = 1/K, ..., 1, starting from the
    /// t-independent extension of g1.  Stays on the branch of g1 when g1 is
    /// a steady state.
    FromEnd,
    /// Data (s g0, s g1), s = 1/K, ..., 1, starting from 0.
    FromZero,
};

struct CylinderOptions {
    double newton_tol = 1e-8;
    int max_newton = 60;
    int max_halvings = 20;
    /// Extra Newton steps taken after the tolerance is met, while they lower
    /// the residual.
    int polish_steps = 1;
    double undershoot_tol = 1e-8;
    InitialGuess guess = InitialGuess::Blend;
    Continuation continuation = Continuation::None;
    int continuation_steps = 4;
    /// A Jacobian singular value below this switches Newton to the bordered
    /// (deflated) form.
    double deflation_threshold = 1e-6;
};

struct CylinderField {
    CylinderGrid grid;
    /// Row-major, nt × ntheta; row k is the θ line at t_k.
    std::vector<double> w;

    int newton_iterations = 0;
    double residual = 0.0;
    std::vector<double> residual_history;
    std::size_t projected_undershoots = 0;
    double min_before_projection = 0.0;
    /// q = q2: the solver runs but the result is outside the analysed range.
    bool outside_theory = false;
    /// Smallest Jacobian singular value seen at the first iteration of the
    /// final stage; 0 when not estimated.
    double smallest_singular_value = 0.0;
    bool deflated = false;

    double at(std::size_t k, std::size_t j) const { return w[k * grid.ntheta + j]; }
    std::span<const double> row(std::size_t k) const {
        return {w.data() + k * grid.ntheta, grid.ntheta};
    }
};

/// The t-independent field with every row equal to `profile`.
CylinderField constant_field(const CylinderGrid& grid, const RadialProfile& profile);

/// w_tt - β w_t + Δ'w + ℓ w + w^q = 0 on the cylinder with w(0,·) = g0,
/// w(T,·) = g1, w(·,π/2) = 0 and the reflected condition at the pole.
/// params.lambda must equal ℓ_{N,q}.  Throws ConvergenceError (with the
/// residual history) when Newton fails or the solution undershoots below
/// -undershoot_tol.
CylinderField solve_cylinder(const ProblemParams& params, const RadialProfile& g0, const RadialProfile& g1,
                             const CylinderGrid& grid, const CylinderOptions& options = {});

/// Max-norm residual of the discrete cylinder equations at the interior rows.
double cylinder_residual(const ProblemParams& params, const CylinderField& field);

struct EnergyTrace {
    double T = 0.0;
    std::vector<double> t;
    std::vector<double> H;
    std::vector<double> Hdot;
    /// ∫ w_t² dσ.
    std::vector<double> kinetic;
};

/// H(t) = ½ ∫ (w_t² - |∇'w|² + ℓ w² + 2/(q+1) w^{q+1}) dσ at interior t
/// nodes, w_t by centered differences, θ-integrals in the operator's inner
/// product.  Hdot by differences of H.
EnergyTrace energy_trace(const CylinderField& field, const ProblemParams& params);

/// H(t2) - H(t1) versus β ∫_{t1}^{t2} kinetic dt on [T/4, 3T/4].
IdentityReport energy_identity_residual(const EnergyTrace& trace, const ProblemParams& params);

/// True when H moves in the direction of sign(β) on [T/4, 3T/4], allowing
/// per-step reversals of at most slack · max|H|.
bool energy_monotone(const EnergyTrace& trace, const ProblemParams& params, double slack = 1e-12);

struct DecayFit {
    /// Least-squares slope of log X against log t on [T/4, 3T/4].
    double exponent = 0.0;
    /// Mean of t^{(N-1)/2} X(t) / ∫φ² dσ over the last quarter of the window.
    double kappa = 0.0;
    std::vector<double> t;
    std::vector<double> X;
};

/// X(t) = ∫ w φ dσ.  Requires q = q1 and T ≥ 50; throws DomainError when
/// X ≤ 0 somewhere on the window.
DecayFit critical_decay_fit(const CylinderField& field, const ProblemParams& params);

/// Max over θ of |η(t,·)/z(t) - cos θ| at the row nearest t, where η/z =
/// w(t,·) ∫φ²dσ / X(t).
double eta_shape_distance(const CylinderField& field, const ProblemParams& params, double t);

/// Leading-order amplitude κ(t) of the slow φ-mode at q = q1:
/// κ' = -(c/|β|) κ^q with c = ∫φ^{q+1}/∫φ², so
/// κ(t) = ((q-1) c t / |β|)^{-1/(q-1)}.
double critical_tail_amplitude(int N, double t);

/// sup w/cos θ over all rows, the θ = π/2 column excluded.
double bound_diagnostic(const CylinderField& field);

/// Max-norm distance between w(T/2,·) (linear in t between rows when nt is
/// even) and the target, which must live on the same θ grid.
double mid_profile_distance(const CylinderField& field, const RadialProfile& target);

/// w(T/2,·) as a profile (dv by centered differences).
RadialProfile mid_profile(const CylinderField& field);

void write_field_csv(std::ostream& os, const CylinderField& field);
void write_trace_csv(std::ostream& os, const EnergyTrace& trace);

} // namespace bsing
