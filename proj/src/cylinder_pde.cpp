#include "bsing/cylinder_pde.hpp"

#include "bsing/errors.hpp"

#include <Eigen/Sparse>
#include <Eigen/SparseLU>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <limits>
#include <optional>
#include <ostream>
#include <random>
#include <sstream>
#include <string>

namespace bsing {

namespace {

using SpMat = Eigen::SparseMatrix<double>;
using Vec = Eigen::VectorXd;
using LU = Eigen::SparseLU<SpMat, Eigen::COLAMDOrdering<int>>;

// ∫_0^x sin^n t dt.
double sin_power_integral(int n, double x) {
    if (n == 0)
        return x;
    if (n == 1)
        return 1.0 - std::cos(x);
    return -std::pow(std::sin(x), n - 1) * std::cos(x) / n + (n - 1.0) / n * sin_power_integral(n - 2, x);
}

double max_abs(const Vec& v) { return v.size() == 0 ? 0.0 : v.cwiseAbs().maxCoeff(); }

bool all_finite(const Vec& v) { return v.allFinite(); }

std::vector<double> centered_derivative(const ThetaGrid& grid, std::span<const double> v) {
    const std::size_t n = v.size();
    const double h = grid.spacing();
    std::vector<double> dv(n, 0.0);
    for (std::size_t i = 1; i + 1 < n; ++i)
        dv[i] = (v[i + 1] - v[i - 1]) / (2.0 * h);
    dv[n - 1] = (3.0 * v[n - 1] - 4.0 * v[n - 2] + v[n - 3]) / (2.0 * h);
    return dv;
}

void check_lambda(const ProblemParams& params) {
    params.validate();
    const double l = ell(params.N, params.q);
    if (std::abs(params.lambda - l) > 1e-12 * std::max(1.0, std::abs(l)))
        throw DomainError("the cylinder equation needs lambda = ell(N, q)");
}

// Interior unknowns W (row-major, (nt-2) × m) and the residual
// F(W) = A W - b + |W|^{q-1} W.
class CylinderSystem {
public:
    CylinderSystem(const ProblemParams& params, const CylinderGrid& grid, std::span<const double> g0,
                   std::span<const double> g1)
        : q_(params.q), op_(grid.theta_grid(), params.N), m_(grid.ntheta - 1), ni_(grid.nt - 2) {
        const double dt = grid.dt();
        const double beta = damping_coefficient(params.N, params.q);
        const double lower = 1.0 / (dt * dt) + beta / (2.0 * dt);
        const double upper = 1.0 / (dt * dt) - beta / (2.0 * dt);
        const double centre = -2.0 / (dt * dt) + params.lambda;
        const auto V = op_.cell_measures();
        const auto c = op_.conductances();
        const std::size_t n = size();

        std::vector<Eigen::Triplet<double>> trip;
        trip.reserve(n * 5);
        for (std::size_t k = 0; k < ni_; ++k) {
            for (std::size_t j = 0; j < m_; ++j) {
                const auto row = static_cast<int>(k * m_ + j);
                const double left = j > 0 ? c[j - 1] : 0.0;
                const double right = c[j];
                trip.emplace_back(row, row, centre - (left + right) / V[j]);
                if (j > 0)
                    trip.emplace_back(row, row - 1, left / V[j]);
                if (j + 1 < m_)
                    trip.emplace_back(row, row + 1, right / V[j]);
                if (k > 0)
                    trip.emplace_back(row, row - static_cast<int>(m_), lower);
                if (k + 1 < ni_)
                    trip.emplace_back(row, row + static_cast<int>(m_), upper);
            }
        }
        A_.resize(static_cast<int>(n), static_cast<int>(n));
        A_.setFromTriplets(trip.begin(), trip.end());
        A_.makeCompressed();
        diag_.resize(n);
        for (std::size_t i = 0; i < n; ++i) {
            const int col = static_cast<int>(i);
            const int* inner = A_.innerIndexPtr();
            const int* begin = inner + A_.outerIndexPtr()[col];
            const int* end = inner + A_.outerIndexPtr()[col + 1];
            diag_[i] = static_cast<std::size_t>(std::lower_bound(begin, end, col) - inner);
        }

        b_ = Vec::Zero(static_cast<Eigen::Index>(n));
        for (std::size_t j = 0; j < m_; ++j) {
            b_[static_cast<Eigen::Index>(j)] -= lower * g0[j];
            b_[static_cast<Eigen::Index>((ni_ - 1) * m_ + j)] -= upper * g1[j];
        }
    }

    std::size_t size() const { return m_ * ni_; }
    std::size_t line() const { return m_; }
    const SpMat& linear() const { return A_; }
    const Vec& rhs() const { return b_; }
    const MeridianOperator& op() const { return op_; }

    Vec residual(const Vec& W) const {
        Vec r = A_ * W - b_;
        for (Eigen::Index i = 0; i < r.size(); ++i)
            r[i] += odd_power(W[i], q_);
        return r;
    }

    SpMat jacobian(const Vec& W) const {
        SpMat J = A_;
        double* val = J.valuePtr();
        for (std::size_t i = 0; i < diag_.size(); ++i)
            val[diag_[i]] += q_ * std::pow(std::abs(W[static_cast<Eigen::Index>(i)]), q_ - 1.0);
        return J;
    }

private:
    double q_;
    MeridianOperator op_;
    std::size_t m_;
    std::size_t ni_;
    SpMat A_;
    Vec b_;
    std::vector<std::size_t> diag_;
};

// [[J, u], [vᵀ, 0]].
SpMat bordered(const SpMat& J, const Vec& u, const Vec& v) {
    const auto n = J.rows();
    std::vector<Eigen::Triplet<double>> trip;
    trip.reserve(static_cast<std::size_t>(J.nonZeros() + 2 * n));
    for (int col = 0; col < J.outerSize(); ++col)
        for (SpMat::InnerIterator it(J, col); it; ++it)
            trip.emplace_back(static_cast<int>(it.row()), col, it.value());
    for (Eigen::Index i = 0; i < n; ++i) {
        trip.emplace_back(static_cast<int>(i), static_cast<int>(n), u[i]);
        trip.emplace_back(static_cast<int>(n), static_cast<int>(i), v[i]);
    }
    SpMat B(n + 1, n + 1);
    B.setFromTriplets(trip.begin(), trip.end());
    B.makeCompressed();
    return B;
}

Vec start_vector(Eigen::Index n, std::uint32_t seed) {
    std::mt19937 gen(seed);
    Vec x(n);
    for (Eigen::Index i = 0; i < n; ++i)
        x[i] = static_cast<double>(gen()) / 4294967296.0 - 0.5;
    return x.normalized();
}

struct NearNull {
    Vec v; // right singular vector
    Vec u; // left singular vector, u = J^{-T} v / |J^{-T} v|
    double sigma = 0.0;
};

// Inverse iteration on JᵀJ with the factorization of J.  u is taken as
// J^{-T} v normalized, which fixes its sign so that uᵀ J v > 0.
NearNull near_null(LU& lu, const Vec& start, int sweeps) {
    NearNull out;
    Vec x = start.normalized();
    double growth = 0.0;
    for (int s = 0; s < sweeps; ++s) {
        Vec z = lu.transpose().solve(x);
        z = lu.solve(z);
        growth = z.norm();
        if (!std::isfinite(growth) || growth == 0.0)
            throw NumericalFault("inverse iteration broke down on the cylinder Jacobian");
        x = z / growth;
    }
    out.v = x;
    Vec u = lu.transpose().solve(x);
    out.u = u.normalized();
    out.sigma = 1.0 / std::sqrt(growth);
    return out;
}

class NewtonSolver {
public:
    NewtonSolver(const CylinderSystem& sys, const CylinderOptions& opt) : sys_(sys), opt_(opt) {
        // ‖A‖∞ ‖W‖∞ ε sets the resolution of uᵀF.
        const SpMat& A = sys.linear();
        Vec rows = Vec::Zero(A.rows());
        for (int col = 0; col < A.outerSize(); ++col)
            for (SpMat::InnerIterator it(A, col); it; ++it)
                rows[it.row()] += std::abs(it.value());
        row_norm_ = max_abs(rows);
    }

    std::vector<double> history;
    int iterations = 0;
    double sigma = 0.0;
    bool deflated = false;

    Vec solve(Vec W) {
        Vec F = sys_.residual(W);
        double r = max_abs(F);
        history.push_back(r);
        if (r <= opt_.newton_tol)
            return W;
        factor(W);
        const NearNull nn = near_null(jlu_, start_vector(W.size(), 12345u), 4);
        sigma = nn.sigma;
        deflated = sigma < opt_.deflation_threshold;
        if (deflated)
            return search_null_coordinate(W, nn);

        bool fresh = true;
        while (r > opt_.newton_tol) {
            if (iterations >= opt_.max_newton)
                fail("Newton iteration cap reached");
            if (!fresh)
                factor(W);
            fresh = false;
            const Vec d = jlu_.solve(-F);
            if (!all_finite(d))
                fail("non-finite Newton step");
            double tau = 1.0;
            bool accepted = false;
            Vec Wn, Fn;
            for (int k = 0; k <= opt_.max_halvings; ++k) {
                Wn = W + tau * d;
                Fn = sys_.residual(Wn);
                const double rn = max_abs(Fn);
                if (std::isfinite(rn) && rn < r) {
                    accepted = true;
                    break;
                }
                tau *= 0.5;
            }
            if (!accepted)
                fail("line search stalled");
            W = std::move(Wn);
            F = std::move(Fn);
            r = max_abs(F);
            ++iterations;
            history.push_back(r);
        }
        for (int p = 0; p < opt_.polish_steps; ++p) {
            factor(W);
            const Vec Wn = W - jlu_.solve(F);
            const Vec Fn = sys_.residual(Wn);
            const double rn = max_abs(Fn);
            if (!(rn < r))
                break;
            W = Wn;
            F = Fn;
            r = rn;
            ++iterations;
            history.push_back(r);
        }
        return W;
    }

private:
    const CylinderSystem& sys_;
    const CylinderOptions& opt_;
    double row_norm_ = 0.0;
    LU jlu_;
    LU blu_;
    bool jpattern_ = false;
    bool bpattern_ = false;

    struct Point {
        double c = 0.0;
        double xi = 0.0;
        Vec W;
    };

    [[noreturn]] void fail(const std::string& why) const {
        std::ostringstream os;
        os << why << " after " << iterations << " iterations (residual " << history.back() << ")";
        throw ConvergenceError(os.str(), history);
    }

    void factor(const Vec& W) {
        const SpMat J = sys_.jacobian(W);
        if (!jpattern_) {
            jlu_.analyzePattern(J);
            jpattern_ = true;
        }
        jlu_.factorize(J);
        if (jlu_.info() != Eigen::Success)
            fail("sparse LU factorization failed");
    }

    static double projected(const Vec& F, const Vec& u) { return max_abs(F - u.dot(F) * u); }

    // Roundoff level of uᵀF at W.
    double xi_floor(const Vec& W) const {
        return 64.0 * std::numeric_limits<double>::epsilon() * row_norm_ * std::max(1.0, max_abs(W));
    }

    // Newton on F + ξ u(W) = 0 with vᵀ(W - W0) = c, u(W) the current left
    // near-null vector; returns the point with ξ = u(W)ᵀF(W).
    std::optional<Point> constrained(const Vec& start, const Vec& W0, const Vec& v, const Vec& uref, double c) {
        Vec W = start;
        const double scale = 1.0 + std::abs(c);
        for (int k = 0; k < opt_.max_newton; ++k) {
            const Vec F = sys_.residual(W);
            if (!all_finite(F))
                return std::nullopt;
            factor(W);
            NearNull local = near_null(jlu_, v, 2);
            // J^{-T} v flips with det J across a fold in c; keep u continuous.
            if (local.u.dot(uref) < 0.0)
                local.u = -local.u;
            const double cons = std::abs(v.dot(W - W0) - c);
            const double proj = projected(F, local.u);
            if (proj <= 0.1 * opt_.newton_tol && cons <= 1e-10 * scale && k > 0)
                return Point{c, local.u.dot(F), W};
            const SpMat B = bordered(sys_.jacobian(W), local.u, v);
            if (!bpattern_) {
                blu_.analyzePattern(B);
                bpattern_ = true;
            }
            blu_.factorize(B);
            if (blu_.info() != Eigen::Success)
                return std::nullopt;
            Vec rhs(W.size() + 1);
            rhs.head(W.size()) = -F;
            rhs[W.size()] = c - v.dot(W - W0);
            const Vec sol = blu_.solve(rhs);
            if (!sol.allFinite())
                return std::nullopt;
            // The constraint row is linear, so any step length keeps it on
            // track; damp on the projected residual.
            const Vec d = sol.head(W.size());
            double tau = 1.0;
            bool accepted = false;
            for (int h = 0; h <= opt_.max_halvings; ++h) {
                const Vec Wn = W + tau * d;
                const double pn = projected(sys_.residual(Wn), local.u);
                if (std::isfinite(pn) && (pn < proj || cons > 1e-10 * scale)) {
                    W = Wn;
                    accepted = true;
                    break;
                }
                tau *= 0.5;
            }
            if (!accepted)
                return std::nullopt;
            ++iterations;
        }
        return std::nullopt;
    }

    bool finished(const Point& p) {
        const double r = max_abs(sys_.residual(p.W));
        history.push_back(r);
        return r <= opt_.newton_tol && std::abs(p.xi) <= xi_floor(p.W);
    }

    // The bordered iteration leaves the residual along u untouched, so the
    // near-null coordinate c = vᵀ(W - W0) is fixed by a scalar root search
    // on ξ(c): march until ξ changes sign, then regula falsi.  ξ is driven to
    // its roundoff floor, not merely below the residual tolerance, since
    // W moves by ξ/σ along v.
    Vec search_null_coordinate(const Vec& W0, const NearNull& nn) {
        const Vec& v = nn.v;
        auto first = constrained(W0, W0, v, nn.u, 0.0);
        if (!first)
            fail("bordered Newton failed at the initial guess");
        Point a = std::move(*first);
        if (finished(a))
            return a.W;
        const double norm = std::max(W0.norm(), 1e-12);
        const double step0 = std::clamp(std::abs(a.xi) / nn.sigma, 1e-4 * norm, 0.05 * norm);
        const Point origin = a;

        for (const double dir : {a.xi > 0.0 ? -1.0 : 1.0, a.xi > 0.0 ? 1.0 : -1.0}) {
            a = origin;
            double step = step0;
            int cuts = 0;
            int grown = 0;
            for (int s = 0; s < 80 && cuts <= 10; ++s) {
                auto next = constrained(a.W, W0, v, nn.u, a.c + dir * step);
                if (!next) {
                    step *= 0.5;
                    ++cuts;
                    continue;
                }
                Point b = std::move(*next);
                if (finished(b))
                    return b.W;
                if ((a.xi > 0.0) != (b.xi > 0.0))
                    return bracket(W0, v, nn.u, std::move(a), std::move(b));
                if (std::abs(b.xi) >= std::abs(a.xi) && ++grown >= 12)
                    break;
                a = std::move(b);
                step *= 1.5;
            }
        }
        fail("no sign change of the near-null residual");
    }

    Vec bracket(const Vec& W0, const Vec& v, const Vec& uref, Point a, Point b) {
        int side = 0;
        double fa = a.xi, fb = b.xi;
        for (int k = 0; k < 100; ++k) {
            double c = (a.c * fb - b.c * fa) / (fb - fa);
            if (!(c > std::min(a.c, b.c) && c < std::max(a.c, b.c)))
                c = 0.5 * (a.c + b.c);
            const Vec& start = std::abs(c - a.c) < std::abs(c - b.c) ? a.W : b.W;
            auto res = constrained(start, W0, v, uref, c);
            if (!res)
                fail("bordered Newton failed inside the bracket");
            Point p = std::move(*res);
            if (finished(p))
                return p.W;
            if ((p.xi > 0.0) == (a.xi > 0.0)) {
                a = std::move(p);
                fa = a.xi;
                if (side == -1)
                    fb *= 0.5;
                side = -1;
            } else {
                b = std::move(p);
                fb = b.xi;
                if (side == 1)
                    fa *= 0.5;
                side = 1;
            }
            if (std::abs(b.c - a.c) <= 1e-13 * (1.0 + std::abs(a.c))) {
                Point& best = std::abs(a.xi) < std::abs(b.xi) ? a : b;
                if (max_abs(sys_.residual(best.W)) <= opt_.newton_tol)
                    return best.W;
                break;
            }
        }
        fail("bracket on the near-null coordinate did not close");
    }
};

std::vector<double> checked_data(const RadialProfile& g, const CylinderGrid& grid, double undershoot,
                                 const char* name) {
    if (g.size() != grid.ntheta)
        throw DomainError(std::string(name) + " does not live on the cylinder theta grid");
    std::vector<double> v = g.v;
    const double scale = std::max(1.0, g.max_abs());
    for (double x : v) {
        if (!std::isfinite(x))
            throw DomainError(std::string(name) + " has non-finite values");
        if (x < -undershoot)
            throw DomainError(std::string(name) + " must be nonnegative");
    }
    if (std::abs(v.back()) > 1e-6 * scale)
        throw DomainError(std::string(name) + " must vanish at theta = pi/2");
    v.back() = 0.0;
    return v;
}

Vec pack(const CylinderField& f) {
    const std::size_t m = f.grid.ntheta - 1;
    Vec W(static_cast<Eigen::Index>((f.grid.nt - 2) * m));
    for (std::size_t k = 1; k + 1 < f.grid.nt; ++k)
        for (std::size_t j = 0; j < m; ++j)
            W[static_cast<Eigen::Index>((k - 1) * m + j)] = f.at(k, j);
    return W;
}

std::size_t nearest_row(const CylinderGrid& grid, double t) {
    const double k = std::round(t / grid.dt());
    return static_cast<std::size_t>(std::clamp(k, 0.0, static_cast<double>(grid.nt - 1)));
}

std::vector<double> phi_on(const ThetaGrid& grid) {
    std::vector<double> phi(grid.size());
    for (std::size_t j = 0; j < phi.size(); ++j)
        phi[j] = std::cos(grid.node(j));
    phi.back() = 0.0;
    return phi;
}

} // namespace

void CylinderGrid::validate() const {
    if (!(T > 0.0) || !std::isfinite(T))
        throw DomainError("cylinder length T must be positive");
    if (nt < 64)
        throw DomainError("cylinder needs nt >= 64");
    if (ntheta < ThetaGrid::kMinInteriorNodes + 2)
        throw DomainError("cylinder needs ntheta >= 66");
}

MeridianOperator::MeridianOperator(const ThetaGrid& grid, int N)
    : grid_(grid), area_(sphere_area(N - 2)) {
    if (N < 3)
        throw DomainError("meridian operator needs N >= 3");
    const std::size_t m = grid.size() - 1;
    const double h = grid.spacing();
    const int n = N - 2;
    cells_.resize(m);
    faces_.resize(m);
    for (std::size_t j = 0; j < m; ++j) {
        const double th = grid.node(j);
        const double a = std::max(0.0, th - 0.5 * h);
        const double b = th + 0.5 * h;
        cells_[j] = sin_power_integral(n, b) - sin_power_integral(n, a);
        faces_[j] = std::pow(std::sin(b), n) / h;
    }
}

void MeridianOperator::apply(std::span<const double> w, std::span<double> out) const {
    const std::size_t m = size();
    for (std::size_t j = 0; j < m; ++j) {
        const double next = j + 1 < m ? w[j + 1] : 0.0;
        const double flux_r = faces_[j] * (next - w[j]);
        const double flux_l = j > 0 ? faces_[j - 1] * (w[j] - w[j - 1]) : 0.0;
        out[j] = (flux_r - flux_l) / cells_[j];
    }
}

double MeridianOperator::inner(std::span<const double> a, std::span<const double> b) const {
    double s = 0.0;
    for (std::size_t j = 0; j < size(); ++j)
        s += cells_[j] * a[j] * b[j];
    return area_ * s;
}

double MeridianOperator::gradient_energy(std::span<const double> w) const {
    const std::size_t m = size();
    double s = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
        const double next = j + 1 < m ? w[j + 1] : 0.0;
        s += faces_[j] * (next - w[j]) * (next - w[j]);
    }
    return area_ * s;
}

RadialProfile discrete_steady_state(const ProblemParams& params, const RadialProfile& seed) {
    params.validate();
    const MeridianOperator op(seed.grid, params.N);
    const std::size_t m = op.size();
    const auto V = op.cell_measures();
    const auto c = op.conductances();
    std::vector<Eigen::Triplet<double>> trip;
    for (std::size_t j = 0; j < m; ++j) {
        const int r = static_cast<int>(j);
        const double left = j > 0 ? c[j - 1] : 0.0;
        trip.emplace_back(r, r, params.lambda - (left + c[j]) / V[j]);
        if (j > 0)
            trip.emplace_back(r, r - 1, left / V[j]);
        if (j + 1 < m)
            trip.emplace_back(r, r + 1, c[j] / V[j]);
    }
    SpMat A(static_cast<int>(m), static_cast<int>(m));
    A.setFromTriplets(trip.begin(), trip.end());
    A.makeCompressed();

    Vec v(static_cast<Eigen::Index>(m));
    for (std::size_t j = 0; j < m; ++j)
        v[static_cast<Eigen::Index>(j)] = seed.v[j];
    auto residual = [&](const Vec& x) {
        Vec r = A * x;
        for (Eigen::Index i = 0; i < r.size(); ++i)
            r[i] += odd_power(x[i], params.q);
        return r;
    };
    Vec F = residual(v);
    double r = max_abs(F);
    std::vector<double> hist{r};
    LU lu;
    bool analysed = false;
    for (int it = 0; it < 60 && r > 1e-13 * std::max(1.0, max_abs(v)); ++it) {
        SpMat J = A;
        for (Eigen::Index i = 0; i < J.rows(); ++i)
            J.coeffRef(i, i) += params.q * std::pow(std::abs(v[i]), params.q - 1.0);
        if (!analysed) {
            lu.analyzePattern(J);
            analysed = true;
        }
        lu.factorize(J);
        if (lu.info() != Eigen::Success)
            throw ConvergenceError("steady-state factorization failed", hist);
        const Vec d = lu.solve(-F);
        double tau = 1.0;
        bool accepted = false;
        for (int k = 0; k <= 20; ++k) {
            const Vec vn = v + tau * d;
            const Vec Fn = residual(vn);
            const double rn = max_abs(Fn);
            if (rn < r) {
                v = vn;
                F = Fn;
                r = rn;
                accepted = true;
                break;
            }
            tau *= 0.5;
        }
        if (!accepted)
            break;
        hist.push_back(r);
    }
    if (!(r <= 1e-9 * std::max(1.0, max_abs(v))))
        throw ConvergenceError("discrete steady state did not converge", hist);

    RadialProfile out(seed.grid);
    for (std::size_t j = 0; j < m; ++j)
        out.v[j] = v[static_cast<Eigen::Index>(j)];
    out.v.back() = 0.0;
    out.dv = centered_derivative(out.grid, out.v);
    return out;
}

CylinderField constant_field(const CylinderGrid& grid, const RadialProfile& profile) {
    grid.validate();
    if (profile.size() != grid.ntheta)
        throw DomainError("profile does not live on the cylinder theta grid");
    CylinderField f;
    f.grid = grid;
    f.w.resize(grid.nt * grid.ntheta);
    for (std::size_t k = 0; k < grid.nt; ++k)
        std::copy(profile.v.begin(), profile.v.end(), f.w.begin() + static_cast<std::ptrdiff_t>(k * grid.ntheta));
    return f;
}

CylinderField solve_cylinder(const ProblemParams& params, const RadialProfile& g0, const RadialProfile& g1,
                             const CylinderGrid& grid, const CylinderOptions& options) {
    check_lambda(params);
    grid.validate();
    const std::vector<double> d0 = checked_data(g0, grid, options.undershoot_tol, "g0");
    const std::vector<double> d1 = checked_data(g1, grid, options.undershoot_tol, "g1");
    const std::size_t m = grid.ntheta - 1;
    const std::size_t ni = grid.nt - 2;

    CylinderField field;
    field.grid = grid;
    field.outside_theory = std::abs(params.q - critical_exponents(params.N).q2) <= 1e-12;

    std::vector<std::pair<std::vector<double>, std::vector<double>>> stages;
    Vec W(static_cast<Eigen::Index>(ni * m));
    const int K = std::max(1, options.continuation_steps);
    switch (options.continuation) {
    case Continuation::None: {
        stages.emplace_back(d0, d1);
        if (options.guess == InitialGuess::Linear) {
            const CylinderSystem sys(params, grid, d0, d1);
            LU lu;
            lu.compute(sys.linear());
            if (lu.info() != Eigen::Success)
                throw ConvergenceError("linear problem factorization failed");
            W = lu.solve(sys.rhs());
        } else {
            for (std::size_t k = 0; k < ni; ++k) {
                const double s = grid.t(k + 1) / grid.T;
                for (std::size_t j = 0; j < m; ++j)
                    W[static_cast<Eigen::Index>(k * m + j)] = (1.0 - s) * d0[j] + s * d1[j];
            }
        }
        break;
    }
    case Continuation::FromEnd:
        for (std::size_t k = 0; k < ni; ++k)
            for (std::size_t j = 0; j < m; ++j)
                W[static_cast<Eigen::Index>(k * m + j)] = d1[j];
        for (int s = 1; s <= K; ++s) {
            const double a = static_cast<double>(s) / K;
            std::vector<double> e0(d0.size());
            for (std::size_t j = 0; j < e0.size(); ++j)
                e0[j] = d1[j] + a * (d0[j] - d1[j]);
            stages.emplace_back(std::move(e0), d1);
        }
        break;
    case Continuation::FromZero:
        W.setZero();
        for (int s = 1; s <= K; ++s) {
            const double a = static_cast<double>(s) / K;
            std::vector<double> e0(d0.size()), e1(d1.size());
            for (std::size_t j = 0; j < e0.size(); ++j) {
                e0[j] = a * d0[j];
                e1[j] = a * d1[j];
            }
            stages.emplace_back(std::move(e0), std::move(e1));
        }
        break;
    }

    for (std::size_t s = 0; s < stages.size(); ++s) {
        const CylinderSystem sys(params, grid, stages[s].first, stages[s].second);
        NewtonSolver newton(sys, options);
        try {
            W = newton.solve(std::move(W));
        } catch (const ConvergenceError& e) {
            if (stages.size() == 1)
                throw;
            std::ostringstream os;
            os << e.what() << " (continuation stage " << s + 1 << " of " << stages.size() << ")";
            throw ConvergenceError(os.str(), e.history());
        }
        field.newton_iterations += newton.iterations;
        field.residual_history = newton.history;
        field.smallest_singular_value = newton.sigma;
        field.deflated = newton.deflated;
    }
    field.residual = field.residual_history.empty() ? 0.0 : field.residual_history.back();

    field.w.assign(grid.nt * grid.ntheta, 0.0);
    std::copy(d0.begin(), d0.end(), field.w.begin());
    std::copy(d1.begin(), d1.end(), field.w.begin() + static_cast<std::ptrdiff_t>((grid.nt - 1) * grid.ntheta));
    double lowest = 0.0;
    std::size_t projected = 0;
    for (std::size_t k = 0; k < ni; ++k) {
        for (std::size_t j = 0; j < m; ++j) {
            double x = W[static_cast<Eigen::Index>(k * m + j)];
            lowest = std::min(lowest, x);
            if (x < 0.0) {
                if (x < -options.undershoot_tol) {
                    std::ostringstream os;
                    os << "solution undershoots to " << x << " below the projection tolerance";
                    throw ConvergenceError(os.str(), field.residual_history);
                }
                ++projected;
                x = 0.0;
            }
            field.w[(k + 1) * grid.ntheta + j] = x;
        }
    }
    field.min_before_projection = lowest;
    field.projected_undershoots = projected;
    return field;
}

double cylinder_residual(const ProblemParams& params, const CylinderField& field) {
    check_lambda(params);
    field.grid.validate();
    const CylinderSystem sys(params, field.grid, field.row(0), field.row(field.grid.nt - 1));
    return max_abs(sys.residual(pack(field)));
}

EnergyTrace energy_trace(const CylinderField& field, const ProblemParams& params) {
    params.validate();
    const CylinderGrid& g = field.grid;
    const MeridianOperator op(g.theta_grid(), params.N);
    const double dt = g.dt();
    const double q = params.q;
    EnergyTrace tr;
    tr.T = g.T;
    std::vector<double> wt(g.ntheta), power(g.ntheta), ones(g.ntheta, 1.0);
    for (std::size_t k = 1; k + 1 < g.nt; ++k) {
        const auto prev = field.row(k - 1), cur = field.row(k), next = field.row(k + 1);
        for (std::size_t j = 0; j < g.ntheta; ++j) {
            wt[j] = (next[j] - prev[j]) / (2.0 * dt);
            power[j] = std::pow(std::abs(cur[j]), q + 1.0);
        }
        const double kin = op.inner(wt, wt);
        const double H = 0.5 * (kin - op.gradient_energy(cur) + params.lambda * op.inner(cur, cur) +
                                2.0 / (q + 1.0) * op.inner(power, ones));
        tr.t.push_back(g.t(k));
        tr.H.push_back(H);
        tr.kinetic.push_back(kin);
    }
    const std::size_t n = tr.H.size();
    tr.Hdot.assign(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        if (n < 2)
            break;
        if (i == 0)
            tr.Hdot[i] = (tr.H[1] - tr.H[0]) / dt;
        else if (i + 1 == n)
            tr.Hdot[i] = (tr.H[i] - tr.H[i - 1]) / dt;
        else
            tr.Hdot[i] = (tr.H[i + 1] - tr.H[i - 1]) / (2.0 * dt);
    }
    return tr;
}

namespace {

std::pair<std::size_t, std::size_t> window(const EnergyTrace& tr) {
    if (tr.t.size() < 4)
        throw DomainError("energy trace too short");
    auto nearest = [&](double t) {
        std::size_t best = 0;
        for (std::size_t i = 1; i < tr.t.size(); ++i)
            if (std::abs(tr.t[i] - t) < std::abs(tr.t[best] - t))
                best = i;
        return best;
    };
    return {nearest(tr.T / 4.0), nearest(3.0 * tr.T / 4.0)};
}

} // namespace

IdentityReport energy_identity_residual(const EnergyTrace& trace, const ProblemParams& params) {
    const auto [i1, i2] = window(trace);
    const double beta = damping_coefficient(params.N, params.q);
    const double dt = trace.t[1] - trace.t[0];
    const std::span<const double> kin(trace.kinetic.data() + i1, i2 - i1 + 1);
    const double lhs = trace.H[i2] - trace.H[i1];
    const double rhs = kin.size() >= 2 ? beta * simpson(kin, dt) : 0.0;
    return make_report("energy_law", lhs, rhs);
}

bool energy_monotone(const EnergyTrace& trace, const ProblemParams& params, double slack) {
    const auto [i1, i2] = window(trace);
    const double beta = damping_coefficient(params.N, params.q);
    double scale = 0.0;
    for (std::size_t i = i1; i <= i2; ++i)
        scale = std::max(scale, std::abs(trace.H[i]));
    const double allow = slack * scale;
    for (std::size_t i = i1; i < i2; ++i) {
        const double d = trace.H[i + 1] - trace.H[i];
        if (beta < 0.0 && d > allow)
            return false;
        if (beta > 0.0 && d < -allow)
            return false;
        if (beta == 0.0 && std::abs(d) > allow)
            return false;
    }
    return true;
}

DecayFit critical_decay_fit(const CylinderField& field, const ProblemParams& params) {
    params.validate();
    if (std::abs(params.q - critical_exponents(params.N).q1) > 1e-12)
        throw DomainError("critical decay fit needs q = q1");
    const CylinderGrid& g = field.grid;
    if (g.T < 50.0)
        throw DomainError("critical decay fit needs T >= 50");
    const MeridianOperator op(g.theta_grid(), params.N);
    const std::vector<double> phi = phi_on(g.theta_grid());
    const double phi2 = op.inner(phi, phi);

    DecayFit fit;
    double sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0;
    for (std::size_t k = 0; k < g.nt; ++k) {
        const double t = g.t(k);
        if (t < g.T / 4.0 - 1e-12 || t > 3.0 * g.T / 4.0 + 1e-12)
            continue;
        const double X = op.inner(field.row(k), phi);
        if (!(X > 0.0))
            throw DomainError("X(t) <= 0 on the fit window");
        fit.t.push_back(t);
        fit.X.push_back(X);
        const double x = std::log(t), y = std::log(X);
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
    }
    const double n = static_cast<double>(fit.t.size());
    fit.exponent = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    const double power = (params.N - 1.0) / 2.0;
    double sum = 0.0;
    std::size_t count = 0;
    for (std::size_t i = 0; i < fit.t.size(); ++i) {
        if (fit.t[i] < 5.0 * g.T / 8.0 - 1e-12)
            continue;
        sum += std::pow(fit.t[i], power) * fit.X[i] / phi2;
        ++count;
    }
    fit.kappa = count ? sum / static_cast<double>(count) : 0.0;
    return fit;
}

double eta_shape_distance(const CylinderField& field, const ProblemParams& params, double t) {
    const CylinderGrid& g = field.grid;
    const MeridianOperator op(g.theta_grid(), params.N);
    const ThetaGrid tg = g.theta_grid();
    const std::vector<double> phi = phi_on(tg);
    const auto row = field.row(nearest_row(g, t));
    const double X = op.inner(row, phi);
    if (!(X > 0.0))
        throw DomainError("X(t) <= 0, the rescaled profile is undefined");
    const double scale = op.inner(phi, phi) / X;
    double d = 0.0;
    for (std::size_t j = 0; j < g.ntheta; ++j)
        d = std::max(d, std::abs(row[j] * scale - phi[j]));
    return d;
}

double critical_tail_amplitude(int N, double t) {
    if (N < 4)
        throw DomainError("N must be at least 4");
    if (!(t > 0.0))
        throw DomainError("t must be positive");
    const double q = critical_exponents(N).q1;
    // ∫_0^{π/2} cos^a sin^b = B((a+1)/2, (b+1)/2) / 2.
    auto beta_integral = [](double a, double b) {
        return 0.5 * std::exp(std::lgamma((a + 1.0) / 2.0) + std::lgamma((b + 1.0) / 2.0) -
                              std::lgamma((a + b + 2.0) / 2.0));
    };
    const double c = beta_integral(q + 1.0, N - 2.0) / beta_integral(2.0, N - 2.0);
    const double beta = std::abs(damping_coefficient(N, q));
    return std::pow((q - 1.0) * c * t / beta, -1.0 / (q - 1.0));
}

double bound_diagnostic(const CylinderField& field) {
    const CylinderGrid& g = field.grid;
    const ThetaGrid tg = g.theta_grid();
    double sup = 0.0;
    for (std::size_t j = 0; j + 1 < g.ntheta; ++j) {
        const double c = std::cos(tg.node(j));
        for (std::size_t k = 0; k < g.nt; ++k)
            sup = std::max(sup, field.at(k, j) / c);
    }
    return sup;
}

RadialProfile mid_profile(const CylinderField& field) {
    const CylinderGrid& g = field.grid;
    RadialProfile p(g.theta_grid());
    if (g.nt % 2 == 1) {
        const auto row = field.row((g.nt - 1) / 2);
        std::copy(row.begin(), row.end(), p.v.begin());
    } else {
        const auto a = field.row(g.nt / 2 - 1), b = field.row(g.nt / 2);
        for (std::size_t j = 0; j < g.ntheta; ++j)
            p.v[j] = 0.5 * (a[j] + b[j]);
    }
    p.dv = centered_derivative(p.grid, p.v);
    return p;
}

double mid_profile_distance(const CylinderField& field, const RadialProfile& target) {
    if (target.size() != field.grid.ntheta)
        throw DomainError("target profile does not live on the cylinder theta grid");
    const RadialProfile mid = mid_profile(field);
    double d = 0.0;
    for (std::size_t j = 0; j < mid.size(); ++j)
        d = std::max(d, std::abs(mid.v[j] - target.v[j]));
    return d;
}

void write_field_csv(std::ostream& os, const CylinderField& field) {
    const CylinderGrid& g = field.grid;
    const ThetaGrid tg = g.theta_grid();
    os << "t,theta,w\n" << std::setprecision(17);
    for (std::size_t k = 0; k < g.nt; ++k)
        for (std::size_t j = 0; j < g.ntheta; ++j)
            os << g.t(k) << ',' << tg.node(j) << ',' << field.at(k, j) << '\n';
}

void write_trace_csv(std::ostream& os, const EnergyTrace& trace) {
    os << "t,H,kinetic\n" << std::setprecision(17);
    for (std::size_t i = 0; i < trace.t.size(); ++i)
        os << trace.t[i] << ',' << trace.H[i] << ',' << trace.kinetic[i] << '\n';
}

} // namespace bsing
