#pragma once

// Birman-Schwinger layer: the compact operator mu |V|^{1/2} R0(k,z) |V|^{1/2}
// restricted to even functions, realized as a dense symmetric matrix on the
// orbit basis of supp(vhat).  Eigenvalues above 1 count bound states of the
// fiber Hamiltonian below z; eigenvalue branches are monotone in z, so
// bound-state energies come out of per-branch bisection.

#include "latthresh/green.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <thread>
#include <utility>
#include <vector>

namespace latthresh::bs {

/// Orbit basis of the even subspace restricted to supp(vhat): one basis
/// vector per pair {x, -x}.  The symmetrized delta at orbit x carries weight
/// c_x = 1 for x != 0 and c_0 = 1/sqrt(2), making the basis orthonormal.
struct EvenBasis {
    int dim = 0;
    std::vector<LatticeVector> reps;  // deterministic order; 0 first when present
    std::vector<double> vhat;         // vhat(rep) <= 0, never zero
    std::vector<double> weight;       // c_x

    std::size_t size() const { return reps.size(); }
};

inline EvenBasis build_even_basis(const Potential& v) {
    if (v.empty()) throw std::invalid_argument("even basis: potential has empty support");
    EvenBasis b;
    b.dim = v.dim();
    for (const auto& [x, val] : v.coefficients()) {
        b.reps.push_back(x);
        b.vhat.push_back(val);
        b.weight.push_back(is_zero(x) ? 1.0 / std::sqrt(2.0) : 1.0);
    }
    return b;
}

inline std::vector<double> descending_eigs(const Eigen::MatrixXd& m) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m, Eigen::EigenvaluesOnly);
    std::vector<double> out(es.eigenvalues().data(), es.eigenvalues().data() + m.rows());
    std::reverse(out.begin(), out.end());
    return out;
}

/// B(x,y) = mu sqrt(|vhat(x)| |vhat(y)|) c_x c_y [G(x-y) + G(x+y)] on the
/// even orbit basis, with G the fiber Green's function at energy z.
struct BsMatrix {
    double mu = 0.0;
    QuasiMomentum k;
    double z = 0.0;
    double gap = 0.0;  // emin - z
    EvenBasis basis;
    Eigen::MatrixXd entries;
    std::vector<double> eigs;  // descending
    double green_err = 0.0;    // propagated quadrature error estimate
};

namespace detail {

/// Offsets x_i - x_j and x_i + x_j needed for the matrix, deduplicated up to
/// sign, with flattened (i,j) -> (diff index, sum index) bookkeeping.
struct OffsetPlan {
    std::vector<LatticeVector> points;
    std::vector<std::pair<std::size_t, std::size_t>> at;  // row-major (i,j)

    OffsetPlan(const EvenBasis& b) {
        std::map<LatticeVector, std::size_t> seen;
        auto intern = [&](const LatticeVector& p) {
            LatticeVector rep = orbit_representative(p);
            auto [it, inserted] = seen.emplace(rep, points.size());
            if (inserted) points.push_back(rep);
            return it->second;
        };
        const std::size_t m = b.size();
        at.reserve(m * m);
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < m; ++j)
                at.emplace_back(intern(vec_sub(b.reps[i], b.reps[j])),
                                intern(vec_add(b.reps[i], b.reps[j])));
    }
};

inline Eigen::MatrixXd assemble(double mu, const EvenBasis& b, const OffsetPlan& plan,
                                std::span<const double> green_values) {
    const std::size_t m = b.size();
    Eigen::MatrixXd out(m, m);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < m; ++j) {
            auto [di, si] = plan.at[i * m + j];
            double amp = std::sqrt(std::abs(b.vhat[i]) * std::abs(b.vhat[j]));
            out(i, j) = mu * amp * b.weight[i] * b.weight[j] *
                        (green_values[di] + green_values[si]);
        }
    return 0.5 * (out + out.transpose());  // kill roundoff asymmetry
}

}  // namespace detail

/// One-shot build at a fixed energy z <= emin (z = emin needs d >= 3 and a
/// certified non-degenerate minimum).  Green evaluation mode and accuracy are
/// controlled by the request.
inline BsMatrix build_bs_matrix(double mu, const PairDispersion& pair, double z,
                                const Potential& v, const green::GreenRequest& req = {}) {
    if (!(mu > 0.0)) throw std::invalid_argument("bs matrix: coupling must be positive");
    if (v.dim() != pair.dim()) throw std::invalid_argument("bs matrix: dimension mismatch");
    if (!(z <= pair.emin)) throw std::invalid_argument("bs matrix: energy above the threshold");
    EvenBasis basis = build_even_basis(v);
    detail::OffsetPlan plan(basis);

    green::GreenRequest r = req;
    r.gap = pair.emin - z;
    green::GreenTable table =
        green::evaluate_green(pair.dispersion(), pair.k(), pair, plan.points, r);

    BsMatrix out{mu, pair.k(), z, r.gap, std::move(basis), Eigen::MatrixXd(), {}, 0.0};
    out.entries = detail::assemble(mu, out.basis, plan, table.value);
    out.eigs = descending_eigs(out.entries);
    out.green_err = table.err + std::max(table.cross_diff, 0.0);
    return out;
}

/// N_+(1, B): eigenvalues above 1, a hair of slack so that roundoff at an
/// exact crossing cannot inflate the count.  Equals the number of fiber
/// eigenvalues below z.
inline int count_above_one(const BsMatrix& b) {
    double tau = 1e-10 * std::max(1.0, b.eigs.empty() ? 0.0 : std::abs(b.eigs.front()));
    return static_cast<int>(std::count_if(b.eigs.begin(), b.eigs.end(),
                                          [&](double l) { return l > 1.0 + tau; }));
}

/// True when some eigenvalue sits inside the counting tolerance band around 1:
/// the count at this z is not trustworthy and z should be refined.
inline bool near_one(const BsMatrix& b) {
    double tau = 1e-10 * std::max(1.0, b.eigs.empty() ? 0.0 : std::abs(b.eigs.front()));
    for (double l : b.eigs)
        if (std::abs(l - 1.0) <= tau) return true;
    return false;
}

/// The one-parameter family B_1(emin - gap) with the coupling factored out,
/// built once and evaluated cheaply at many gaps (the solver's inner loop).
class Bs1Family {
public:
    Bs1Family(const PairDispersion& pair, const Potential& v,
              const green::QuadOptions& quad = {})
        : pair_(pair), basis_(build_even_basis(v)), plan_(basis_), quad_(quad) {
        if (v.dim() != pair.dim()) throw std::invalid_argument("bs family: dimension mismatch");
        if (pair.dispersion().nearest_neighbor())
            nn_.emplace(pair.dispersion(), pair.k(), plan_.points, quad_);
    }

    int dim() const { return pair_.dim(); }
    std::size_t size() const { return basis_.size(); }
    const EvenBasis& basis() const { return basis_; }
    const PairDispersion& pair() const { return pair_; }

    /// Whether gap = 0 is directly evaluable (generalized threshold operator).
    bool threshold_ok() const {
        if (pair_.dim() < 3 || !pair_.certified()) return false;
        return nn_ ? nn_->interior() : true;
    }

    Eigen::MatrixXd matrix(double gap) const {
        return detail::assemble(1.0, basis_, plan_, values(gap));
    }

    std::vector<double> eigs(double gap) const {
        Eigen::MatrixXd m = matrix(gap);
        return descending_eigs(m);
    }

private:
    std::vector<double> values(double gap) const {
        if (nn_) return nn_->evaluate(gap);
        if (pair_.certified()) return green::green_polar(pair_, gap, plan_.points, quad_).value;
        return green::green_direct(pair_, gap, plan_.points, quad_).value;
    }

    PairDispersion pair_;
    EvenBasis basis_;
    detail::OffsetPlan plan_;
    green::QuadOptions quad_;
    std::optional<green::NnGreenEvaluator> nn_;
};

/// d = 2 small-gap model: B_1(emin - g) = constant - ln(g) * slope + O(g ln g),
/// with slope = 2 kappa u u^T rank one and positive semidefinite.  Shallow
/// states far below floating-point range are solved in y = -ln(g).
struct LogGapPencil {
    EvenBasis basis;
    Eigen::MatrixXd constant;
    Eigen::MatrixXd slope;

    Eigen::MatrixXd matrix(double y) const { return constant + y * slope; }
    std::vector<double> eigs(double y) const {
        Eigen::MatrixXd m = matrix(y);
        return descending_eigs(m);
    }
};

inline LogGapPencil loggap_pencil(const PairDispersion& pair, const Potential& v,
                                  const green::QuadOptions& quad = {}) {
    if (pair.dim() != 2) throw HypothesisError("log-gap pencil: requires d = 2");
    EvenBasis basis = build_even_basis(v);
    detail::OffsetPlan plan(basis);
    green::LogGapGreen lg = green::green_loggap(pair, plan.points, quad);
    LogGapPencil out{std::move(basis), Eigen::MatrixXd(), Eigen::MatrixXd()};
    out.constant = detail::assemble(1.0, out.basis, plan, lg.constant);
    out.slope = -detail::assemble(1.0, out.basis, plan, lg.slope);
    return out;
}

struct BoundState {
    double z = 0.0;        // energy; equals emin when the gap underflows
    double gap = 0.0;      // emin - z, 0.0 on underflow
    double log_gap = 0.0;  // ln(emin - z), finite even for underflowed gaps
    int multiplicity = 1;
    double residual = 0.0;  // |mu lambda_i(B_1(z)) - 1| at the root
    int branch = 0;         // index of the (descending) eigenvalue branch
};

struct BoundStateSet {
    QuasiMomentum k;
    double mu = 0.0;
    double emin = 0.0;
    std::size_t basis_size = 0;
    std::vector<BoundState> states;  // ascending energy (deepest first)
    bool used_counting_fallback = false;
    bool near_critical = false;      // a branch sits on the crossing tolerance
    bool shallow_unresolved = false; // a crossing exists below the resolvable gap range

    int count() const {
        int c = 0;
        for (const auto& s : states) c += s.multiplicity;
        return c;
    }
};

struct SolveOptions {
    double tau_z = 1e-10;       // bisection tolerance in energy
    double gap_switch = 1e-10;  // d=2: below this, switch to the log-gap pencil
    double y_cap = 1e6;         // d=2: give up on crossings beyond gap < exp(-y_cap)
    green::QuadOptions quad{};
};

namespace detail {

/// Root of mu f(g) = 1 on [glo, ghi] for f nonincreasing in g, where
/// mu f(glo) >= 1 >= mu f(ghi); plain bisection to absolute tolerance tau.
template <typename F>
double bisect_decreasing(F&& f, double mu, double glo, double ghi, double tau) {
    while (ghi - glo > tau) {
        double gm = 0.5 * (glo + ghi);
        if (mu * f(gm) >= 1.0)
            glo = gm;
        else
            ghi = gm;
    }
    return 0.5 * (glo + ghi);
}

/// Root in y of mu f(y) = 1 for f nondecreasing, mu f(ylo) <= 1 <= mu f(yhi).
template <typename F>
double bisect_increasing(F&& f, double mu, double ylo, double yhi, double tau) {
    while (yhi - ylo > tau) {
        double ym = 0.5 * (ylo + yhi);
        if (mu * f(ym) < 1.0)
            ylo = ym;
        else
            yhi = ym;
    }
    return 0.5 * (ylo + yhi);
}

inline int count_crossed(const std::vector<double>& eigs, double mu) {
    return static_cast<int>(
        std::count_if(eigs.begin(), eigs.end(), [&](double l) { return mu * l > 1.0; }));
}

/// All discontinuities of g -> N(g) (integer, nonincreasing) on (glo, ghi),
/// located to tau; returns (gap, jump size) pairs.  Used when per-branch
/// bookkeeping disagrees with direct counting near eigenvalue collisions.
template <typename Count>
void find_jumps(Count&& n_at, double glo, int nlo, double ghi, int nhi, double tau,
                std::vector<std::pair<double, int>>& out) {
    if (nlo == nhi) return;
    if (ghi - glo <= tau) {
        out.emplace_back(0.5 * (glo + ghi), nlo - nhi);
        return;
    }
    double gm = 0.5 * (glo + ghi);
    int nm = n_at(gm);
    find_jumps(n_at, glo, nlo, gm, nm, tau, out);
    find_jumps(n_at, gm, nm, ghi, nhi, tau, out);
}

}  // namespace detail

/// All eigenvalues of H_mu(k) below the essential-spectrum threshold, by
/// bisection on the monotone Birman-Schwinger eigenvalue branches.  Shallow
/// d = 2 states whose gap lies below SolveOptions::gap_switch are located in
/// log-gap space via the asymptotic pencil.
inline BoundStateSet solve_bound_states(double mu, const PairDispersion& pair,
                                        const Potential& v, const SolveOptions& opt = {}) {
    if (!(mu > 0.0)) throw std::invalid_argument("solve_bound_states: coupling must be positive");
    Bs1Family fam(pair, v, opt.quad);
    const std::size_t m = fam.size();
    const int d = pair.dim();

    BoundStateSet out{pair.k(), mu, pair.emin, m, {}, false, false, false};

    // Expand the deep end until every branch is below the crossing.
    double ghi = std::max(1.0, pair.emax - pair.emin);
    std::vector<double> eig_hi = fam.eigs(ghi);
    for (int guard = 0; detail::count_crossed(eig_hi, mu) > 0; ++guard) {
        if (guard > 120) throw std::runtime_error("solve_bound_states: no deep bracket found");
        ghi *= 2.0;
        eig_hi = fam.eigs(ghi);
    }

    // Shallow end of the directly evaluable range.  In d = 2 everything below
    // gap_switch belongs to the log-gap pencil, which resolves gaps in
    // relative (not absolute) terms.
    const bool at_threshold = fam.threshold_ok();
    double gfl;
    if (at_threshold)
        gfl = 0.0;
    else if (d == 2 && pair.certified())
        gfl = std::max(opt.gap_switch, 1e-13);
    else if (pair.certified() || fam.pair().dispersion().nearest_neighbor())
        gfl = std::max(opt.quad.gap_floor, 1e-13);
    else
        gfl = 1e-9;  // uncertified non-separable dispersions: grid sums only
    std::vector<double> eig_lo = fam.eigs(gfl);

    double tau_count = 1e-10 * std::max(1.0, eig_lo.empty() ? 0.0 : eig_lo.front());
    for (double l : eig_lo)
        if (std::abs(mu * l - 1.0) <= tau_count) out.near_critical = true;

    struct Root {
        double gap;
        double log_gap;
        int branch;
        double residual;
        bool from_pencil;
    };
    std::vector<Root> roots;

    const int r_direct = detail::count_crossed(eig_lo, mu);
    for (int i = 0; i < r_direct; ++i) {
        auto branch_i = [&](double g) { return fam.eigs(g)[i]; };
        double g = detail::bisect_decreasing(branch_i, mu, gfl, ghi, opt.tau_z);
        double res = std::abs(mu * branch_i(g) - 1.0);
        roots.push_back({g, std::log(g), i, res, false});
    }

    // Branches still above the crossing at the evaluation floor diverge (or
    // converge to a limit above 1/mu) as gap -> 0.
    if (!at_threshold && r_direct < static_cast<int>(m)) {
        if (d == 2 && pair.certified()) {
            LogGapPencil pencil = loggap_pencil(pair, v, opt.quad);
            const double y0 = -std::log(gfl);
            for (int i = r_direct; i < static_cast<int>(m); ++i) {
                auto branch_i = [&](double y) { return pencil.eigs(y)[i]; };
                double yhi = std::max(2.0 * y0, 64.0);
                bool bracketed = false;
                while (yhi <= opt.y_cap) {
                    if (mu * branch_i(yhi) >= 1.0) {
                        bracketed = true;
                        break;
                    }
                    yhi *= 2.0;
                }
                if (!bracketed) {
                    // rank-one slope: only the top branch diverges, the rest
                    // saturate; a saturated branch below 1/mu never crosses
                    if (i == 0) out.shallow_unresolved = true;
                    continue;
                }
                double y = detail::bisect_increasing(branch_i, mu, y0, yhi, 1e-8);
                double res = std::abs(mu * branch_i(y) - 1.0);
                roots.push_back({std::exp(-y), -y, i, res, true});
            }
        } else if (d <= 2) {
            // lambda_max diverges at the threshold in low dimension, so a
            // crossing below the evaluation floor exists but is unresolvable.
            if (!eig_lo.empty() && mu * eig_lo[0] <= 1.0) out.shallow_unresolved = true;
        }
    }

    // Verify branch bookkeeping against direct counting between the roots.
    std::sort(roots.begin(), roots.end(),
              [](const Root& a, const Root& b) { return a.gap > b.gap; });
    bool consistent = true;
    {
        std::vector<Root> direct;
        for (const auto& r : roots)
            if (!r.from_pencil) direct.push_back(r);
        auto count_at = [&](double g) { return detail::count_crossed(fam.eigs(g), mu); };
        for (std::size_t j = 0; j + 1 < direct.size(); ++j) {
            if (direct[j].gap - direct[j + 1].gap <= 2.0 * opt.tau_z) continue;
            double gm = 0.5 * (direct[j].gap + direct[j + 1].gap);
            if (count_at(gm) != static_cast<int>(j) + 1) consistent = false;
        }
        if (!direct.empty() && count_at(ghi) != 0) consistent = false;
    }
    if (!consistent) {
        out.used_counting_fallback = true;
        auto count_at = [&](double g) { return detail::count_crossed(fam.eigs(g), mu); };
        std::vector<std::pair<double, int>> jumps;
        detail::find_jumps(count_at, gfl, detail::count_crossed(eig_lo, mu), ghi,
                           detail::count_crossed(eig_hi, mu), opt.tau_z, jumps);
        std::vector<Root> pencil_roots;
        for (const auto& r : roots)
            if (r.from_pencil) pencil_roots.push_back(r);
        roots.clear();
        int branch = 0;
        std::sort(jumps.begin(), jumps.end(),
                  [](const auto& a, const auto& b) { return a.first > b.first; });
        for (const auto& [g, jump] : jumps) {
            auto eigs = fam.eigs(g);
            double res = std::numeric_limits<double>::infinity();
            for (double l : eigs) res = std::min(res, std::abs(mu * l - 1.0));
            for (int c = 0; c < jump; ++c) roots.push_back({g, std::log(g), branch++, res, false});
        }
        roots.insert(roots.end(), pencil_roots.begin(), pencil_roots.end());
        std::sort(roots.begin(), roots.end(),
                  [](const Root& a, const Root& b) { return a.gap > b.gap; });
    }

    // Merge roots that coincide within tolerance into multiplicities.
    for (std::size_t j = 0; j < roots.size();) {
        std::size_t e = j + 1;
        while (e < roots.size() && roots[e].from_pencil == roots[j].from_pencil &&
               (roots[j].from_pencil
                    ? (roots[j].log_gap - roots[e].log_gap) <= 1e-6
                    : (roots[j].gap - roots[e].gap) <= 2.0 * opt.tau_z))
            ++e;
        BoundState s;
        s.gap = roots[j].gap;
        s.log_gap = roots[j].log_gap;
        s.z = pair.emin - roots[j].gap;
        s.multiplicity = static_cast<int>(e - j);
        s.residual = roots[j].residual;
        s.branch = roots[j].branch;
        out.states.push_back(s);
        j = e;
    }
    return out;
}

/// Critical couplings mu*_i = 1 / lambda_i(B_1(k, emin)), nondecreasing; the
/// i-th (1-based) bound state appears as mu crosses mu*_i.  Branches with
/// nonpositive threshold eigenvalue never cross and report infinity.
inline std::vector<double> critical_coupling(const PairDispersion& pair, const Potential& v,
                                             const green::QuadOptions& quad = {}) {
    Bs1Family fam(pair, v, quad);
    if (!fam.threshold_ok())
        throw HypothesisError(
            "critical_coupling: threshold operator needs d >= 3 and a certified interior minimum");
    std::vector<double> lam = fam.eigs(0.0);
    std::vector<double> out;
    out.reserve(lam.size());
    for (double l : lam)
        out.push_back(l > 1e-300 ? 1.0 / l : std::numeric_limits<double>::infinity());
    return out;
}

struct SweepEntry {
    QuasiMomentum k;
    double emin = 0.0;
    std::optional<BoundStateSet> states;  // empty on per-point failure
    std::string error;
};

/// Bound states over a quasi-momentum grid; per-point failures are recorded
/// and the sweep continues.  Points are independent and run on the worker
/// pool; the output order matches the input grid.
inline std::vector<SweepEntry> dispersion_sweep(double mu, const DispersionRelation& eps,
                                                const Potential& v,
                                                const std::vector<QuasiMomentum>& grid,
                                                const SolveOptions& opt = {}) {
    std::vector<std::optional<SweepEntry>> slots(grid.size());
    auto work = [&](std::size_t lo, std::size_t hi) {
        for (std::size_t i = lo; i < hi; ++i) {
            PairDispersion pd = pair_dispersion(eps, grid[i]);
            SweepEntry e{grid[i], pd.emin, std::nullopt, ""};
            try {
                e.states = solve_bound_states(mu, pd, v, opt);
            } catch (const std::exception& ex) {
                e.error = ex.what();
            }
            slots[i] = std::move(e);
        }
    };
    const int nt = std::min<int>(green::thread_count(), static_cast<int>(grid.size()));
    if (nt <= 1) {
        work(0, grid.size());
    } else {
        std::vector<std::thread> pool;
        std::size_t chunk = (grid.size() + nt - 1) / nt;
        for (int t = 0; t < nt; ++t) {
            std::size_t lo = t * chunk, hi = std::min(grid.size(), lo + chunk);
            if (lo < hi) pool.emplace_back(work, lo, hi);
        }
        for (auto& th : pool) th.join();
    }
    std::vector<SweepEntry> out;
    out.reserve(grid.size());
    for (auto& s : slots) out.push_back(std::move(*s));
    return out;
}

/// Geometric ladder of gaps from deep to shallow, for counting scans that
/// need to resolve states accumulating at the threshold.
inline std::vector<double> geometric_gap_ladder(double g_max, double g_min, int n) {
    if (!(g_max > g_min) || !(g_min > 0.0) || n < 2)
        throw std::invalid_argument("gap ladder: need g_max > g_min > 0 and n >= 2");
    std::vector<double> out(n);
    double ratio = std::pow(g_min / g_max, 1.0 / (n - 1));
    double g = g_max;
    for (int i = 0; i < n; ++i, g *= ratio) out[i] = g;
    return out;
}

}  // namespace latthresh::bs
