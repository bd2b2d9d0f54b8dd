#pragma once

// Threshold analysis: is E_min(k) a regular or a singular point of the fiber
// Hamiltonian, what kind of threshold solution does a singular point carry,
// and what happens to the bound-state count when the quasi-momentum moves.
// The movement question is answered by the quadratic form Lambda(k, k0) built
// from double-denominator Green's integrals; its eigenvalue signs replace the
// quantification over unit vectors exactly.

#include "latthresh/bs.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <utility>
#include <vector>

namespace latthresh::threshold {

enum class Status { regular, singular, inconclusive };
enum class SolutionKind { none, resonance, eigenvalue };

inline const char* to_string(Status s) {
    switch (s) {
        case Status::regular: return "regular";
        case Status::singular: return "singular";
        default: return "inconclusive";
    }
}

inline const char* to_string(SolutionKind k) {
    switch (k) {
        case SolutionKind::resonance: return "resonance";
        case SolutionKind::eigenvalue: return "eigenvalue";
        default: return "none";
    }
}

struct ThresholdReport {
    QuasiMomentum k;
    double mu = 0.0;
    Status status = Status::regular;
    int multiplicity = 0;
    SolutionKind kind = SolutionKind::none;
    double gap = 0.0;        // min_i |mu lambda_i - 1| at the threshold
    double tau_sing = 0.0;   // singularity tolerance actually used
    double green_err = 0.0;  // propagated quadrature error
    std::vector<double> eigs;    // of B_mu(k, emin), descending
    Eigen::MatrixXd eigenspace;  // m x multiplicity, orthonormal columns
    bs::EvenBasis basis;
};

/// Decide regular vs. singular at the threshold by how close the spectrum of
/// B_mu(k, emin) comes to 1.  The dichotomy is exact in theory; numerically a
/// band of width tau_sing = max(1e-8, 3 x green error) counts as singular,
/// and a gap inside twice the error bar beyond that is inconclusive.
inline ThresholdReport classify_threshold(double mu, const PairDispersion& pair,
                                          const Potential& v,
                                          green::GreenRequest req = {}) {
    if (pair.dim() < 3)
        throw HypothesisError("classify_threshold: threshold operator requires d >= 3");
    req.cross_check = true;
    bs::BsMatrix b = bs::build_bs_matrix(mu, pair, pair.emin, v, req);

    ThresholdReport rep{pair.k(), mu,  Status::regular, 0, SolutionKind::none,
                        0.0,      0.0, b.green_err,     b.eigs, Eigen::MatrixXd(),
                        b.basis};
    rep.tau_sing = std::max(1e-8, 3.0 * b.green_err);
    rep.gap = std::numeric_limits<double>::infinity();
    for (double l : b.eigs) rep.gap = std::min(rep.gap, std::abs(l - 1.0));
    rep.multiplicity = static_cast<int>(
        std::count_if(b.eigs.begin(), b.eigs.end(),
                      [&](double l) { return std::abs(l - 1.0) <= rep.tau_sing; }));

    if (rep.multiplicity > 0) {
        rep.status = Status::singular;
        rep.kind = pair.dim() <= 4 ? SolutionKind::resonance : SolutionKind::eigenvalue;
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(b.entries);
        rep.eigenspace.resize(b.entries.rows(), rep.multiplicity);
        int c = 0;
        for (Eigen::Index i = 0; i < es.eigenvalues().size(); ++i)
            if (std::abs(es.eigenvalues()[i] - 1.0) <= rep.tau_sing)
                rep.eigenspace.col(c++) = es.eigenvectors().col(i);
    } else if (rep.gap <= rep.tau_sing + 2.0 * b.green_err) {
        rep.status = Status::inconclusive;
    }
    return rep;
}

/// The quadratic form matrix Lambda(k, k0) on the even basis:
///   Lambda = 2 sum_{s != 0} epshat(s) [cos((k/2,s)) - cos((k0/2,s))] C_s,
/// the s-sum running over the full (two-sided) dispersion support, and C_s
/// the even compression of the double-denominator kernel
///   D_s(w) = int (1 - cos(p,s)) cos(p,w) / (gapform_k gapform_k0) deta.
/// Positive eigenvalues of Lambda projected onto the singular eigenspace mean
/// bound states split off when the quasi-momentum moves from k0 to k.
struct LambdaForm {
    QuasiMomentum k;
    QuasiMomentum k0;
    bs::EvenBasis basis;
    Eigen::MatrixXd matrix;
};

inline LambdaForm build_lambda(const Potential& v, const PairDispersion& pair_k,
                               const PairDispersion& pair_k0,
                               const green::QuadOptions& quad = {}) {
    const DispersionRelation& eps = pair_k.dispersion();
    bs::EvenBasis basis = bs::build_even_basis(v);
    bs::detail::OffsetPlan plan(basis);

    std::vector<LatticeVector> svecs;
    for (const auto& [s, val] : eps.coefficients())
        if (!is_zero(s)) svecs.push_back(s);

    std::vector<double> dvals;
    if (eps.nearest_neighbor())
        dvals = green::double_green_bessel(eps, pair_k.k(), pair_k0.k(), svecs,
                                           plan.points, quad);
    else
        dvals = green::double_green(pair_k, pair_k0, svecs, plan.points, quad);

    std::vector<double> kh = pair_k.k().half(), k0h = pair_k0.k().half();
    LambdaForm out{pair_k.k(), pair_k0.k(), std::move(basis), Eigen::MatrixXd()};
    out.matrix = Eigen::MatrixXd::Zero(out.basis.size(), out.basis.size());
    for (std::size_t is = 0; is < svecs.size(); ++is) {
        const LatticeVector& s = svecs[is];
        double bracket = std::cos(dot(kh, s)) - std::cos(dot(k0h, s));
        // one orbit representative stands for both of {s, -s}
        double coeff = 4.0 * eps.coefficient(s) * bracket;
        if (coeff == 0.0) continue;
        std::span<const double> ds(dvals.data() + is * plan.points.size(),
                                   plan.points.size());
        out.matrix += coeff * bs::detail::assemble(1.0, out.basis, plan, ds);
    }
    return out;
}

/// Even compression of a single C_s kernel (used by tests and diagnostics to
/// exercise its positive semidefiniteness directly).
inline Eigen::MatrixXd cs_matrix(const Potential& v, const PairDispersion& pair_k,
                                 const PairDispersion& pair_k0, const LatticeVector& s,
                                 const green::QuadOptions& quad = {}) {
    bs::EvenBasis basis = bs::build_even_basis(v);
    bs::detail::OffsetPlan plan(basis);
    std::vector<LatticeVector> svecs = {s};
    std::vector<double> dvals;
    const DispersionRelation& eps = pair_k.dispersion();
    if (eps.nearest_neighbor())
        dvals = green::double_green_bessel(eps, pair_k.k(), pair_k0.k(), svecs,
                                           plan.points, quad);
    else
        dvals = green::double_green(pair_k, pair_k0, svecs, plan.points, quad);
    return bs::detail::assemble(1.0, basis, plan, dvals);
}

struct PhaseRecord {
    explicit PhaseRecord(QuasiMomentum kk) : k(std::move(kk)) {}

    QuasiMomentum k;
    double lmin_proj = 0.0;  // extreme eigenvalues of Lambda on the eigenspace
    double lmax_proj = 0.0;
    double lmin_full = 0.0;  // of Lambda on the whole even basis
    double lmax_full = 0.0;
    bool some_up = false;    // lmax_proj > tau: at least one emitted state
    bool all_up = false;     // lmin_proj > tau: full eigenspace emits
    bool flat = false;       // all projected eigenvalues within tau of zero
    bool all_down = false;   // full form negative definite: nothing below threshold
    std::string label;
    std::string error;
};

struct PhaseMap {
    QuasiMomentum k0;
    double mu = 0.0;
    int multiplicity = 0;
    double tau = 0.0;      // sign tolerance, 1e-9 x the largest form norm seen
    std::vector<PhaseRecord> records;
};

inline PhaseMap phase_map(double mu, const DispersionRelation& eps, const QuasiMomentum& k0,
                          const Potential& v, const std::vector<QuasiMomentum>& grid,
                          const green::QuadOptions& quad = {}) {
    PairDispersion pair_k0 = pair_dispersion(eps, k0);
    ThresholdReport rep = classify_threshold(mu, pair_k0, v);
    if (rep.status != Status::singular)
        throw HypothesisError("phase_map: threshold at k0 is not singular");

    PhaseMap out{k0, mu, rep.multiplicity, 0.0, {}};
    std::vector<std::pair<std::vector<double>, std::vector<double>>> eig_pairs;
    double scale = 0.0;
    for (const auto& k : grid) {
        PhaseRecord recd{k};
        std::vector<double> proj_eigs, full_eigs;
        try {
            PairDispersion pair_k = pair_dispersion(eps, k);
            LambdaForm lf = build_lambda(v, pair_k, pair_k0, quad);
            Eigen::MatrixXd proj =
                rep.eigenspace.transpose() * lf.matrix * rep.eigenspace;
            proj_eigs = bs::descending_eigs(proj);
            full_eigs = bs::descending_eigs(lf.matrix);
            scale = std::max({scale, std::abs(full_eigs.front()), std::abs(full_eigs.back())});
        } catch (const std::exception& ex) {
            recd.error = ex.what();
        }
        out.records.push_back(std::move(recd));
        eig_pairs.emplace_back(std::move(proj_eigs), std::move(full_eigs));
    }

    out.tau = 1e-9 * std::max(scale, 1e-300);
    for (std::size_t i = 0; i < out.records.size(); ++i) {
        PhaseRecord& r = out.records[i];
        if (!r.error.empty()) {
            r.label = "error";
            continue;
        }
        const auto& [pe, fe] = eig_pairs[i];
        r.lmax_proj = pe.front();
        r.lmin_proj = pe.back();
        r.lmax_full = fe.front();
        r.lmin_full = fe.back();
        r.some_up = r.lmax_proj > out.tau;
        r.all_up = r.lmin_proj > out.tau;
        r.flat = std::abs(r.lmax_proj) <= out.tau && std::abs(r.lmin_proj) <= out.tau;
        r.all_down = r.lmax_full < -out.tau;
        if (r.all_up)
            r.label = "up";
        else if (r.flat)
            r.label = "flat";
        else if (r.all_down)
            r.label = "down";
        else if (r.some_up)
            r.label = "partial-up";
        else if (r.lmax_proj >= -out.tau && r.lmin_proj < -out.tau)
            r.label = "partial-down";
        else
            r.label = "mixed";
    }
    return out;
}

struct ThresholdSolution {
    QuasiMomentum k;
    int window = 0;  // values cover [-window, window]^d
    std::vector<LatticeVector> reps;  // orbit representatives
    std::vector<double> value;        // f(rep), normalized to max |f| = 1
    std::string decay_tag;            // "vanishing-at-infinity" or "square-summable"
    bool window_too_small = false;    // boundary magnitude above 0.1
    double residual_max = 0.0;        // eigenvalue-equation defect on the interior
    double boundary_max = 0.0;

    double value_at(const LatticeVector& x) const {
        LatticeVector r = orbit_representative(x);
        auto it = std::lower_bound(reps.begin(), reps.end(), r);
        if (it == reps.end() || *it != r)
            throw std::invalid_argument("threshold solution: point outside the window");
        return value[static_cast<std::size_t>(it - reps.begin())];
    }
};

/// Threshold solution f(x) = sum_y G(x-y) |vhat(y)|^{1/2} psi(y) on a window,
/// from the column `which` of the singular eigenspace; G at gap zero.  The
/// defect of (H - emin) f = 0 on the interior is stored with the solution;
/// it inherits the eigenvalue residual |mu lambda - 1| and the Green error.
inline ThresholdSolution reconstruct_threshold_solution(const ThresholdReport& rep,
                                                        const DispersionRelation& eps,
                                                        const Potential& v, int window,
                                                        int which = 0,
                                                        green::GreenRequest req = {}) {
    if (rep.status != Status::singular)
        throw HypothesisError("reconstruct: threshold is not singular");
    if (which < 0 || which >= rep.multiplicity)
        throw std::invalid_argument("reconstruct: eigenspace column out of range");
    const int d = eps.dim();
    if (window < 1 + v.support_radius() + eps.support_radius())
        throw std::invalid_argument("reconstruct: window too small for the supports");

    std::vector<LatticeVector> reps_w = box_orbit_representatives(d, window);
    if (reps_w.size() > 200000)
        throw ResourceError("reconstruct: window has too many orbits");

    // psi as a function on the support: basis coefficient a_x spreads as
    // a_x / sqrt 2 over +-x (and a_0 at 0)
    std::vector<std::pair<LatticeVector, double>> psi;  // (y, |vhat(y)|^{1/2} psi(y))
    for (std::size_t i = 0; i < rep.basis.size(); ++i) {
        double a = rep.eigenspace(i, which);
        double w = std::sqrt(std::abs(rep.basis.vhat[i]));
        const LatticeVector& x = rep.basis.reps[i];
        if (is_zero(x)) {
            psi.emplace_back(x, w * a);
        } else {
            psi.emplace_back(x, w * a / std::sqrt(2.0));
            psi.emplace_back(negated(x), w * a / std::sqrt(2.0));
        }
    }

    // one Green table covering every x - y offset
    std::map<LatticeVector, std::size_t> index;
    std::vector<LatticeVector> points;
    for (const auto& x : reps_w)
        for (const auto& [y, c] : psi) {
            LatticeVector u = orbit_representative(vec_sub(x, y));
            if (index.emplace(u, points.size()).second) points.push_back(u);
        }
    PairDispersion pair = pair_dispersion(eps, rep.k);
    req.gap = 0.0;
    green::GreenTable table = green::evaluate_green(eps, rep.k, pair, points, req);

    ThresholdSolution sol{rep.k, window, std::move(reps_w), {}, "", false, 0.0, 0.0};
    sol.value.resize(sol.reps.size());
    double vmax = 0.0;
    for (std::size_t i = 0; i < sol.reps.size(); ++i) {
        double acc = 0.0;
        for (const auto& [y, c] : psi)
            acc += table.value[index.at(orbit_representative(vec_sub(sol.reps[i], y)))] * c;
        sol.value[i] = acc;
        vmax = std::max(vmax, std::abs(acc));
    }
    if (vmax > 0.0)
        for (double& val : sol.value) val /= vmax;
    sol.decay_tag = d <= 4 ? "vanishing-at-infinity" : "square-summable";

    for (std::size_t i = 0; i < sol.reps.size(); ++i)
        if (max_abs_component(sol.reps[i]) == window)
            sol.boundary_max = std::max(sol.boundary_max, std::abs(sol.value[i]));
    sol.window_too_small = sol.boundary_max > 0.1;

    // defect of the eigenvalue equation on the interior window
    std::map<LatticeVector, double> T = pair_fourier_coeffs(eps, rep.k);
    const int interior = window - eps.support_radius();
    for (std::size_t i = 0; i < sol.reps.size(); ++i) {
        if (max_abs_component(sol.reps[i]) > interior) continue;
        double h = rep.mu * v.value(sol.reps[i]) * sol.value[i] - pair.emin * sol.value[i];
        for (const auto& [s, t] : T) h += t * sol.value_at(vec_sub(sol.reps[i], s));
        sol.residual_max = std::max(sol.residual_max, std::abs(h));
    }
    return sol;
}

struct StabilityReport {
    int count = 0;             // bound states at the center point
    double k_radius = 0.0;     // largest verified quasi-momentum radius
    double mu_radius = 0.0;    // largest verified coupling radius
    bool falsified = false;    // a count change was observed inside a scanned ball
    std::string detail;        // offending sample, when falsified
};

/// Verify that the bound-state count is locally constant around a regular
/// point, sampling axis and diagonal directions at each candidate radius.
inline StabilityReport stability_scan(double mu0, const DispersionRelation& eps,
                                      const QuasiMomentum& k0, const Potential& v,
                                      const std::vector<double>& k_radii,
                                      const std::vector<double>& mu_radii,
                                      const bs::SolveOptions& opt = {}) {
    PairDispersion pd0 = pair_dispersion(eps, k0);
    ThresholdReport rep = classify_threshold(mu0, pd0, v);
    if (rep.status == Status::singular)
        throw HypothesisError("stability_scan: center point is singular");

    StabilityReport out;
    out.count = bs::solve_bound_states(mu0, pd0, v, opt).count();
    const int d = eps.dim();

    auto count_at = [&](double mu, const QuasiMomentum& k) {
        return bs::solve_bound_states(mu, pair_dispersion(eps, k), v, opt).count();
    };

    for (double r : k_radii) {
        bool ok = true;
        std::vector<std::vector<double>> dirs;
        for (int j = 0; j < d; ++j)
            for (double sgn : {1.0, -1.0}) {
                std::vector<double> u(d, 0.0);
                u[j] = sgn;
                dirs.push_back(u);
            }
        std::vector<double> diag(d, 1.0 / std::sqrt(double(d)));
        dirs.push_back(diag);
        for (double& c : diag) c = -c;
        dirs.push_back(diag);
        for (const auto& u : dirs) {
            std::vector<double> comps(d);
            for (int j = 0; j < d; ++j) comps[j] = k0[j] + r * u[j];
            QuasiMomentum k(comps);
            if (count_at(mu0, k) != out.count) {
                out.falsified = true;
                out.detail = "count change at k offset radius " + std::to_string(r);
                ok = false;
                break;
            }
        }
        if (!ok) break;
        out.k_radius = r;
    }
    if (!out.falsified) {
        for (double r : mu_radii) {
            bool ok = true;
            for (double sgn : {1.0, -1.0}) {
                double mu = mu0 + sgn * r;
                if (mu <= 0.0) continue;
                if (count_at(mu, k0) != out.count) {
                    out.falsified = true;
                    out.detail = "count change at coupling offset " + std::to_string(sgn * r);
                    ok = false;
                    break;
                }
            }
            if (!ok) break;
            out.mu_radius = r;
        }
    }
    return out;
}

}  // namespace latthresh::threshold
