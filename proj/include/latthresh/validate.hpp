#pragma once

// End-to-end validation suite: closed forms, cross-method comparisons and
// independent finite-box diagonalization pin down every layer of the library.
// Each criterion states its tolerance and runtime budget inline; a criterion
// passes only if all of its checks hold within those numbers.

#include "latthresh/bs.hpp"
#include "latthresh/oracle.hpp"
#include "latthresh/threshold.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

namespace latthresh::validate {

struct CriterionResult {
    std::string name;
    bool pass = false;
    double seconds = 0.0;
    std::string detail;
};

struct SuiteResult {
    std::vector<CriterionResult> criteria;
    bool all_pass = true;
};

namespace detail {

inline DispersionRelation laplacian(int d) {
    std::vector<std::pair<LatticeVector, double>> t;
    t.emplace_back(LatticeVector(d, 0), static_cast<double>(d));
    for (int j = 0; j < d; ++j) {
        LatticeVector e(d, 0);
        e[j] = 1;
        t.emplace_back(e, -0.5);
    }
    return DispersionRelation(d, t);
}

inline Potential point_potential(int d, double value) {
    return Potential(d, {{LatticeVector(d, 0), value}});
}

// delta {0}, three-point {0, +-e1}, five-point {0, +-e1, +-e2} (d = 1 uses
// {0, +-1, +-2}); all coefficients -1
inline Potential family_potential(int d, int kind) {
    std::vector<std::pair<LatticeVector, double>> t;
    t.emplace_back(LatticeVector(d, 0), -1.0);
    if (kind >= 1) {
        LatticeVector e(d, 0);
        e[0] = 1;
        t.emplace_back(e, -1.0);
    }
    if (kind == 2) {
        LatticeVector e(d, 0);
        if (d == 1)
            e[0] = 2;
        else
            e[1] = 1;
        t.emplace_back(e, -1.0);
    }
    return Potential(d, t);
}

class Check {
public:
    void require(bool ok, const std::string& what) {
        if (!ok) {
            pass_ = false;
            if (!first_failure_.empty()) first_failure_ += "; ";
            first_failure_ += what;
        }
    }
    bool pass() const { return pass_; }
    const std::string& failures() const { return first_failure_; }

private:
    bool pass_ = true;
    std::string first_failure_;
};

inline std::string eshort(double v) {
    char buf[24];
    std::snprintf(buf, sizeof buf, "%.2e", v);
    return buf;
}

}  // namespace detail

/// d = 1 chain with a point interaction: z = 2 - sqrt(5) at mu = 1, k = 0,
/// from the solver (1e-9) and from the box oracle (1e-7).  Budget 1 s.
inline CriterionResult chain_closed_form() {
    CriterionResult r{"chain closed-form bound state", false, 0.0, ""};
    detail::Check c;
    auto eps = detail::laplacian(1);
    auto v = detail::point_potential(1, -1.0);
    auto k0 = QuasiMomentum::zero(1);
    const double zex = 2.0 - std::sqrt(5.0);

    auto states = bs::solve_bound_states(1.0, pair_dispersion(eps, k0), v);
    c.require(states.count() == 1, "expected exactly one bound state");
    double ebs = states.count() ? std::abs(states.states[0].z - zex) : 1.0;
    c.require(ebs <= 1e-9, "solver misses the closed form by " + detail::eshort(ebs));

    auto conv = oracle::convergence_rule(eps, k0, 1.0, v);
    c.require(conv.converged, "box sequence did not settle");
    double ebox = std::abs(conv.lowest - zex);
    c.require(ebox <= 1e-7, "box misses the closed form by " + detail::eshort(ebox));

    r.pass = c.pass();
    r.detail = c.pass() ? "solver " + detail::eshort(ebs) + ", box " + detail::eshort(ebox)
                        : c.failures();
    return r;
}

/// d = 1 curve z(k) = 2 - sqrt(4 cos^2(k/2) + 1) on 33 points within 1e-9,
/// plus the strict two-sided bounds z(0) < z(k) < z(0) + [Emin(k) - Emin(0)]
/// at every nonzero k.  Budget 5 s.
inline CriterionResult chain_dispersion_curve() {
    CriterionResult r{"chain dispersion curve and strict bounds", false, 0.0, ""};
    detail::Check c;
    auto eps = detail::laplacian(1);
    auto v = detail::point_potential(1, -1.0);

    std::vector<QuasiMomentum> grid;
    for (int i = 0; i < 33; ++i) grid.emplace_back(std::vector<double>{-3.0 + 6.0 * i / 32.0});
    auto sweep = bs::dispersion_sweep(1.0, eps, v, grid);

    const std::size_t i0 = 16;  // k = 0
    c.require(sweep[i0].states.has_value() && sweep[i0].states->count() == 1,
              "no state at k = 0");
    double z0 = sweep[i0].states->states[0].z;
    double emin0 = sweep[i0].emin;
    double werr = 0.0;
    for (std::size_t i = 0; i < grid.size(); ++i) {
        const auto& entry = sweep[i];
        if (!entry.states || entry.states->count() != 1) {
            c.require(false, "missing state in the sweep");
            continue;
        }
        double kk = grid[i][0];
        double cs = std::cos(0.5 * kk);
        double zfit = 2.0 - std::sqrt(4.0 * cs * cs + 1.0);
        double z = entry.states->states[0].z;
        werr = std::max(werr, std::abs(z - zfit));
        c.require(std::abs(z - zfit) <= 1e-9, "curve error at k = " + std::to_string(kk));
        c.require(entry.states->count() <= static_cast<int>(entry.states->basis_size),
                  "count exceeds the interaction rank");
        if (i != i0) {
            c.require(z > z0, "lower strict bound fails at k = " + std::to_string(kk));
            c.require(z < z0 + (entry.emin - emin0),
                      "upper strict bound fails at k = " + std::to_string(kk));
        }
    }
    r.pass = c.pass();
    r.detail = c.pass() ? "max curve error " + detail::eshort(werr) : c.failures();
    return r;
}

/// d = 3 threshold constant at the origin across three independent evaluation
/// paths, 0.25273101 +- 1e-6 with mutually consistent error bars, and the
/// resulting critical coupling 3.95678 +- 2e-4.  Budget 30 s.
inline CriterionResult cubic_constant_cross_method() {
    CriterionResult r{"cubic lattice constant across methods", false, 0.0, ""};
    detail::Check c;
    const double ref = 0.25273101;
    auto eps = detail::laplacian(3);
    auto k0 = QuasiMomentum::zero(3);
    auto pair = pair_dispersion(eps, k0);
    std::vector<LatticeVector> origin{LatticeVector(3, 0)};

    auto tb = green::green_bessel(eps, k0, 0.0, origin);
    auto tp = green::green_polar(pair, 0.0, origin);
    green::QuadOptions eq;
    eq.grid = 512;  // the 1e-6 target needs no finer ladder, and it keeps the
                    // path well inside its time budget on slow hosts
    auto te = green::green_extrapolated(pair, origin, eq);
    struct Path {
        const char* name;
        double value;
        double err;
    } paths[] = {{"series", tb.value[0], tb.err},
                 {"quadrature", tp.value[0], tp.err},
                 {"extrapolation", te.value[0], te.err}};
    for (const auto& p : paths)
        c.require(std::abs(p.value - ref) <= 1e-6,
                  std::string(p.name) + " value off by " +
                      detail::eshort(std::abs(p.value - ref)));
    for (int a = 0; a < 3; ++a)
        for (int b = a + 1; b < 3; ++b)
            c.require(std::abs(paths[a].value - paths[b].value) <=
                          paths[a].err + paths[b].err + 1e-12,
                      std::string(paths[a].name) + " and " + paths[b].name +
                          " disagree beyond combined error bars");

    auto v = detail::point_potential(3, -1.0);
    double mustar = bs::critical_coupling(pair, v)[0];
    c.require(std::abs(mustar - 3.95678) <= 2e-4,
              "critical coupling off by " + detail::eshort(std::abs(mustar - 3.95678)));

    r.pass = c.pass();
    r.detail = c.pass() ? "spread " +
                              detail::eshort(std::abs(paths[0].value - paths[1].value)) +
                              ", critical coupling " + detail::eshort(mustar)
                        : c.failures();
    return r;
}

/// Counting equivalence: over {d = 1, 2, 3} x {delta, 3-point, 5-point} x
/// {3 couplings} x {5 quasi-momenta} x {20-point geometric energy ladder},
/// the number of solver eigenvalues above 1 equals the box count of
/// eigenvalues below z, exactly, in every cell.  Budget 600 s.
inline CriterionResult counting_equivalence() {
    CriterionResult r{"counting equivalence against finite boxes", false, 0.0, ""};
    detail::Check c;
    auto ladder = bs::geometric_gap_ladder(2.0, 1e-4, 20);

    struct DimCase {
        int d;
        int L;
        std::vector<std::vector<double>> ks;
    };
    const std::vector<DimCase> dims = {
        {1, 48, {{0.0}, {0.7}, {1.4}, {2.2}, {3.0}}},
        {2, 24, {{0.0, 0.0}, {0.8, 0.0}, {1.2, -0.6}, {2.0, 1.0}, {2.8, 1.5}}},
        {3, 7, {{0.0, 0.0, 0.0}, {0.6, 0.0, 0.0}, {0.9, 0.45, -0.3}, {1.2, 0.8, 0.2},
                {1.1, 1.1, 1.1}}}};
    auto couplings = [](int d, int kind) -> std::vector<double> {
        if (d == 1) return {0.7, 2.0, 6.0};
        if (d == 2) return {4.0, 7.0, 12.0};
        // the five-point interaction binds below mu = 2 in d = 3: stay clear
        return kind == 2 ? std::vector<double>{1.2, 8.0, 16.0}
                         : std::vector<double>{2.0, 8.0, 16.0};
    };

    int cells = 0, comparisons = 0;
    for (const auto& dc : dims) {
        auto eps = detail::laplacian(dc.d);
        for (int kind = 0; kind < 3; ++kind) {
            auto v = detail::family_potential(dc.d, kind);
            for (double mu : couplings(dc.d, kind)) {
                for (const auto& kc : dc.ks) {
                    QuasiMomentum k(kc);
                    auto pair = pair_dispersion(eps, k);
                    auto box = oracle::box_spectrum(eps, k, mu, v, dc.L, {6000, 2.5, 0});
                    ++cells;
                    for (double g : ladder) {
                        double z = pair.emin - g;
                        int nbs = bs::count_above_one(bs::build_bs_matrix(mu, pair, z, v));
                        int nbox = 0;
                        for (double e : box.below_margin)
                            if (e < z) ++nbox;
                        ++comparisons;
                        if (nbs != nbox) {
                            std::ostringstream os;
                            os << "d=" << dc.d << " kind=" << kind << " mu=" << mu
                               << " gap=" << g << ": solver " << nbs << " vs box " << nbox;
                            c.require(false, os.str());
                        }
                    }
                }
            }
        }
    }
    r.pass = c.pass();
    r.detail = c.pass() ? std::to_string(comparisons) + " comparisons over " +
                              std::to_string(cells) + " cells, all equal"
                        : c.failures();
    return r;
}

/// Threshold dichotomy at the d = 3 critical coupling: singular / resonance /
/// multiplicity one at k = 0, every nonzero grid point labeled fully
/// positive, exactly one state at five sampled nonzero k; at 0.9x the
/// coupling: regular, with the count locally constant on balls of radius
/// >= 0.2 in k and >= 0.05 in the coupling.  Budget 300 s.
inline CriterionResult threshold_dichotomy() {
    CriterionResult r{"threshold dichotomy and emission", false, 0.0, ""};
    detail::Check c;
    auto eps = detail::laplacian(3);
    auto v = detail::point_potential(3, -1.0);
    auto k0 = QuasiMomentum::zero(3);
    auto pair0 = pair_dispersion(eps, k0);
    double mustar = bs::critical_coupling(pair0, v)[0];

    auto rep = threshold::classify_threshold(mustar, pair0, v);
    c.require(rep.status == threshold::Status::singular, "critical point not singular");
    c.require(rep.kind == threshold::SolutionKind::resonance, "wrong solution kind");
    c.require(rep.multiplicity == 1, "wrong multiplicity");

    std::vector<QuasiMomentum> grid = {k0,
                                       QuasiMomentum({0.4, 0.0, 0.0}),
                                       QuasiMomentum({0.8, 0.3, 0.0}),
                                       QuasiMomentum({1.2, -0.5, 0.2}),
                                       QuasiMomentum({0.3, 0.3, 0.3}),
                                       QuasiMomentum({2.0, 1.0, 0.6}),
                                       QuasiMomentum({-0.9, 0.1, 1.4})};
    auto pm = threshold::phase_map(mustar, eps, k0, v, grid);
    c.require(pm.records[0].flat, "base point not neutral");
    for (std::size_t i = 1; i < pm.records.size(); ++i)
        c.require(pm.records[i].all_up && pm.records[i].error.empty(),
                  "grid point " + std::to_string(i) + " not fully positive");
    for (std::size_t i = 1; i <= 5; ++i) {
        auto st = bs::solve_bound_states(mustar, pair_dispersion(eps, grid[i]), v);
        c.require(st.count() == 1,
                  "expected exactly one emitted state at sample " + std::to_string(i));
    }

    auto reg = threshold::classify_threshold(0.9 * mustar, pair0, v);
    c.require(reg.status == threshold::Status::regular, "0.9x coupling not regular");
    auto stab = threshold::stability_scan(0.9 * mustar, eps, k0, v, {0.05, 0.1, 0.2},
                                          {0.0125, 0.025, 0.05});
    c.require(!stab.falsified && stab.count == 0, "count not stable near the regular point");
    c.require(stab.k_radius >= 0.2, "verified quasi-momentum radius below 0.2");
    c.require(stab.mu_radius >= 0.05, "verified coupling radius below 0.05");

    r.pass = c.pass();
    r.detail = c.pass() ? "singular n=1 at the critical coupling; stable ball radii " +
                              std::to_string(stab.k_radius) + " / " +
                              std::to_string(stab.mu_radius)
                        : c.failures();
    return r;
}

/// The bound-state count never exceeds the even-orbit rank of the
/// interaction, across dimensions, potentials and deep couplings.
inline CriterionResult rank_bound() {
    CriterionResult r{"rank bound on bound-state counts", false, 0.0, ""};
    detail::Check c;
    int checked = 0;
    for (int d : {1, 2, 3}) {
        auto eps = detail::laplacian(d);
        for (int kind = 0; kind < 3; ++kind) {
            auto v = detail::family_potential(d, kind);
            auto m = bs::build_even_basis(v).size();
            for (double mu : {0.5, 6.0, 30.0}) {
                auto st = bs::solve_bound_states(mu, pair_dispersion(eps, QuasiMomentum::zero(d)), v);
                ++checked;
                c.require(st.count() <= static_cast<int>(m),
                          "count exceeds rank at d=" + std::to_string(d) +
                              " kind=" + std::to_string(kind));
                c.require(st.basis_size == m, "basis bookkeeping mismatch");
            }
        }
    }
    // at deep coupling the bound saturates: rank-many states
    auto eps1 = detail::laplacian(1);
    auto v2 = Potential(1, {{{0}, -1.0}, {{1}, -1.0}});
    auto deep = bs::solve_bound_states(50.0, pair_dispersion(eps1, QuasiMomentum::zero(1)), v2);
    c.require(deep.count() == 2, "deep-coupling count does not saturate the rank");

    r.pass = c.pass();
    r.detail = c.pass() ? std::to_string(checked) + " solves within rank, saturation at rank 2"
                        : c.failures();
    return r;
}

/// Arbitrarily weak attraction binds in d = 1 and d = 2: a -1e-3 point
/// potential at mu = 1 yields a state at k = 0, (1, 0...), (2, 0...).
/// Budget 120 s.
inline CriterionResult weak_coupling_existence() {
    CriterionResult r{"weak-coupling existence in low dimension", false, 0.0, ""};
    detail::Check c;
    double deepest_log = 0.0;
    for (int d : {1, 2}) {
        auto eps = detail::laplacian(d);
        auto v = detail::point_potential(d, -1e-3);
        for (double kfirst : {0.0, 1.0, 2.0}) {
            std::vector<double> comps(d, 0.0);
            comps[0] = kfirst;
            auto st = bs::solve_bound_states(1.0, pair_dispersion(eps, QuasiMomentum(comps)), v);
            c.require(st.count() >= 1, "no state at d=" + std::to_string(d) +
                                           " k=" + std::to_string(kfirst));
            c.require(!st.shallow_unresolved, "shallow state left unresolved");
            if (st.count()) deepest_log = std::min(deepest_log, st.states[0].log_gap);
        }
    }
    r.pass = c.pass();
    r.detail = c.pass() ? "all six points bind; smallest log-gap " + detail::eshort(deepest_log)
                        : c.failures();
    return r;
}

/// Direct-integral decomposition on the ring of 8 sites: the full two-body
/// spectrum equals the union of the fiber spectra as a multiset to 1e-10.
/// Budget 10 s.
inline CriterionResult fiber_decomposition() {
    CriterionResult r{"periodic fiber decomposition", false, 0.0, ""};
    detail::Check c;
    auto eps = detail::laplacian(1);
    auto v = detail::point_potential(1, -1.0);
    auto rep = oracle::periodic_fiber_check(8, 1.0, v, eps);
    c.require(rep.pass, "multiset mismatch " + detail::eshort(rep.max_mismatch));
    c.require(rep.max_mismatch <= 1e-10, "mismatch above 1e-10");
    c.require(rep.full_dim == rep.fiber_dim_total, "dimension bookkeeping broken");
    r.pass = c.pass();
    r.detail = c.pass() ? "36 levels match to " + detail::eshort(rep.max_mismatch)
                        : c.failures();
    return r;
}

/// Threshold solutions: the reconstructed d = 3 resonance satisfies the
/// eigenvalue equation to 1e-6 of its peak and its shell sums do not decay
/// (non-square-summable), while the d = 5 solution is square-summable.
inline CriterionResult solution_residual_and_decay() {
    CriterionResult r{"threshold solution residual and decay", false, 0.0, ""};
    detail::Check c;

    auto shell_sums = [](const threshold::ThresholdSolution& s, int w) {
        std::vector<double> S(w + 1, 0.0);
        for (std::size_t i = 0; i < s.reps.size(); ++i) {
            double wgt = is_zero(s.reps[i]) ? 1.0 : 2.0;
            S[max_abs_component(s.reps[i])] += wgt * s.value[i] * s.value[i];
        }
        return S;
    };

    auto eps3 = detail::laplacian(3);
    auto v3 = detail::point_potential(3, -1.0);
    auto pair3 = pair_dispersion(eps3, QuasiMomentum::zero(3));
    double mu3 = bs::critical_coupling(pair3, v3)[0];
    auto rep3 = threshold::classify_threshold(mu3, pair3, v3);
    auto sol3 = threshold::reconstruct_threshold_solution(rep3, eps3, v3, 12);
    c.require(sol3.residual_max <= 1e-6,
              "d=3 residual " + detail::eshort(sol3.residual_max));
    c.require(!sol3.window_too_small, "d=3 window too small");
    c.require(sol3.decay_tag == "vanishing-at-infinity", "d=3 decay tag wrong");
    auto S3 = shell_sums(sol3, 12);
    c.require(S3[12] > 0.9 * S3[6] && S3[12] > 1.0,
              "d=3 shell sums decay (should stay bounded below)");

    auto eps5 = detail::laplacian(5);
    auto v5 = detail::point_potential(5, -1.0);
    auto pair5 = pair_dispersion(eps5, QuasiMomentum::zero(5));
    double mu5 = bs::critical_coupling(pair5, v5)[0];
    auto rep5 = threshold::classify_threshold(mu5, pair5, v5);
    c.require(rep5.kind == threshold::SolutionKind::eigenvalue, "d=5 kind wrong");
    auto sol5 = threshold::reconstruct_threshold_solution(rep5, eps5, v5, 3);
    c.require(sol5.residual_max <= 1e-6,
              "d=5 residual " + detail::eshort(sol5.residual_max));
    c.require(sol5.decay_tag == "square-summable", "d=5 decay tag wrong");
    auto S5 = shell_sums(sol5, 3);
    c.require(S5[3] < 0.1 * S5[1], "d=5 shell sums do not decay");

    r.pass = c.pass();
    r.detail = c.pass() ? "residuals " + detail::eshort(sol3.residual_max) + " / " +
                              detail::eshort(sol5.residual_max)
                        : c.failures();
    return r;
}

inline SuiteResult run_suite(std::ostream& log) {
    struct Entry {
        const char* name;
        CriterionResult (*fn)();
        double budget;  // seconds; 0 = unlimited
    };
    const std::vector<Entry> plan = {
        {"chain closed-form bound state", chain_closed_form, 1.0},
        {"chain dispersion curve and strict bounds", chain_dispersion_curve, 5.0},
        {"cubic lattice constant across methods", cubic_constant_cross_method, 30.0},
        {"counting equivalence against finite boxes", counting_equivalence, 600.0},
        {"threshold dichotomy and emission", threshold_dichotomy, 300.0},
        {"rank bound on bound-state counts", rank_bound, 0.0},
        {"weak-coupling existence in low dimension", weak_coupling_existence, 120.0},
        {"periodic fiber decomposition", fiber_decomposition, 10.0},
        {"threshold solution residual and decay", solution_residual_and_decay, 0.0},
    };

    SuiteResult suite;
    for (const auto& entry : plan) {
        auto t0 = std::chrono::steady_clock::now();
        CriterionResult res;
        try {
            res = entry.fn();
        } catch (const std::exception& ex) {
            res.pass = false;
            res.detail = std::string("exception: ") + ex.what();
        }
        res.name = entry.name;
        res.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        if (entry.budget > 0.0 && res.seconds > entry.budget) {
            res.pass = false;
            res.detail += (res.detail.empty() ? "" : "; ") + std::string("over the ") +
                          detail::eshort(entry.budget) + " s budget";
        }
        char line[512];
        std::snprintf(line, sizeof line, "[%s] %-45s %7.2f s  %s", res.pass ? "PASS" : "FAIL",
                      res.name.c_str(), res.seconds, res.detail.c_str());
        log << line << "\n" << std::flush;
        suite.all_pass = suite.all_pass && res.pass;
        suite.criteria.push_back(std::move(res));
    }
    log << (suite.all_pass ? "all criteria satisfied" : "CRITERIA FAILED") << "\n";
    return suite;
}

}  // namespace latthresh::validate
