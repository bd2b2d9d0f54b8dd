#include "latthresh/threshold.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <cmath>

using namespace latthresh;

namespace {

// value of the d = 3 simple-cubic lattice integral int (3 - sum cos p_j)^{-1},
// normalized to our dispersion scale, and its reciprocal
constexpr double kWatson3 = 0.2527310098586630;
constexpr double kMuStar3 = 3.956776022694005;

DispersionRelation laplacian(int d) {
    std::vector<std::pair<LatticeVector, double>> t;
    t.emplace_back(LatticeVector(d, 0), double(d));
    for (int j = 0; j < d; ++j) {
        LatticeVector e(d, 0);
        e[j] = 1;
        t.emplace_back(e, -0.5);
    }
    return DispersionRelation(d, t);
}

Potential point_potential(int d) { return Potential(d, {{LatticeVector(d, 0), -1.0}}); }

Potential four_orbit_potential() {
    return Potential(3, {{{0, 0, 0}, -1.0},
                         {{1, 0, 0}, -1.0},
                         {{0, 1, 0}, -1.0},
                         {{0, 0, 1}, -1.0}});
}

}  // namespace

TEST_CASE("classification at and away from the critical coupling") {
    auto eps = laplacian(3);
    auto v = point_potential(3);
    auto pd = pair_dispersion(eps, QuasiMomentum::zero(3));

    auto crit = threshold::classify_threshold(kMuStar3, pd, v);
    CHECK(crit.status == threshold::Status::singular);
    CHECK(crit.kind == threshold::SolutionKind::resonance);
    CHECK(crit.multiplicity == 1);
    CHECK(crit.gap <= crit.tau_sing);
    CHECK(crit.gap < 1e-10);
    REQUIRE(crit.eigenspace.cols() == 1);
    CHECK(std::abs(crit.eigenspace.col(0).norm() - 1.0) < 1e-12);
    CHECK(crit.green_err > 0.0);
    CHECK(crit.tau_sing >= 1e-8);

    // at mu = 2 the gap is |2 R - 1| with R the lattice integral above
    auto reg = threshold::classify_threshold(2.0, pd, v);
    CHECK(reg.status == threshold::Status::regular);
    CHECK(reg.multiplicity == 0);
    CHECK(reg.kind == threshold::SolutionKind::none);
    CHECK(reg.gap == Catch::Approx(1.0 - 2.0 * kWatson3).margin(1e-8));

    // five dimensions: a singular threshold carries a genuine eigenvector
    auto eps5 = laplacian(5);
    auto v5 = point_potential(5);
    auto pd5 = pair_dispersion(eps5, QuasiMomentum::zero(5));
    double mu5 = bs::critical_coupling(pd5, v5)[0];
    auto sing5 = threshold::classify_threshold(mu5, pd5, v5);
    CHECK(sing5.status == threshold::Status::singular);
    CHECK(sing5.kind == threshold::SolutionKind::eigenvalue);
}

TEST_CASE("classification tolerance band") {
    auto eps = laplacian(3);
    auto v = point_potential(3);
    auto pd = pair_dispersion(eps, QuasiMomentum::zero(3));

    // just inside the singular band
    auto a = threshold::classify_threshold(kMuStar3 * (1.0 + 5e-9), pd, v);
    CHECK(a.status == threshold::Status::singular);
    // just beyond it, but within the quadrature error bar: undecidable
    auto b = threshold::classify_threshold(kMuStar3 * (1.0 + 1.00005e-8), pd, v);
    CHECK(b.status == threshold::Status::inconclusive);
    CHECK(b.multiplicity == 0);
    // clearly beyond
    auto c = threshold::classify_threshold(kMuStar3 * (1.0 + 1e-6), pd, v);
    CHECK(c.status == threshold::Status::regular);
}

TEST_CASE("lambda form equals the difference of threshold matrices") {
    // Both B_1(k, emin(k)) and B_1(k0, emin(k0)) are computed from single
    // resolvent tables; the form matrix comes from double-denominator
    // quadrature.  The two must agree identically:
    //   1/A - 1/B = (B - A)/(A B) applied to the two pair symbols.
    auto eps = laplacian(3);
    QuasiMomentum k({0.6, -0.3, 0.2});
    QuasiMomentum k0 = QuasiMomentum::zero(3);
    auto pdk = pair_dispersion(eps, k);
    auto pd0 = pair_dispersion(eps, k0);

    for (const auto& v : {point_potential(3), four_orbit_potential()}) {
        auto lf = threshold::build_lambda(v, pdk, pd0);
        auto bk = bs::build_bs_matrix(1.0, pdk, pdk.emin, v);
        auto b0 = bs::build_bs_matrix(1.0, pd0, pd0.emin, v);
        Eigen::MatrixXd diff = bk.entries - b0.entries;
        REQUIRE((lf.matrix - diff).norm() <= 1e-10);
        CHECK((lf.matrix - lf.matrix.transpose()).norm() <= 1e-12 * (1.0 + lf.matrix.norm()));
    }
}

TEST_CASE("lambda base point, momentum parity and kernel positivity") {
    auto eps = laplacian(3);
    auto v = four_orbit_potential();
    QuasiMomentum k({0.8, 0.4, -0.9});
    QuasiMomentum mk({-0.8, -0.4, 0.9});
    QuasiMomentum k0({0.3, 0.1, 0.0});
    auto pdk = pair_dispersion(eps, k);
    auto pdmk = pair_dispersion(eps, mk);
    auto pd0 = pair_dispersion(eps, k0);

    // vanishes identically at the base point
    auto base = threshold::build_lambda(v, pd0, pd0);
    CHECK(base.matrix.norm() == 0.0);

    // even in the quasi-momentum argument
    auto lp = threshold::build_lambda(v, pdk, pd0);
    auto lm = threshold::build_lambda(v, pdmk, pd0);
    CHECK((lp.matrix - lm.matrix).norm() <= 1e-13 * (1.0 + lp.matrix.norm()));

    // each per-offset kernel block is positive semidefinite
    for (const LatticeVector& s : {LatticeVector{1, 0, 0}, LatticeVector{0, 0, 1}}) {
        auto cs = threshold::cs_matrix(v, pdk, pd0, s);
        auto ce = bs::descending_eigs(cs);
        CHECK(ce.back() >= -1e-12 * std::max(1.0, ce.front()));
    }
}

TEST_CASE("phase map labels emission directions at the critical point") {
    auto eps = laplacian(3);
    auto v = point_potential(3);
    QuasiMomentum k0 = QuasiMomentum::zero(3);

    std::vector<QuasiMomentum> grid = {k0,
                                       QuasiMomentum({0.5, 0.0, 0.0}),
                                       QuasiMomentum({1.0, 0.5, -0.3}),
                                       QuasiMomentum({2.9, 1.0, 1.0}),
                                       QuasiMomentum({0.3, 0.3, 0.3}),
                                       QuasiMomentum({-0.7, 0.2, 0.0})};
    auto pm = threshold::phase_map(kMuStar3, eps, k0, v, grid);
    REQUIRE(pm.records.size() == grid.size());
    CHECK(pm.multiplicity == 1);
    CHECK(pm.tau > 0.0);

    CHECK(pm.records[0].label == "flat");
    CHECK(pm.records[0].flat);
    for (std::size_t i = 1; i < pm.records.size(); ++i) {
        INFO("grid point " << i);
        CHECK(pm.records[i].label == "up");
        CHECK(pm.records[i].all_up);
        CHECK(pm.records[i].lmin_proj > pm.tau);
    }
    // one-sided implication: a fully positive eigenspace is in particular
    // positive in some direction
    for (const auto& r : pm.records) CHECK((!r.all_up || r.some_up));

    // emission: a positive direction at nonzero k produces exactly the one
    // predicted state for the rank-one interaction
    for (std::size_t i : {std::size_t{1}, std::size_t{3}}) {
        auto states = bs::solve_bound_states(kMuStar3, pair_dispersion(eps, grid[i]), v);
        CHECK(states.count() == 1);
    }

    // a regular center is rejected
    CHECK_THROWS_AS(threshold::phase_map(2.0, eps, k0, v, grid), HypothesisError);
}

TEST_CASE("negative phase region means no emission") {
    auto eps = laplacian(3);
    auto v = point_potential(3);
    QuasiMomentum kc({1.2, 0.6, 0.3});
    auto pdc = pair_dispersion(eps, kc);
    double mu = bs::critical_coupling(pdc, v)[0];
    REQUIRE(threshold::classify_threshold(mu, pdc, v).status == threshold::Status::singular);

    std::vector<QuasiMomentum> grid = {QuasiMomentum::zero(3),
                                       QuasiMomentum({0.05, 0.0, 0.0}),
                                       QuasiMomentum({2.0, 1.2, 0.8})};
    auto pm = threshold::phase_map(mu, eps, kc, v, grid);
    CHECK(pm.records[0].label == "down");
    CHECK(pm.records[0].all_down);
    CHECK(pm.records[1].all_down);
    CHECK(pm.records[2].label == "up");

    // fully negative form: nothing below the threshold at that k
    auto at0 = bs::solve_bound_states(mu, pair_dispersion(eps, grid[0]), v);
    CHECK(at0.count() == 0);
    // and the positive direction does emit
    auto far = bs::solve_bound_states(mu, pair_dispersion(eps, grid[2]), v);
    CHECK(far.count() >= 1);
}

TEST_CASE("degenerate eigenspace bookkeeping adds emitted to existing states") {
    auto eps = laplacian(3);
    auto v = four_orbit_potential();
    QuasiMomentum k0 = QuasiMomentum::zero(3);
    auto pd0 = pair_dispersion(eps, k0);

    auto mus = bs::critical_coupling(pd0, v);
    REQUIRE(mus.size() == 4);
    // cubic symmetry makes the second and third branches coincide at k = 0
    CHECK(mus[1] == Catch::Approx(mus[2]).margin(1e-9));

    auto rep = threshold::classify_threshold(mus[1], pd0, v);
    REQUIRE(rep.status == threshold::Status::singular);
    CHECK(rep.multiplicity == 2);
    Eigen::MatrixXd gram =
        rep.eigenspace.transpose() * rep.eigenspace - Eigen::MatrixXd::Identity(2, 2);
    CHECK(gram.norm() < 1e-12);

    // one state is already bound at the center
    auto center = bs::solve_bound_states(mus[1], pd0, v);
    CHECK(center.count() == 1);

    // where the projected form is positive definite, the whole degenerate
    // pair is emitted on top of it: exactly 1 + 2 states
    std::vector<QuasiMomentum> grid = {QuasiMomentum({0.4, 0.4, 0.4}),
                                       QuasiMomentum({0.9, 0.2, 0.5})};
    auto pm = threshold::phase_map(mus[1], eps, k0, v, grid);
    for (std::size_t i = 0; i < grid.size(); ++i) {
        INFO("grid point " << i);
        REQUIRE(pm.records[i].all_up);
        auto moved = bs::solve_bound_states(mus[1], pair_dispersion(eps, grid[i]), v);
        CHECK(moved.count() == 3);
    }

    // away from the symmetric point the branches split and the same story
    // holds with a one-dimensional eigenspace
    QuasiMomentum kc({0.9, 0.4, 0.2});
    auto pdc = pair_dispersion(eps, kc);
    auto musc = bs::critical_coupling(pdc, v);
    CHECK(std::abs(musc[1] - musc[2]) > 1e-3);
    auto repc = threshold::classify_threshold(musc[1], pdc, v);
    CHECK(repc.multiplicity == 1);
    CHECK(bs::solve_bound_states(musc[1], pdc, v).count() == 1);
    auto out = bs::solve_bound_states(
        musc[1], pair_dispersion(eps, QuasiMomentum({1.4, 0.9, 0.7})), v);
    CHECK(out.count() >= 2);
}

TEST_CASE("threshold solution reconstruction and decay") {
    auto eps = laplacian(3);
    auto v = point_potential(3);
    auto pd = pair_dispersion(eps, QuasiMomentum::zero(3));
    auto rep = threshold::classify_threshold(kMuStar3, pd, v);
    REQUIRE(rep.status == threshold::Status::singular);

    auto sol = threshold::reconstruct_threshold_solution(rep, eps, v, 12);
    CHECK(sol.residual_max <= 1e-6);
    CHECK(sol.boundary_max < 0.1);
    CHECK_FALSE(sol.window_too_small);
    CHECK(sol.decay_tag == "vanishing-at-infinity");
    CHECK(sol.value_at({0, 0, 0}) == 1.0);  // normalized peak
    CHECK(sol.value_at({3, -2, 1}) == sol.value_at({-3, 2, -1}));

    // sup-norm shell sums of |f|^2: for the resonance they stay bounded away
    // from zero (the partial sums diverge linearly), and every value is
    // positive since the kernel and the ground-state vector are
    auto shell_sums = [](const threshold::ThresholdSolution& s, int w) {
        std::vector<double> S(w + 1, 0.0);
        for (std::size_t i = 0; i < s.reps.size(); ++i) {
            double wgt = is_zero(s.reps[i]) ? 1.0 : 2.0;
            S[max_abs_component(s.reps[i])] += wgt * s.value[i] * s.value[i];
        }
        return S;
    };
    auto S = shell_sums(sol, 12);
    CHECK(S[12] > 0.9 * S[6]);
    CHECK(S[12] > 1.0);  // non-vanishing increments
    for (double val : sol.value) CHECK(val > 0.0);

    // d = 5: the threshold solution is square-summable and the shell sums die
    auto eps5 = laplacian(5);
    auto v5 = point_potential(5);
    auto pd5 = pair_dispersion(eps5, QuasiMomentum::zero(5));
    double mu5 = bs::critical_coupling(pd5, v5)[0];
    auto rep5 = threshold::classify_threshold(mu5, pd5, v5);
    auto sol5 = threshold::reconstruct_threshold_solution(rep5, eps5, v5, 3);
    CHECK(sol5.residual_max <= 1e-6);
    CHECK(sol5.decay_tag == "square-summable");
    auto S5 = shell_sums(sol5, 3);
    CHECK(S5[3] < 0.1 * S5[1]);
    CHECK(S5[3] < 0.05 * S5[0]);
}

TEST_CASE("stability scan around regular points") {
    auto eps = laplacian(3);
    auto v = point_potential(3);
    QuasiMomentum k0 = QuasiMomentum::zero(3);

    // comfortably subcritical: zero states, stable over the whole request
    auto rep = threshold::stability_scan(0.9 * kMuStar3, eps, k0, v, {0.05, 0.1, 0.2},
                                         {0.0125, 0.025, 0.05});
    CHECK(rep.count == 0);
    CHECK(rep.k_radius == Catch::Approx(0.2));
    CHECK(rep.mu_radius == Catch::Approx(0.05));
    CHECK_FALSE(rep.falsified);
    CHECK(rep.detail.empty());

    // barely supercritical: lowering the coupling by the first scan radius
    // crosses the critical value and the count drops
    auto fals = threshold::stability_scan(1.001 * kMuStar3, eps, k0, v, {0.05},
                                          {0.0125, 0.025});
    CHECK(fals.count == 1);
    CHECK(fals.k_radius == Catch::Approx(0.05));
    CHECK(fals.mu_radius == 0.0);
    CHECK(fals.falsified);
    CHECK_FALSE(fals.detail.empty());
}

TEST_CASE("threshold preconditions are enforced") {
    auto eps2 = laplacian(2);
    auto v2 = point_potential(2);
    auto pd2 = pair_dispersion(eps2, QuasiMomentum::zero(2));
    CHECK_THROWS_AS(threshold::classify_threshold(1.0, pd2, v2), HypothesisError);

    auto eps = laplacian(3);
    auto v = point_potential(3);
    auto pd = pair_dispersion(eps, QuasiMomentum::zero(3));
    auto regular = threshold::classify_threshold(2.0, pd, v);
    CHECK_THROWS_AS(threshold::reconstruct_threshold_solution(regular, eps, v, 8),
                    HypothesisError);

    auto singular = threshold::classify_threshold(kMuStar3, pd, v);
    CHECK_THROWS_AS(threshold::reconstruct_threshold_solution(singular, eps, v, 8, 1),
                    std::invalid_argument);
    CHECK_THROWS_AS(threshold::reconstruct_threshold_solution(singular, eps, v, 1),
                    std::invalid_argument);
    CHECK_THROWS_AS(
        threshold::stability_scan(kMuStar3, eps, QuasiMomentum::zero(3), v, {0.1}, {0.01}),
        HypothesisError);
}
