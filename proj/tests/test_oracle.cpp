#include "latthresh/oracle.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <cmath>

using namespace latthresh;

TEST_CASE("free box spectrum stays above the threshold") {
    for (int d : {1, 2}) {
        auto eps = laplacian_dispersion(d);
        Potential v(d, {{LatticeVector(d, 0), -1.0}});
        for (auto kc : {0.0, 0.9}) {
            QuasiMomentum k(std::vector<double>(d, kc));
            int L = d == 1 ? 30 : 12;
            auto s = oracle::box_spectrum(eps, k, 0.0, v, L);
            CHECK(s.bound.empty());
            for (double e : s.below_margin) CHECK(e > s.emin - 1e-12);
        }
    }
    // Dirichlet sections grow with L: the lowest free eigenvalue decreases
    // toward emin from above
    auto eps = laplacian_dispersion(1);
    Potential v(1, {{{0}, -1.0}});
    auto k = QuasiMomentum::zero(1);
    auto a = oracle::box_spectrum(eps, k, 0.0, v, 20);
    auto b = oracle::box_spectrum(eps, k, 0.0, v, 40);
    REQUIRE_FALSE(a.below_margin.empty());
    REQUIRE_FALSE(b.below_margin.empty());
    CHECK(b.below_margin.front() <= a.below_margin.front());
    CHECK(b.below_margin.front() > a.emin);
    CHECK(b.below_margin.front() - a.emin < 0.02);
}

TEST_CASE("box reproduces the one-dimensional closed form") {
    auto eps = laplacian_dispersion(1);
    Potential v(1, {{{0}, -1.0}});
    auto k = QuasiMomentum::zero(1);
    const double zex = 2.0 - std::sqrt(5.0);

    auto s = oracle::box_spectrum(eps, k, 1.0, v, 40);
    REQUIRE(s.bound.size() == 1);
    CHECK(s.bound[0] == Catch::Approx(zex).margin(1e-8));
    CHECK(s.bound[0] >= zex - 1e-12);  // hard walls only push energies up

    auto conv = oracle::convergence_rule(eps, k, 1.0, v);
    CHECK(conv.converged);
    CHECK(conv.err < 1e-9);
    CHECK(conv.lowest == Catch::Approx(zex).margin(1e-9));
}

TEST_CASE("lowest box eigenvalue is monotone in coupling and box size") {
    auto eps = laplacian_dispersion(2);
    Potential v(2, {{{0, 0}, -1.0}, {{1, 0}, -0.5}, {{0, 1}, -0.5}});
    QuasiMomentum k({0.4, -0.2});
    double prev = std::numeric_limits<double>::infinity();
    for (double mu : {1.0, 2.0, 4.0}) {
        auto s = oracle::box_spectrum(eps, k, mu, v, 14);
        REQUIRE_FALSE(s.below_margin.empty());
        CHECK(s.below_margin.front() <= prev + 1e-13);
        prev = s.below_margin.front();
    }
    double prev_l = std::numeric_limits<double>::infinity();
    for (int L : {8, 12, 16}) {
        auto s = oracle::box_spectrum(eps, k, 3.0, v, L);
        REQUIRE_FALSE(s.below_margin.empty());
        CHECK(s.below_margin.front() <= prev_l + 1e-13);
        prev_l = s.below_margin.front();
    }
}

TEST_CASE("convergence rule reports its failure modes") {
    // d = 3 subcritical coupling: no bound state to converge to
    auto eps3 = laplacian_dispersion(3);
    Potential v3(3, {{{0, 0, 0}, -1.0}});
    oracle::BoxOptions small;
    small.basis_cap = 500;
    CHECK_THROWS_AS(oracle::convergence_rule(eps3, QuasiMomentum::zero(3), 1.0, v3, small),
                    HypothesisError);

    // guards
    CHECK_THROWS_AS(oracle::box_spectrum(eps3, QuasiMomentum::zero(3), 1.0, v3, 12),
                    ResourceError);
    Potential wide(1, {{{0}, -1.0}, {{3}, -0.5}});
    auto eps1 = laplacian_dispersion(1);
    CHECK_THROWS_AS(oracle::build_box(eps1, QuasiMomentum::zero(1), 1.0, wide, 2),
                    std::invalid_argument);
}

TEST_CASE("periodic two-body spectrum equals the union of fiber spectra") {
    auto eps = laplacian_dispersion(1);

    SECTION("free case, N = 6") {
        Potential v(1, {{{0}, -1.0}});
        auto rep = oracle::periodic_fiber_check(6, 0.0, v, eps);
        CHECK(rep.pass);
        CHECK(rep.max_mismatch < 1e-12);
        CHECK(rep.full_dim == 21);
        CHECK(rep.fiber_dim_total == 21);
    }

    SECTION("delta potential, N = 8") {
        Potential v(1, {{{0}, -1.0}});
        auto rep = oracle::periodic_fiber_check(8, 1.0, v, eps);
        CHECK(rep.pass);
        CHECK(rep.max_mismatch <= 1e-10);
        CHECK(rep.full_dim == 36);
        CHECK(rep.fiber_dim_total == 36);
    }

    SECTION("three-point potential, odd N") {
        Potential v(1, {{{0}, -0.8}, {{1}, -0.3}});
        auto rep = oracle::periodic_fiber_check(7, 1.7, v, eps);
        CHECK(rep.pass);
        CHECK(rep.full_dim == 28);
        CHECK(rep.fiber_dim_total == 28);
    }

    SECTION("rejects out-of-scope requests") {
        Potential v(1, {{{0}, -1.0}});
        CHECK_THROWS_AS(oracle::periodic_fiber_check(2, 1.0, v, eps), std::invalid_argument);
        CHECK_THROWS_AS(oracle::periodic_fiber_check(13, 1.0, v, eps), std::invalid_argument);
        Potential v2(2, {{{0, 0}, -1.0}});
        CHECK_THROWS_AS(
            oracle::periodic_fiber_check(8, 1.0, v2, laplacian_dispersion(2)),
            std::invalid_argument);
    }
}
