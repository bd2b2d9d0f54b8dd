#include "latthresh/model.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <complex>
#include <random>

using namespace latthresh;

namespace {

// Test-local quadrature oracle: plain tensor trapezoid on n points per axis,
// independent of the algebraic coefficient formula it checks.
double fourier_coeff_by_quadrature(const DispersionRelation& eps, const QuasiMomentum& k,
                                   const LatticeVector& s, int n) {
    const int d = eps.dim();
    std::vector<double> kh = k.half();
    long total = 1;
    for (int j = 0; j < d; ++j) total *= n;
    std::complex<double> acc(0.0, 0.0);
    std::vector<double> p(d), plus(d), minus(d);
    for (long t = 0; t < total; ++t) {
        long rem = t;
        for (int j = 0; j < d; ++j) {
            p[j] = -pi + (rem % n) * (two_pi / n);
            rem /= n;
            plus[j] = kh[j] + p[j];
            minus[j] = kh[j] - p[j];
        }
        double ek = eps.evaluate(plus) + eps.evaluate(minus);
        acc += ek * std::exp(std::complex<double>(0.0, -dot(p, s)));
    }
    return (acc / static_cast<double>(total)).real();
}

}  // namespace

TEST_CASE("dispersion evaluation matches closed forms") {
    auto lap1 = laplacian_dispersion(1);
    CHECK(eval_dispersion(lap1, std::vector<double>{0.0}) == Catch::Approx(0.0).margin(1e-15));
    CHECK(eval_dispersion(lap1, std::vector<double>{pi / 2}) == Catch::Approx(1.0).epsilon(1e-14));

    auto lap3 = laplacian_dispersion(3);
    CHECK(eval_dispersion(lap3, std::vector<double>{pi, pi, pi}) == Catch::Approx(6.0).epsilon(1e-14));

    DispersionRelation cosine(1, {{{1}, 0.5}});  // eps(p) = cos p
    CHECK(eval_dispersion(cosine, std::vector<double>{0.3}) == Catch::Approx(std::cos(0.3)).epsilon(1e-14));
}

TEST_CASE("dispersion table is symmetrized and validated") {
    DispersionRelation e(2, {{{0, 0}, 2.0}, {{-1, 0}, -0.5}});
    CHECK(e.coefficient({1, 0}) == -0.5);
    CHECK(e.coefficient({-1, 0}) == -0.5);
    CHECK(e.coefficient({0, 1}) == 0.0);
    CHECK_THROWS_AS(DispersionRelation(2, {{{1, 0}, 1.0}, {{-1, 0}, 2.0}}), std::invalid_argument);
    CHECK_THROWS_AS(DispersionRelation(2, {{{1}, 1.0}}), std::invalid_argument);

    CHECK(laplacian_dispersion(2).nearest_neighbor());
    CHECK_FALSE(DispersionRelation(2, {{{1, 1}, -0.25}}).nearest_neighbor());
}

TEST_CASE("potential validates sign and evenness") {
    Potential v(1, {{{0}, -1.0}});
    CHECK(v.value({0}) == -1.0);
    CHECK_THROWS_AS(Potential(1, {{{0}, 0.5}}), std::invalid_argument);
    Potential v2(2, {{{1, 0}, -0.25}});
    CHECK(v2.value({-1, 0}) == -0.25);
}

TEST_CASE("quasi-momentum reduces to [-pi, pi)") {
    QuasiMomentum k({3.0 * pi, -pi});
    CHECK(k[0] == Catch::Approx(-pi));
    CHECK(k[1] == Catch::Approx(-pi));
    QuasiMomentum k2({0.25});
    CHECK(k2[0] == 0.25);
}

TEST_CASE("pair dispersion extrema, Laplacian closed forms") {
    auto lap1 = laplacian_dispersion(1);

    auto pd0 = pair_dispersion(lap1, QuasiMomentum::zero(1));
    CHECK(pd0.emin == Catch::Approx(0.0).margin(1e-14));
    CHECK(pd0.emax == Catch::Approx(4.0).epsilon(1e-14));
    CHECK(pd0.minimizer[0] == Catch::Approx(0.0).margin(1e-12));
    CHECK(pd0.certified());

    // Flat band at k = pi: E is constant, minimum degenerate.
    auto pdpi = pair_dispersion(lap1, QuasiMomentum({pi}));
    CHECK(pdpi.emin == Catch::Approx(2.0).epsilon(1e-14));
    CHECK(pdpi.emax == Catch::Approx(2.0).epsilon(1e-14));
    CHECK_FALSE(pdpi.certified());

    auto lap2 = laplacian_dispersion(2);
    auto pd2 = pair_dispersion(lap2, QuasiMomentum({pi / 2, 0.0}));
    CHECK(pd2.emin == Catch::Approx(2.0 - std::sqrt(2.0)).epsilon(1e-13));
    CHECK(pd2.minimizer[0] == Catch::Approx(0.0).margin(1e-12));
    CHECK(pd2.minimizer[1] == Catch::Approx(0.0).margin(1e-12));
    CHECK(pd2.certified());

    // General k in G: minimizer at 0, E_min(k) = 2 eps(k/2).
    auto lap3 = laplacian_dispersion(3);
    for (auto kv : {std::vector<double>{0.3, -1.1, 2.0}, std::vector<double>{1.9, 0.0, -0.4}}) {
        QuasiMomentum k(kv);
        auto pd = pair_dispersion(lap3, k);
        CHECK(pd.certified());
        double expected = 2.0 * eval_dispersion(lap3, k.half());
        CHECK(pd.emin == Catch::Approx(expected).margin(1e-13));
        for (int j = 0; j < 3; ++j) CHECK(std::abs(pd.minimizer[j]) < 1e-12);
    }
}

TEST_CASE("pair dispersion handles a non-separable dispersion") {
    // eps(p) = 1 - cos p1 - 0.4 cos(p1 + p2) + 0.4: support {0, +-e1, +-(1,1)}.
    DispersionRelation e(2, {{{0, 0}, 1.4}, {{1, 0}, -0.5}, {{1, 1}, -0.2}});
    QuasiMomentum k({0.7, -0.3});
    auto pd = pair_dispersion(e, k);
    // The symbol is even; the refined minimum should not exceed any sample.
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> u(-pi, pi);
    for (int it = 0; it < 2000; ++it) {
        std::vector<double> p{u(rng), u(rng)};
        double v = pd.evaluate(p);
        CHECK(v >= pd.emin - 1e-9);
        CHECK(v <= pd.emax + 1e-9);
        std::vector<double> mp{-p[0], -p[1]};
        CHECK(pd.evaluate(p) == Catch::Approx(pd.evaluate(mp)).margin(1e-12));
    }
    CHECK(pd.gradient(pd.minimizer).norm() < 1e-10);
}

TEST_CASE("non-unique global minimum is flagged") {
    // eps(p) = cos(2p): E_0 has minima at p = +-pi/2, a genuinely split pair.
    DispersionRelation e(1, {{{2}, 0.5}});
    auto pd = pair_dispersion(e, QuasiMomentum::zero(1));
    CHECK(pd.emin == Catch::Approx(-2.0).epsilon(1e-12));
    CHECK_FALSE(pd.unique_minimum);
    CHECK_FALSE(pd.certified());
}

TEST_CASE("pair Fourier coefficients") {
    auto lap3 = laplacian_dispersion(3);
    QuasiMomentum k({0.8, -0.5, 1.7});

    SECTION("Laplacian closed form") {
        auto co = pair_fourier_coeffs(lap3, k);
        CHECK(co[{0, 0, 0}] == Catch::Approx(6.0).epsilon(1e-14));
        for (int j = 0; j < 3; ++j) {
            LatticeVector e(3, 0);
            e[j] = 1;
            CHECK(co[e] == Catch::Approx(-std::cos(k[j] / 2)).margin(1e-14));
            CHECK(co[negated(e)] == Catch::Approx(-std::cos(k[j] / 2)).margin(1e-14));
        }
    }

    SECTION("k = 0 reduces to twice the dispersion coefficients") {
        auto co = pair_fourier_coeffs(lap3, QuasiMomentum::zero(3));
        CHECK(co[{0, 0, 0}] == Catch::Approx(6.0));
        CHECK(co[{1, 0, 0}] == Catch::Approx(-1.0));
    }

    SECTION("agrees with a trapezoid quadrature oracle") {
        DispersionRelation e(2, {{{0, 0}, 1.4}, {{1, 0}, -0.5}, {{1, 1}, -0.2}});
        QuasiMomentum kq({0.7, -0.3});
        auto co = pair_fourier_coeffs(e, kq);
        for (const auto& s : {LatticeVector{0, 0}, LatticeVector{1, 0}, LatticeVector{-1, -1},
                              LatticeVector{1, 1}, LatticeVector{2, 0}}) {
            double want = fourier_coeff_by_quadrature(e, kq, s, 64);
            double got = co.count(s) ? co[s] : 0.0;
            CHECK(got == Catch::Approx(want).margin(1e-12));
        }
    }
}

TEST_CASE("certified region for the Laplacian family") {
    CHECK(in_region_g_laplacian(QuasiMomentum({0.0, 0.0})));
    CHECK_FALSE(in_region_g_laplacian(QuasiMomentum({pi, 0.3})));
    CHECK_FALSE(in_region_g_laplacian(QuasiMomentum({pi - 1e-12, 0.3})));
    CHECK(in_region_g_laplacian(QuasiMomentum({pi - 1e-3, 0.3})));
}

TEST_CASE("conditional negative definiteness check") {
    auto lap2 = laplacian_dispersion(2);
    auto rep = check_cnd(lap2, 1000, 42);
    CHECK(rep.consistent(1e-10));

    // eps(p) = cos p is not cnd; random batches find a clear violation.
    DispersionRelation cosine(1, {{{1}, 0.5}});
    auto bad = check_cnd(cosine, 1000, 42);
    CHECK(bad.max_violation > 0.1);

    auto vac = check_cnd(lap2, 0, 1);
    CHECK(vac.vacuous);
    CHECK(vac.consistent());
}
