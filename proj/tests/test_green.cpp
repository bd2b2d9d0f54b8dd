#include "latthresh/green.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <cmath>

using namespace latthresh;

namespace {

// d = 1 nearest-neighbor chain at quasi-momentum k: the denominator is
// 2 c (1 - cos p) + g with c = cos(k/2), and the momentum sum has the
// closed form  (1/(2c)) * rho^{|x|} / sqrt(A^2 - 1),  A = 1 + g/(2c),
// rho = A - sqrt(A^2 - 1).  A^2 - 1 is formed as (A-1)(A+1) to keep the
// small-gap case at full precision.
double chain_green(double k, double g, int x) {
    double c = std::cos(0.5 * k);
    double am1 = 0.5 * g / c;
    double disc = std::sqrt(am1 * (am1 + 2.0));
    double rho = 1.0 + am1 - disc;
    return std::pow(rho, std::abs(x)) / (2.0 * c * disc);
}

constexpr double kWatson3 = 0.2527310098586630;  // d=3 value at k=0, x=0

}  // namespace

TEST_CASE("one-dimensional closed forms agree across all methods") {
    auto eps = laplacian_dispersion(1);
    std::vector<LatticeVector> xs = {{0}, {1}, {2}, {5}};

    for (double kval : {0.0, 1.0}) {
        QuasiMomentum k({kval});
        auto pd = pair_dispersion(eps, k);
        REQUIRE(pd.certified());
        for (double g : {0.5, 1e-3}) {
            auto td = green::green_direct(pd, g, xs);
            auto tp = green::green_polar(pd, g, xs);
            auto tb = green::green_bessel(eps, k, g, xs);
            for (std::size_t i = 0; i < xs.size(); ++i) {
                double exact = chain_green(kval, g, xs[i][0]);
                CHECK(td.value[i] == Catch::Approx(exact).margin(5e-12));
                CHECK(tp.value[i] == Catch::Approx(exact).margin(5e-12));
                CHECK(tb.value[i] == Catch::Approx(exact).margin(5e-12));
            }
        }
        // gap too small for the direct grid: polar and bessel still exact
        double g = 1e-7;
        auto tp = green::green_polar(pd, g, xs);
        auto tb = green::green_bessel(eps, k, g, xs);
        for (std::size_t i = 0; i < xs.size(); ++i) {
            double exact = chain_green(kval, g, xs[i][0]);
            CHECK(tp.value[i] == Catch::Approx(exact).epsilon(1e-10));
            CHECK(tb.value[i] == Catch::Approx(exact).epsilon(1e-10));
        }
    }
}

TEST_CASE("threshold value in three dimensions matches the known constant") {
    auto eps = laplacian_dispersion(3);
    auto k = QuasiMomentum::zero(3);
    auto pd = pair_dispersion(eps, k);
    std::vector<LatticeVector> xs = {{0, 0, 0}};

    auto tb = green::green_bessel(eps, k, 0.0, xs);
    CHECK(tb.value[0] == Catch::Approx(kWatson3).margin(1e-12));
    CHECK(tb.err < 1e-10);

    auto tp = green::green_polar(pd, 0.0, xs);
    CHECK(tp.value[0] == Catch::Approx(kWatson3).margin(2e-9));
    CHECK(std::abs(tp.value[0] - kWatson3) <= std::max(tp.err, 1e-12));
}

TEST_CASE("gap-ladder extrapolation reproduces the threshold value") {
    auto eps = laplacian_dispersion(3);
    auto k = QuasiMomentum::zero(3);
    auto pd = pair_dispersion(eps, k);
    std::vector<LatticeVector> xs = {{0, 0, 0}, {1, 1, 0}};
    green::QuadOptions opt;
    opt.grid = 512;  // the acceptance run uses the finer default
    auto te = green::green_extrapolated(pd, xs, opt);
    CHECK(te.value[0] == Catch::Approx(kWatson3).margin(2e-6));
    auto tb = green::green_bessel(eps, k, 0.0, xs);
    CHECK(te.value[1] == Catch::Approx(tb.value[1]).margin(2e-6));
    CHECK(te.err >= 0.0);
}

TEST_CASE("cutoff split is independent of the ball radius") {
    auto eps = laplacian_dispersion(3);
    auto pd = pair_dispersion(eps, QuasiMomentum::zero(3));
    std::vector<LatticeVector> xs = {{0, 0, 0}, {1, 0, 0}};
    green::QuadOptions a, b;
    a.ball_radius = 2.2;
    b.ball_radius = 2.9;
    auto ta = green::green_polar(pd, 0.0, xs, a);
    auto tbl = green::green_polar(pd, 0.0, xs, b);
    for (std::size_t i = 0; i < xs.size(); ++i)
        CHECK(ta.value[i] == Catch::Approx(tbl.value[i]).margin(5e-9));

    auto pd1 = pair_dispersion(laplacian_dispersion(1), QuasiMomentum::zero(1));
    std::vector<LatticeVector> x1 = {{0}, {3}};
    auto u = green::green_polar(pd1, 1e-5, x1, a);
    auto v = green::green_polar(pd1, 1e-5, x1, b);
    for (std::size_t i = 0; i < x1.size(); ++i)
        CHECK(u.value[i] == Catch::Approx(v.value[i]).epsilon(1e-11));
}

TEST_CASE("log-gap coefficients in two dimensions") {
    auto eps = laplacian_dispersion(2);

    SECTION("slope has the closed form -cos((p*,x)) / (2 pi sqrt(det H))") {
        for (auto kv : {std::vector<double>{0.0, 0.0}, std::vector<double>{0.8, 0.4}}) {
            QuasiMomentum k(kv);
            auto pd = pair_dispersion(eps, k);
            REQUIRE(pd.certified());
            std::vector<LatticeVector> xs = {{0, 0}, {1, 0}, {1, 1}};
            auto lg = green::green_loggap(pd, xs);
            double det = pd.hessian.determinant();
            for (std::size_t i = 0; i < xs.size(); ++i) {
                double cstar = std::cos(dot(pd.minimizer, xs[i]));
                CHECK(lg.slope[i] == Catch::Approx(-cstar / (two_pi * std::sqrt(det))).margin(1e-14));
            }
        }
    }

    SECTION("affine form matches small-gap polar values") {
        auto pd = pair_dispersion(eps, QuasiMomentum::zero(2));
        std::vector<LatticeVector> xs = {{0, 0}, {1, 0}, {1, 1}};
        auto lg = green::green_loggap(pd, xs);
        double g = 1e-8;
        auto tp = green::green_polar(pd, g, xs);
        for (std::size_t i = 0; i < xs.size(); ++i) {
            double pred = lg.constant[i] + lg.slope[i] * std::log(g);
            CHECK(pred == Catch::Approx(tp.value[i]).margin(1e-7));
        }
    }
}

TEST_CASE("threshold values are lattice-symmetric and decay") {
    auto eps = laplacian_dispersion(3);
    auto pd = pair_dispersion(eps, QuasiMomentum::zero(3));
    std::vector<LatticeVector> xs = {{1, 0, 0}, {0, 1, 0}, {0, 0, 1}, {6, 0, 0}, {12, 0, 0}};
    auto tp = green::green_polar(pd, 0.0, xs);
    CHECK(tp.value[0] == Catch::Approx(tp.value[1]).margin(2e-9));
    CHECK(tp.value[0] == Catch::Approx(tp.value[2]).margin(2e-9));

    // ~ C/|x| far field: |x| R(x) approaches a constant
    auto k = QuasiMomentum::zero(3);
    auto tb = green::green_bessel(eps, k, 0.0, xs);
    CHECK(tb.value[3] > tb.value[4]);
    CHECK(tb.value[4] > 0.0);
    CHECK(12.0 * tb.value[4] == Catch::Approx(6.0 * tb.value[3]).epsilon(0.05));

    // d = 5: ~ |x|^{-3} far field, approached from above on the lattice
    auto eps5 = laplacian_dispersion(5);
    auto k5 = QuasiMomentum::zero(5);
    std::vector<LatticeVector> x5 = {{8, 0, 0, 0, 0}, {16, 0, 0, 0, 0}};
    auto t5 = green::green_bessel(eps5, k5, 0.0, x5);
    double ratio = t5.value[0] / t5.value[1];
    CHECK(ratio > 8.0);
    CHECK(ratio == Catch::Approx(8.0).epsilon(0.05));
}

TEST_CASE("bessel evaluator handles every gap from one node table") {
    auto eps = laplacian_dispersion(3);
    QuasiMomentum k({0.7, -0.3, 0.2});
    auto pd = pair_dispersion(eps, k);
    green::NnGreenEvaluator ev(eps, k, {{0, 0, 0}, {1, 1, 0}});

    double prev = std::numeric_limits<double>::infinity();
    for (double g : {0.0, 1e-9, 1e-6, 1e-3, 0.1, 2.0, 50.0}) {
        auto v = ev.evaluate(g);
        CHECK(v[0] < prev);
        CHECK(v[0] > 0.0);
        prev = v[0];
    }
    for (double g : {1e-1, 1e-4, 1e-7, 1e-9}) {
        auto v = ev.evaluate(g);
        auto tp = green::green_polar(pd, g, ev.points());
        CHECK(v[0] == Catch::Approx(tp.value[0]).margin(3e-9));
        CHECK(v[1] == Catch::Approx(tp.value[1]).margin(3e-9));
    }
}

TEST_CASE("double-denominator sums agree between quadrature and bessel paths") {
    auto eps = laplacian_dispersion(3);
    QuasiMomentum ka({0.3, -0.2, 0.1}), kb({1.1, 0.4, -0.9});
    auto Ea = pair_dispersion(eps, ka);
    auto Eb = pair_dispersion(eps, kb);
    std::vector<LatticeVector> ss = {{1, 0, 0}, {0, 1, 0}};
    std::vector<LatticeVector> ws = {{0, 0, 0}, {1, 0, 0}, {1, 1, 0}, {2, 0, 0}};
    auto q = green::double_green(Ea, Eb, ss, ws);
    auto b = green::double_green_bessel(eps, ka, kb, ss, ws);
    REQUIRE(q.size() == b.size());
    for (std::size_t i = 0; i < q.size(); ++i)
        CHECK(q[i] == Catch::Approx(b[i]).margin(1e-10));
    // the s-diagonal entry at w = 0 is an integral of a positive function
    CHECK(q[0] > 0.0);
}

TEST_CASE("hypothesis violations are reported, not silently computed") {
    auto eps2 = laplacian_dispersion(2);
    auto pd2 = pair_dispersion(eps2, QuasiMomentum::zero(2));
    std::vector<LatticeVector> xs2 = {{0, 0}};
    CHECK_THROWS_AS(green::green_polar(pd2, 0.0, xs2), HypothesisError);
    CHECK_THROWS_AS(green::green_extrapolated(pd2, xs2), HypothesisError);

    auto eps1 = laplacian_dispersion(1);
    QuasiMomentum kpi({pi - 1e-15});  // reduces to -pi: flat fiber, no certificate
    auto pdpi = pair_dispersion(eps1, kpi);
    CHECK_FALSE(pdpi.certified());
    std::vector<LatticeVector> xs1 = {{0}};
    CHECK_THROWS_AS(green::green_polar(pdpi, 0.1, xs1), HypothesisError);

    // threshold bessel needs k interior to the certified region and d >= 3
    green::NnGreenEvaluator ev(eps2, QuasiMomentum::zero(2), {{0, 0}});
    CHECK_THROWS_AS(ev.evaluate(0.0), HypothesisError);

    auto Ea = pair_dispersion(eps2, QuasiMomentum::zero(2));
    CHECK_THROWS_AS(green::double_green(Ea, Ea, xs2, xs2), HypothesisError);

    CHECK_THROWS_AS(green::green_direct(pd2, 0.0, xs2), std::invalid_argument);
}

TEST_CASE("dispatcher selects methods and cross-checks") {
    auto eps = laplacian_dispersion(3);
    auto k = QuasiMomentum::zero(3);
    auto pd = pair_dispersion(eps, k);
    std::vector<LatticeVector> xs = {{0, 0, 0}};

    green::GreenRequest req;
    req.cross_check = true;
    auto t = green::evaluate_green(eps, k, pd, xs, req);
    CHECK(t.method == "bessel");
    CHECK(t.cross_diff >= 0.0);
    CHECK(t.cross_diff < 1e-8);

    // non-nearest-neighbor dispersion routes through the polar path
    DispersionRelation gen(3, {{{0, 0, 0}, 3.1},
                               {{1, 0, 0}, -0.5},
                               {{0, 1, 0}, -0.5},
                               {{0, 0, 1}, -0.5},
                               {{1, 1, 0}, -0.05}});
    auto pdg = pair_dispersion(gen, k);
    REQUIRE(pdg.certified());
    auto tg = green::evaluate_green(gen, k, pdg, xs, req);
    CHECK(tg.method == "polar");
    CHECK(tg.cross_diff >= 0.0);
    CHECK(tg.cross_diff < 1e-6);

    // deterministic: identical call, identical bytes
    auto t2 = green::evaluate_green(eps, k, pd, xs, req);
    CHECK(t.value[0] == t2.value[0]);
}
