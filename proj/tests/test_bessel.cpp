#include "latthresh/bessel.hpp"

#include <catch2/catch_amalgamated.hpp>
#include <gsl/gsl_sf_bessel.h>

#include <cmath>

using namespace latthresh;

namespace {

// Independent reference: e^{-z} I_n(z) = (1/pi) int_0^pi e^{z(cos t - 1)} cos(nt) dt,
// trapezoid in the scaled variable u = t sqrt(z), long double accumulation.
// More accurate than GSL's scaled Bessel for large z.
long double reference_scaled_in(int n, double z) {
    const long double pi_l = 3.14159265358979323846L;
    long double sz = sqrtl(static_cast<long double>(z));
    long double umax = fminl(50.0L, pi_l * sz);
    const long long N = 1500000;
    long double h = umax / N, s = 0.0L;
    for (long long i = 0; i <= N; ++i) {
        long double t = i * h / sz;
        long double f = expl(z * (cosl(t) - 1.0L)) * cosl(n * t);
        s += (i == 0 || i == N) ? 0.5L * f : f;
    }
    return s * h / sz / pi_l;
}

}  // namespace

TEST_CASE("scaled Bessel block agrees with GSL at small and moderate z") {
    // GSL In_scaled is trustworthy to ~1e-13 below a few thousand.
    for (double z : {1e-3, 0.5, 1.9, 2.1, 5.0, 37.0, 400.0}) {
        int nmax = z < 1.0 ? 12 : 60;
        auto ours = scaled_bessel_i(nmax, z);
        for (int n = 0; n <= nmax; ++n) {
            double ref = gsl_sf_bessel_In_scaled(n, z);
            if (ref == 0.0) {
                CHECK(std::abs(ours[n]) < 1e-280);
            } else {
                CHECK(ours[n] == Catch::Approx(ref).epsilon(2e-12));
            }
        }
    }
}

TEST_CASE("scaled Bessel matches integral reference at large z") {
    for (double z : {1.8e3, 9.4e3, 8.1e4, 2.7e6, 4.0e8}) {
        auto ours = scaled_bessel_i(40, z);
        for (int n : {0, 3, 17, 40}) {
            double ref = static_cast<double>(reference_scaled_in(n, z));
            CHECK(ours[n] == Catch::Approx(ref).epsilon(1e-12));
        }
    }
}

TEST_CASE("scaled Bessel tiny argument keeps the exponential factor") {
    // e^{-z} I_1(z) = z/2 - z^2/2 + O(z^3); at z = 1e-8 the second term is
    // one part in 1e8 and must not be dropped.
    double z = 1e-8;
    auto ours = scaled_bessel_i(2, z);
    CHECK(ours[1] == Catch::Approx(0.5 * z * (1.0 - z)).epsilon(1e-13));
    CHECK(ours[0] == Catch::Approx(1.0 - z).epsilon(1e-13));
}

TEST_CASE("scaled Bessel edge cases") {
    auto at0 = scaled_bessel_i(5, 0.0);
    CHECK(at0[0] == 1.0);
    CHECK(at0[3] == 0.0);
    CHECK_THROWS_AS(scaled_bessel_i(-1, 1.0), std::invalid_argument);
    CHECK_THROWS_AS(scaled_bessel_i(2, -1.0), std::invalid_argument);

    // High order at modest argument underflows smoothly, never to garbage.
    auto tail = scaled_bessel_i(180, 3.0);
    CHECK(tail[180] >= 0.0);
    CHECK(tail[180] < 1e-250);
}
