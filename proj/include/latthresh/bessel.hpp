#pragma once

// Scaled modified Bessel functions e^{-z} I_n(z) for z >= 0, computed for a
// whole block of orders at once.  Three regimes:
//   * small z: the power series, scaled term by term;
//   * moderate z: Miller's downward recurrence, normalized with
//     e^{z} = I_0 + 2 sum_{m>=1} I_m so the scaling comes out exactly;
//   * large z: the standard asymptotic expansion in 1/z.
// The block form is what the lattice Green's function integrands need: one
// recurrence yields every order along an axis.

#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <vector>

namespace latthresh {

namespace detail {

inline std::vector<double> scaled_bessel_series(int nmax, double z) {
    // e^{-z} (z/2)^n / n! * sum_m (z^2/4)^m / (m! (n+1)...(n+m)), z small.
    std::vector<double> out(nmax + 1, 0.0);
    const double q = 0.25 * z * z;
    for (int n = 0; n <= nmax; ++n) {
        double lead = std::exp(-z + n * std::log(0.5 * z) - std::lgamma(n + 1.0));
        double term = 1.0, sum = 1.0;
        for (int m = 1; m < 60; ++m) {
            term *= q / (m * (n + m));
            sum += term;
            if (term < 1e-18 * sum) break;
        }
        out[n] = lead * sum;
    }
    if (z == 0.0) {
        out.assign(nmax + 1, 0.0);
        out[0] = 1.0;
    }
    return out;
}

inline std::vector<double> scaled_bessel_miller(int nmax, double z) {
    // Start far enough above both nmax and the ~sqrt(z) Gaussian decay scale
    // of I_m(z) in m that the false solution has died off.
    int start = nmax + 2 + static_cast<int>(9.5 * std::sqrt(z) + 0.08 * z / std::sqrt(z + 1.0));
    start += 40;
    std::vector<double> out(nmax + 1, 0.0);
    double ip1 = 0.0, i0 = std::numeric_limits<double>::min() * 1e40;
    double norm = 0.0;
    for (int m = start; m >= 1; --m) {
        double im1 = ip1 + (2.0 * m / z) * i0;
        ip1 = i0;
        i0 = im1;
        if (m - 1 <= nmax) out[m - 1] = i0;
        norm += 2.0 * ip1;
        if (std::abs(i0) > 1e270) {  // renormalize before overflow
            const double scale = 1e-270;
            i0 *= scale;
            ip1 *= scale;
            norm *= scale;
            for (double& v : out) v *= scale;
        }
    }
    norm += i0;  // norm = I_0 + 2 sum_{m>=1} I_m = e^{z}, up to the common factor
    for (double& v : out) v /= norm;
    return out;
}

inline std::vector<double> scaled_bessel_asymptotic(int nmax, double z) {
    // e^{-z} I_n(z) ~ (2 pi z)^{-1/2} [1 - (mu-1)/(8z) + (mu-1)(mu-9)/(2!(8z)^2) - ...],
    // mu = 4 n^2.  Valid here because callers switch only when 8z >> mu.
    std::vector<double> out(nmax + 1, 0.0);
    const double lead = 1.0 / std::sqrt(2.0 * std::numbers::pi * z);
    for (int n = 0; n <= nmax; ++n) {
        const double mu = 4.0 * static_cast<double>(n) * n;
        double term = 1.0, sum = 1.0;
        for (int j = 1; j <= 8; ++j) {
            term *= -(mu - (2.0 * j - 1.0) * (2.0 * j - 1.0)) / (j * 8.0 * z);
            sum += term;
            if (std::abs(term) < 1e-17) break;
        }
        out[n] = lead * sum;
    }
    return out;
}

}  // namespace detail

/// e^{-z} I_n(z) for n = 0..nmax, relative accuracy ~1e-12 over z >= 0.
inline std::vector<double> scaled_bessel_i(int nmax, double z) {
    if (nmax < 0) throw std::invalid_argument("scaled_bessel_i: negative order");
    if (!(z >= 0.0)) throw std::invalid_argument("scaled_bessel_i: z must be >= 0");
    if (z <= 2.0) return detail::scaled_bessel_series(nmax, z);
    // The asymptotic branch needs 8z to dominate 4 nmax^2 by a wide margin.
    const double mu_max = 4.0 * static_cast<double>(nmax) * nmax;
    if (z > 1e5 && z > 40.0 * (mu_max + 1.0)) return detail::scaled_bessel_asymptotic(nmax, z);
    return detail::scaled_bessel_miller(nmax, z);
}

}  // namespace latthresh
