#pragma once

// Engines for the lattice Green's function
//
//     R0(k, z; x) = int_{T^d} e^{i(p,x)} / (E_k(p) - z) deta(p),
//
// written throughout in terms of gap = E_min(k) - z >= 0, and for the
// double-denominator sums used by the threshold expansion coefficients.
//
// Four independent evaluation paths:
//  * direct    - plain midpoint scan with grid doubling; any dispersion,
//                any positive gap large enough for the grid to resolve.
//  * polar     - the singular neighbourhood is masked off the torus scan by
//                a radial C-infinity cutoff and integrated in polar
//                coordinates around the minimizer, where the volume factor
//                r^{d-1} cancels the quadratic vanishing of the denominator
//                and the radial integrand is analytic.  Works at the
//                threshold itself for d >= 3 and down to arbitrarily small
//                positive gaps (geometrically graded radial panels).
//  * bessel    - for nearest-neighbor dispersions, R0 as a Laplace-type
//                time integral of products of scaled Bessel functions
//                I_x(2 t cos(k_j/2)) e^{-2 t cos(k_j/2)}; one shared node
//                set serves every gap >= 0, so repeated evaluations (e.g.
//                inside a bisection) cost microseconds.
//  * extrapolation - gap-ladder values from the direct path, extrapolated
//                to gap = 0 through the known sqrt(gap) expansion (d = 3).
//
// A dedicated log-gap variant serves d = 2, where the threshold value
// diverges like -log(gap): the divergence is carried by a closed-form
// integral of a quadratic model and the evaluator returns the affine
// coefficients of R0 in s = log(gap).

#include "latthresh/bessel.hpp"
#include "latthresh/model.hpp"
#include "latthresh/quadrature.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <atomic>
#include <functional>
#include <cmath>
#include <complex>
#include <cstdlib>
#include <map>
#include <mutex>
#include <span>
#include <stdexcept>
#include <string>
#include <thread>
#include <utility>
#include <vector>

namespace latthresh::green {

/// Worker count: LATTICE_THRESHOLD_THREADS overrides hardware concurrency.
inline int thread_count() {
    static int n = [] {
        if (const char* env = std::getenv("LATTICE_THRESHOLD_THREADS")) {
            int v = std::atoi(env);
            if (v > 0) return v;
        }
        unsigned hc = std::thread::hardware_concurrency();
        return hc ? static_cast<int>(hc) : 1;
    }();
    return n;
}

/// Midpoint scan of a tensor grid accumulating `nacc` sums.  Work is split
/// into one chunk per outermost grid index and reduced in chunk order, so
/// results are bit-identical regardless of the worker count.
template <class Kernel>
std::vector<double> scan_accumulate(int dim, std::span<const quad::AxisSpec> axes,
                                    std::span<const LatticeVector> phase_vecs,
                                    std::size_t nacc, const Kernel& kernel) {
    const int nchunk = axes[0].n;
    std::vector<std::vector<double>> partial(nchunk);
    std::atomic<int> next{0};
    auto worker = [&]() {
        for (;;) {
            int c = next.fetch_add(1);
            if (c >= nchunk) return;
            std::vector<quad::AxisSpec> sub(axes.begin(), axes.end());
            sub[0] = {axes[0].start + c * axes[0].step, axes[0].step, 1};
            std::vector<double> acc(nacc, 0.0);
            quad::midpoint_scan(dim, sub, phase_vecs,
                                [&](std::span<const double> q,
                                    std::span<const std::complex<double>> ph) {
                                    kernel(q, ph, acc.data());
                                });
            partial[c] = std::move(acc);
        }
    };
    int nthreads = std::min(thread_count(), nchunk);
    if (nthreads <= 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        pool.reserve(nthreads);
        for (int i = 0; i < nthreads; ++i) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }
    std::vector<double> total(nacc, 0.0);
    for (const auto& p : partial)
        for (std::size_t i = 0; i < nacc; ++i) total[i] += p[i];
    return total;
}

/// Chunked deterministic parallel reduction over an item range (used for
/// the polar ball sums, whose node lists are not tensor grids).
template <class Worker>
std::vector<double> parallel_accumulate(std::size_t nitems, std::size_t nacc, const Worker& work) {
    const std::size_t nchunk = std::min<std::size_t>(nitems, 64);
    if (nchunk == 0) return std::vector<double>(nacc, 0.0);
    std::vector<std::vector<double>> partial(nchunk);
    std::atomic<std::size_t> next{0};
    auto run = [&]() {
        for (;;) {
            std::size_t c = next.fetch_add(1);
            if (c >= nchunk) return;
            std::size_t lo = nitems * c / nchunk, hi = nitems * (c + 1) / nchunk;
            std::vector<double> acc(nacc, 0.0);
            work(lo, hi, acc.data());
            partial[c] = std::move(acc);
        }
    };
    int nthreads = std::min<std::size_t>(thread_count(), nchunk);
    if (nthreads <= 1) {
        run();
    } else {
        std::vector<std::thread> pool;
        for (int i = 0; i < nthreads; ++i) pool.emplace_back(run);
        for (auto& t : pool) t.join();
    }
    std::vector<double> total(nacc, 0.0);
    for (const auto& p : partial)
        for (std::size_t i = 0; i < nacc; ++i) total[i] += p[i];
    return total;
}

enum class GreenMethod { automatic, direct, polar, bessel, extrapolation };

struct QuadOptions {
    int grid = 0;              // torus scan points per axis (0: dimension default)
    int max_grid = 0;          // doubling cap for the direct path
    double target_abs = 1e-11; // direct-path doubling stop
    double ball_radius = 0.0;  // polar ball radius (0: 2.8)
    int radial_order = 32;     // Gauss-Legendre order per radial panel
    int sphere_level = 1;      // surface rule refinement multiplier
    int tail_order = 48;       // Gauss-Legendre order for mapped tail integrals
    double gap_floor = 1e-13;  // smallest positive gap the bessel node set resolves
};

struct GreenTable {
    std::vector<LatticeVector> points;
    std::vector<double> value;
    double err = 0.0;           // internal consistency estimate (absolute)
    std::string method;
    double cross_diff = -1.0;   // set when a second method was run

    double value_at(const LatticeVector& x) const {
        LatticeVector neg = negated(x);
        for (std::size_t i = 0; i < points.size(); ++i)
            if (points[i] == x || points[i] == neg) return value[i];
        throw std::invalid_argument("green table: point not tabulated");
    }
};

namespace detail {

inline int default_grid(int d) {
    switch (d) {
        case 1: return 256;
        case 2: return 128;
        case 3: return 64;
        case 4: return 32;
        default: return 24;
    }
}

/// The polar smooth part pays for cutoff resolution, so its default grids
/// run finer than the direct path in d = 3.
inline int default_polar_grid(int d) { return d == 3 ? 128 : default_grid(d); }

inline int default_max_grid(int d) {
    switch (d) {
        case 1: return 16384;
        case 2: return 4096;
        case 3: return 1024;
        case 4: return 128;
        default: return 48;
    }
}

/// Multi-gap midpoint sums of cos((p,x)) / (E_k(p) - emin + gap) on a fixed
/// n^d grid; returns values[gap][x].  The denominator is assembled from the
/// same phase tables as the numerators.
inline std::vector<std::vector<double>> direct_fixed(const PairDispersion& E,
                                                     std::span<const double> gaps,
                                                     std::span<const LatticeVector> xs, int n) {
    const int d = E.dim();
    const std::size_t nx = xs.size(), ng = gaps.size();
    std::vector<LatticeVector> vecs(xs.begin(), xs.end());
    double const_amp = 0.0;
    std::vector<double> amps;
    for (const auto& t : E.terms()) {
        if (is_zero(t.s)) {
            const_amp += t.amplitude;
        } else {
            vecs.push_back(t.s);
            amps.push_back(t.amplitude);
        }
    }
    const double base = const_amp - E.emin;
    const std::size_t nt = amps.size();
    auto axes = quad::torus_axes(d, n);
    auto sums = scan_accumulate(
        d, axes, vecs, nx * ng,
        [&, base](std::span<const double>, std::span<const std::complex<double>> ph, double* acc) {
            double e = base;
            for (std::size_t t = 0; t < nt; ++t) e += amps[t] * ph[nx + t].real();
            for (std::size_t g = 0; g < ng; ++g) {
                const double inv = 1.0 / (e + gaps[g]);
                double* row = acc + g * nx;
                for (std::size_t ix = 0; ix < nx; ++ix) row[ix] += ph[ix].real() * inv;
            }
        });
    double cell = 1.0;
    for (int j = 0; j < d; ++j) cell *= axes[j].step / two_pi;
    std::vector<std::vector<double>> out(ng, std::vector<double>(nx));
    for (std::size_t g = 0; g < ng; ++g)
        for (std::size_t ix = 0; ix < nx; ++ix) out[g][ix] = sums[g * nx + ix] * cell;
    return out;
}

}  // namespace detail

/// Plain midpoint scan with grid doubling.  Valid for any dispersion and
/// gap > 0; accuracy degrades like exp(-n sqrt(gap)) as the gap closes, so
/// small gaps belong to the polar or bessel paths.
inline GreenTable green_direct(const PairDispersion& E, double gap,
                               std::span<const LatticeVector> xs, const QuadOptions& opt = {}) {
    if (!(gap > 0.0)) throw std::invalid_argument("green_direct: gap must be positive");
    const int d = E.dim();
    int nmax = opt.max_grid ? opt.max_grid : detail::default_max_grid(d);
    int n = std::min(opt.grid ? opt.grid : detail::default_grid(d), std::max(2, nmax / 2));
    const std::array<double, 1> gaps{gap};
    GreenTable out;
    out.points.assign(xs.begin(), xs.end());
    out.method = "direct";
    auto prev = detail::direct_fixed(E, gaps, xs, n);
    for (;;) {
        n *= 2;
        auto cur = detail::direct_fixed(E, gaps, xs, n);
        double diff = 0.0;
        for (std::size_t i = 0; i < xs.size(); ++i)
            diff = std::max(diff, std::abs(cur[0][i] - prev[0][i]));
        out.value = std::move(cur[0]);
        out.err = diff;
        if (diff <= opt.target_abs || 2 * n > nmax) break;
        prev[0] = out.value;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Surface quadrature on S^{d-1}
// ---------------------------------------------------------------------------

struct SphereRule {
    int dim = 0;
    std::vector<double> points;   // flattened, dim per node
    std::vector<double> weights;  // sum to the surface area of S^{d-1}
    std::size_t size() const { return weights.size(); }
    const double* point(std::size_t i) const { return points.data() + static_cast<std::size_t>(dim) * i; }
};

namespace detail {

inline SphereRule build_sphere(int dim, int level) {
    SphereRule r;
    r.dim = dim;
    if (dim == 1) {
        r.points = {1.0, -1.0};
        r.weights = {1.0, 1.0};
    } else if (dim == 2) {
        int m = 48 * level;
        for (int i = 0; i < m; ++i) {
            double phi = two_pi * (i + 0.5) / m;
            r.points.push_back(std::cos(phi));
            r.points.push_back(std::sin(phi));
            r.weights.push_back(two_pi / m);
        }
    } else {
        int nth = (dim == 3 ? 20 : dim == 4 ? 14 : 12) * level;
        const auto& gl = quad::gauss_legendre(nth);
        SphereRule inner = build_sphere(dim - 1, level);
        for (int i = 0; i < nth; ++i) {
            double theta = 0.5 * pi * (gl.nodes[i] + 1.0);
            double wth = 0.5 * pi * gl.weights[i] * std::pow(std::sin(theta), dim - 2);
            for (std::size_t j = 0; j < inner.size(); ++j) {
                r.points.push_back(std::cos(theta));
                const double* q = inner.point(j);
                for (int a = 0; a < dim - 1; ++a) r.points.push_back(std::sin(theta) * q[a]);
                r.weights.push_back(wth * inner.weights[j]);
            }
        }
    }
    return r;
}

inline const SphereRule& sphere_rule(int dim, int level) {
    static std::map<std::pair<int, int>, SphereRule> cache;
    static std::mutex mutex;
    std::lock_guard<std::mutex> lock(mutex);
    auto key = std::make_pair(dim, level);
    auto it = cache.find(key);
    if (it != cache.end()) return it->second;
    return cache.emplace(key, build_sphere(dim, level)).first->second;
}

/// Ascending radial panel edges on [0, c], halving geometrically until the
/// sqrt(gap / lambda_min) scale of the denominator is resolved.  The top
/// panel is split once more so the cutoff transition on [c/2, c] is covered
/// by two panels.
inline std::vector<double> radial_edges(double c, double gap, double lambda_min) {
    double floor_r = 0.5 * c;
    if (gap > 0.0) floor_r = std::min(floor_r, std::sqrt(gap / std::max(lambda_min, 1e-300)));
    std::vector<double> desc{c, 0.75 * c};
    double e = 0.5 * c;
    int guard = 0;
    while (e > floor_r * 0.999 && ++guard < 80) {
        desc.push_back(e);
        e *= 0.5;
    }
    desc.push_back(e);
    desc.push_back(0.0);
    return {desc.rbegin(), desc.rend()};
}

struct RadialNodes {
    std::vector<double> r;
    std::vector<double> w;
};

inline RadialNodes radial_nodes(double c, double gap, double lambda_min, int order) {
    auto edges = radial_edges(c, gap, lambda_min);
    const auto& gl = quad::gauss_legendre(order);
    RadialNodes out;
    for (std::size_t p = 0; p + 1 < edges.size(); ++p) {
        double mid = 0.5 * (edges[p] + edges[p + 1]), half = 0.5 * (edges[p + 1] - edges[p]);
        for (int i = 0; i < order; ++i) {
            out.r.push_back(mid + half * gl.nodes[i]);
            out.w.push_back(half * gl.weights[i]);
        }
    }
    return out;
}

/// chi(r) = 1 for r <= c/2, 0 for r >= c; the ball integral carries chi and
/// the torus scan carries (1 - chi), so the split is exact for any c.
inline double radial_cutoff(double r2, double c2) { return quad::smooth_bump(r2 / c2); }

inline void require_certified(const PairDispersion& E, const char* who) {
    if (!E.certified())
        throw HypothesisError(std::string(who) +
                              ": dispersion minimum is not certified (non-degenerate and unique)");
}

/// Ball part of the polar path: sum of chi * cos((p,x)) / (E - emin + gap)
/// over the polar node set around the minimizer.
inline std::vector<double> polar_ball(const PairDispersion& E, double gap,
                                      std::span<const LatticeVector> xs, double c,
                                      const QuadOptions& opt) {
    const int d = E.dim();
    const std::size_t nx = xs.size();
    const auto& sph = sphere_rule(d, opt.sphere_level);
    RadialNodes rad = radial_nodes(c, gap, E.hessian_min_eig, opt.radial_order);
    double norm = 1.0;
    for (int j = 0; j < d; ++j) norm /= two_pi;
    const double c2 = c * c;
    const std::vector<double>& pstar = E.minimizer;

    return parallel_accumulate(
        sph.size(), nx, [&](std::size_t lo, std::size_t hi, double* acc) {
            std::vector<double> p(d), a(nx), b(nx);
            for (std::size_t is = lo; is < hi; ++is) {
                const double* omega = sph.point(is);
                const double ws = sph.weights[is];
                for (std::size_t ix = 0; ix < nx; ++ix) {
                    a[ix] = dot(std::span<const double>(omega, d), xs[ix]);
                    b[ix] = dot(pstar, xs[ix]);
                }
                for (std::size_t ir = 0; ir < rad.r.size(); ++ir) {
                    const double r = rad.r[ir];
                    double cut = radial_cutoff(r * r, c2);
                    if (cut == 0.0) continue;
                    for (int j = 0; j < d; ++j) p[j] = pstar[j] + r * omega[j];
                    double den = E.gap_above_min(p) + gap;
                    double common = norm * ws * rad.w[ir] * cut * std::pow(r, d - 1) / den;
                    for (std::size_t ix = 0; ix < nx; ++ix)
                        acc[ix] += common * std::cos(b[ix] + r * a[ix]);
                }
            }
        });
}

/// Torus scan of (1 - chi) * cos((p,x)) / (E - emin + gap).
inline std::vector<double> polar_smooth(const PairDispersion& E, double gap,
                                        std::span<const LatticeVector> xs, double c, int n) {
    const int d = E.dim();
    const std::size_t nx = xs.size();
    std::vector<LatticeVector> vecs(xs.begin(), xs.end());
    double const_amp = 0.0;
    std::vector<double> amps;
    for (const auto& t : E.terms()) {
        if (is_zero(t.s)) {
            const_amp += t.amplitude;
        } else {
            vecs.push_back(t.s);
            amps.push_back(t.amplitude);
        }
    }
    const double base = const_amp - E.emin;
    const std::size_t nt = amps.size();
    const double c2 = c * c;
    const std::vector<double>& pstar = E.minimizer;
    auto axes = quad::torus_axes(d, n);
    auto sums = scan_accumulate(
        d, axes, vecs, nx,
        [&](std::span<const double> q, std::span<const std::complex<double>> ph, double* acc) {
            double r2 = 0.0;
            for (int j = 0; j < d; ++j) {
                double dj = reduce_to_torus(q[j] - pstar[j]);
                r2 += dj * dj;
            }
            double mask = 1.0 - radial_cutoff(r2, c2);
            if (mask == 0.0) return;
            double e = base;
            for (std::size_t t = 0; t < nt; ++t) e += amps[t] * ph[nx + t].real();
            double common = mask / (e + gap);
            for (std::size_t ix = 0; ix < nx; ++ix) acc[ix] += common * ph[ix].real();
        });
    double cell = 1.0;
    for (int j = 0; j < d; ++j) cell *= axes[j].step / two_pi;
    for (auto& v : sums) v *= cell;
    return sums;
}

}  // namespace detail

/// Cutoff-plus-polar evaluation.  Requires a certified minimum; valid for
/// gap > 0 in every dimension and for gap = 0 when d >= 3.
inline GreenTable green_polar(const PairDispersion& E, double gap,
                              std::span<const LatticeVector> xs, const QuadOptions& opt = {}) {
    detail::require_certified(E, "green_polar");
    if (gap < 0.0) throw std::invalid_argument("green_polar: negative gap");
    const int d = E.dim();
    if (gap == 0.0 && d < 3)
        throw HypothesisError("green_polar: the threshold value diverges for d < 3");
    const double c = opt.ball_radius > 0.0 ? std::min(opt.ball_radius, 0.99 * pi) : 2.8;
    int n = opt.grid ? opt.grid : detail::default_polar_grid(d);
    auto ball = detail::polar_ball(E, gap, xs, c, opt);
    QuadOptions low = opt;
    low.radial_order = std::max(12, opt.radial_order - 8);
    auto ball_check = detail::polar_ball(E, gap, xs, c, low);
    auto smooth = detail::polar_smooth(E, gap, xs, c, n);
    auto coarse = detail::polar_smooth(E, gap, xs, c, std::max(8, n / 2));
    GreenTable out;
    out.points.assign(xs.begin(), xs.end());
    out.method = "polar";
    out.value.resize(xs.size());
    out.err = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        out.value[i] = ball[i] + smooth[i];
        out.err = std::max(out.err, std::abs(smooth[i] - coarse[i]) +
                                        std::abs(ball[i] - ball_check[i]));
    }
    return out;
}

// ---------------------------------------------------------------------------
// d = 2: affine coefficients of R0 in s = log(gap)
// ---------------------------------------------------------------------------

/// R0(k, emin - gap; x) = constant[x] + slope[x] * log(gap) + o(1) as
/// gap -> 0.  Valid once gap is well below every other scale; the o(1)
/// remainder is O(gap log gap).
struct LogGapGreen {
    std::vector<LatticeVector> points;
    std::vector<double> constant;
    std::vector<double> slope;
    double err = 0.0;
};

inline LogGapGreen green_loggap(const PairDispersion& E, std::span<const LatticeVector> xs,
                                const QuadOptions& opt = {}) {
    if (E.dim() != 2) throw HypothesisError("green_loggap: log-gap asymptotics are specific to d = 2");
    detail::require_certified(E, "green_loggap");
    const int d = 2;
    const std::size_t nx = xs.size();
    const Eigen::MatrixXd& H = E.hessian;
    const double det = H.determinant();
    const double lmin = E.hessian_min_eig;
    const double rho = 0.9 * pi * std::sqrt(lmin);
    const double a = 0.5 * rho;
    const double kappa = 1.0 / (two_pi * std::sqrt(det));
    // model: phi(delta)/(Q(delta) + gap) with Q = delta^T H delta / 2 and
    // phi = bump(2 Q / rho^2); its full-plane integral is
    //   kappa * [ log(a^2/2 + gap) - log(gap) + tail ].
    const double tail = quad::integrate_panels(
        [&](double r) { return quad::smooth_bump(r * r / (rho * rho)) * 2.0 / r; }, a, rho, 4, 32);
    const double a_const = kappa * (std::log(0.5 * a * a) + tail);

    const std::vector<double>& pstar = E.minimizer;
    std::vector<double> cstar(nx);
    for (std::size_t ix = 0; ix < nx; ++ix) cstar[ix] = std::cos(dot(pstar, xs[ix]));

    const double c = opt.ball_radius > 0.0 ? std::min(opt.ball_radius, 0.99 * pi) : 2.8;
    const double c2 = c * c;

    // remainder ball: chi * [cos((p,x))/(E - emin) - cstar phi / Q], polar.
    const auto& sph = detail::sphere_rule(d, opt.sphere_level);
    detail::RadialNodes rad = detail::radial_nodes(c, 0.0, lmin, opt.radial_order);
    const double norm = 1.0 / (two_pi * two_pi);
    auto ball = parallel_accumulate(
        sph.size(), nx, [&](std::size_t lo, std::size_t hi, double* acc) {
            std::vector<double> p(d), ax(nx), bx(nx);
            for (std::size_t is = lo; is < hi; ++is) {
                const double* omega = sph.point(is);
                const double ws = sph.weights[is];
                double hq = 0.0;  // omega^T H omega
                for (int i = 0; i < d; ++i)
                    for (int j = 0; j < d; ++j) hq += omega[i] * H(i, j) * omega[j];
                for (std::size_t ix = 0; ix < nx; ++ix) {
                    ax[ix] = dot(std::span<const double>(omega, d), xs[ix]);
                    bx[ix] = dot(pstar, xs[ix]);
                }
                for (std::size_t ir = 0; ir < rad.r.size(); ++ir) {
                    const double r = rad.r[ir];
                    double cut = detail::radial_cutoff(r * r, c2);
                    if (cut == 0.0) continue;
                    for (int j = 0; j < d; ++j) p[j] = pstar[j] + r * omega[j];
                    double den = E.gap_above_min(p);
                    double q = 0.5 * r * r * hq;
                    double phi = quad::smooth_bump(2.0 * q / (rho * rho));
                    double common = norm * ws * rad.w[ir] * cut * r;
                    for (std::size_t ix = 0; ix < nx; ++ix)
                        acc[ix] += common * (std::cos(bx[ix] + r * ax[ix]) / den - cstar[ix] * phi / q);
                }
            }
        });

    // remainder torus scan: (1 - chi) * [same difference].
    std::vector<LatticeVector> vecs(xs.begin(), xs.end());
    double const_amp = 0.0;
    std::vector<double> amps;
    for (const auto& t : E.terms()) {
        if (is_zero(t.s)) {
            const_amp += t.amplitude;
        } else {
            vecs.push_back(t.s);
            amps.push_back(t.amplitude);
        }
    }
    const double base = const_amp - E.emin;
    const std::size_t nt = amps.size();
    int n = opt.grid ? opt.grid : detail::default_grid(d);
    auto smooth_at = [&](int ngrid) {
        auto axes = quad::torus_axes(d, ngrid);
        auto sums = scan_accumulate(
            d, axes, vecs, nx,
            [&](std::span<const double> q, std::span<const std::complex<double>> ph, double* acc) {
                double delta[2], r2 = 0.0;
                for (int j = 0; j < d; ++j) {
                    delta[j] = reduce_to_torus(q[j] - pstar[j]);
                    r2 += delta[j] * delta[j];
                }
                double mask = 1.0 - detail::radial_cutoff(r2, c2);
                if (mask == 0.0) return;
                double e = base;
                for (std::size_t t = 0; t < nt; ++t) e += amps[t] * ph[nx + t].real();
                double qq = 0.0;
                for (int i = 0; i < d; ++i)
                    for (int j = 0; j < d; ++j) qq += delta[i] * H(i, j) * delta[j];
                qq *= 0.5;
                double phi = quad::smooth_bump(2.0 * qq / (rho * rho));
                for (std::size_t ix = 0; ix < nx; ++ix)
                    acc[ix] += mask * (ph[ix].real() / e - cstar[ix] * phi / qq);
            });
        double cell = 1.0;
        for (int j = 0; j < d; ++j) cell *= axes[j].step / two_pi;
        for (auto& v : sums) v *= cell;
        return sums;
    };
    auto smooth = smooth_at(n);
    auto coarse = smooth_at(std::max(8, n / 2));

    LogGapGreen out;
    out.points.assign(xs.begin(), xs.end());
    out.constant.resize(nx);
    out.slope.resize(nx);
    for (std::size_t ix = 0; ix < nx; ++ix) {
        out.constant[ix] = ball[ix] + smooth[ix] + cstar[ix] * a_const;
        out.slope[ix] = -kappa * cstar[ix];
        out.err = std::max(out.err, std::abs(smooth[ix] - coarse[ix]));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Nearest-neighbor dispersions: Bessel-integral path
// ---------------------------------------------------------------------------

/// R0 for nearest-neighbor dispersions as
///   int_0^inf e^{-t gap} prod_j [ I_{x_j}(2 t c_j) e^{-2 t c_j} ] dt,
/// c_j = cos(k_j / 2).  The node set (head panels, geometric panels out to
/// 60/gap_floor, and an algebraic tail mapped by t = T/u^2) is built once;
/// evaluate() then costs one exp and one fused multiply-add per node.
/// Valid for every gap >= gap_floor, and at gap = 0 when d >= 3 and all
/// c_j > 0 (the tail map supplies the t^{-d/2} decay exactly).
class NnGreenEvaluator {
public:
    NnGreenEvaluator(const DispersionRelation& eps, const QuasiMomentum& k,
                     std::vector<LatticeVector> xs, const QuadOptions& opt = {})
        : xs_(std::move(xs)), dim_(eps.dim()) {
        if (!eps.nearest_neighbor())
            throw HypothesisError("bessel path: dispersion support must be nearest-neighbor");
        if (k.dim() != dim_) throw std::invalid_argument("bessel path: dimension mismatch");
        for (const auto& x : xs_)
            if (static_cast<int>(x.size()) != dim_)
                throw std::invalid_argument("bessel path: point dimension mismatch");
        coeff_.resize(dim_);
        interior_ = true;
        for (int j = 0; j < dim_; ++j) {
            // eps has coefficient -c at +-e_j after folding; the pair symbol
            // contributes 2 c_j (1 - cos p_j) with c_j = cos(k_j/2) >= 0.
            LatticeVector ej(dim_, 0);
            ej[j] = 1;
            double amp = -2.0 * eps.coefficient(ej);
            coeff_[j] = amp * std::cos(0.5 * k[j]);
            if (!(coeff_[j] > 1e-12)) interior_ = false;
        }
        std::vector<int> nmax(dim_, 0);
        for (const auto& x : xs_)
            for (int j = 0; j < dim_; ++j) nmax[j] = std::max(nmax[j], std::abs(x[j]));

        const double t_end = 60.0 / std::max(opt.gap_floor, 1e-300);
        const auto& gl = quad::gauss_legendre(24);
        auto add_panel = [&](double a, double b) {
            double mid = 0.5 * (a + b), half = 0.5 * (b - a);
            for (int i = 0; i < 24; ++i) {
                tnode_.push_back(mid + half * gl.nodes[i]);
                tweight_.push_back(half * gl.weights[i]);
            }
        };
        for (int p = 0; p < 4; ++p) add_panel(0.25 * p, 0.25 * (p + 1));
        double lo = 1.0;
        while (lo < t_end) {
            double hi = std::min(2.0 * lo, t_end);
            add_panel(lo, hi);
            lo = hi;
        }
        // algebraic tail: t = t_end / u^2, dt = 2 t_end / u^3 du on (0, 1].
        const auto& glt = quad::gauss_legendre(opt.tail_order);
        for (int i = 0; i < opt.tail_order; ++i) {
            double u = 0.5 * (glt.nodes[i] + 1.0);
            tnode_.push_back(t_end / (u * u));
            tweight_.push_back(0.5 * glt.weights[i] * 2.0 * t_end / (u * u * u));
        }

        const std::size_t nn = tnode_.size(), nx = xs_.size();
        table_.assign(nn * nx, 0.0);
        std::vector<std::vector<double>> axis(dim_);
        for (std::size_t nidx = 0; nidx < nn; ++nidx) {
            const double t = tnode_[nidx];
            for (int j = 0; j < dim_; ++j)
                axis[j] = scaled_bessel_i(nmax[j], 2.0 * t * coeff_[j]);
            for (std::size_t ix = 0; ix < nx; ++ix) {
                double prod = tweight_[nidx];
                for (int j = 0; j < dim_; ++j) prod *= axis[j][std::abs(xs_[ix][j])];
                table_[nidx * nx + ix] = prod;
            }
        }
    }

    int dim() const { return dim_; }
    const std::vector<LatticeVector>& points() const { return xs_; }
    bool interior() const { return interior_; }

    std::vector<double> evaluate(double gap) const {
        if (gap < 0.0) throw std::invalid_argument("bessel path: negative gap");
        if (gap == 0.0 && !(dim_ >= 3 && interior_))
            throw HypothesisError(
                "bessel path: gap = 0 requires d >= 3 and k interior to the certified region");
        const std::size_t nx = xs_.size(), nn = tnode_.size();
        std::vector<double> out(nx, 0.0);
        for (std::size_t nidx = 0; nidx < nn; ++nidx) {
            const double w = gap == 0.0 ? 1.0 : std::exp(-tnode_[nidx] * gap);
            if (w == 0.0) continue;
            const double* row = table_.data() + nidx * nx;
            for (std::size_t ix = 0; ix < nx; ++ix) out[ix] += w * row[ix];
        }
        return out;
    }

private:
    std::vector<LatticeVector> xs_;
    int dim_;
    bool interior_ = false;
    std::vector<double> coeff_;   // 2 c_j amplitudes in E - emin = sum 2 c_j (1 - cos p_j)
    std::vector<double> tnode_, tweight_;
    std::vector<double> table_;   // weight * prod of scaled Bessel factors, [node][x]
};

inline GreenTable green_bessel(const DispersionRelation& eps, const QuasiMomentum& k, double gap,
                               std::span<const LatticeVector> xs, const QuadOptions& opt = {}) {
    NnGreenEvaluator ev(eps, k, {xs.begin(), xs.end()}, opt);
    QuadOptions alt = opt;
    alt.tail_order = std::max(24, opt.tail_order - 16);
    alt.gap_floor = opt.gap_floor * 4.0;
    NnGreenEvaluator check(eps, k, {xs.begin(), xs.end()}, alt);
    GreenTable out;
    out.points.assign(xs.begin(), xs.end());
    out.method = "bessel";
    out.value = ev.evaluate(gap);
    auto v2 = check.evaluate(gap);
    for (std::size_t i = 0; i < out.value.size(); ++i)
        out.err = std::max(out.err, std::abs(out.value[i] - v2[i]));
    return out;
}

// ---------------------------------------------------------------------------
// d = 3: gap-ladder extrapolation through the sqrt(gap) expansion
// ---------------------------------------------------------------------------

namespace detail {

/// Interpolate values (s_i, v_i) by a polynomial in s and return its value
/// at s = 0.  Nodes are scaled by the largest |s| for conditioning.
inline double poly_at_zero(std::span<const double> s, std::span<const double> v) {
    const int m = static_cast<int>(s.size());
    double sref = 0.0;
    for (double x : s) sref = std::max(sref, std::abs(x));
    Eigen::MatrixXd A(m, m);
    Eigen::VectorXd rhs(m);
    for (int i = 0; i < m; ++i) {
        double t = s[i] / sref, pw = 1.0;
        for (int j = 0; j < m; ++j) {
            A(i, j) = pw;
            pw *= t;
        }
        rhs(i) = v[i];
    }
    Eigen::VectorXd coef = A.colPivHouseholderQr().solve(rhs);
    return coef(0);
}

}  // namespace detail

/// Threshold value by Richardson-type extrapolation of direct-grid values
/// along a geometric gap ladder, using the expansion of R0 in sqrt(gap).
/// Implemented for d = 3, where that expansion holds.
inline GreenTable green_extrapolated(const PairDispersion& E, std::span<const LatticeVector> xs,
                                     const QuadOptions& opt = {}) {
    if (E.dim() != 3) throw HypothesisError("green_extrapolated: implemented for d = 3");
    detail::require_certified(E, "green_extrapolated");
    const int n = opt.grid ? opt.grid : 1024;
    const int nlad = 8;
    std::vector<double> gaps(nlad), s(nlad);
    for (int i = 0; i < nlad; ++i) {
        gaps[i] = 0.064 * E.hessian_min_eig * std::pow(2.0, -i);
        s[i] = std::sqrt(gaps[i]);
    }
    auto fine = detail::direct_fixed(E, gaps, xs, n);
    auto half = detail::direct_fixed(E, gaps, xs, n / 2);
    double noise = 0.0;
    for (int g = 0; g < nlad; ++g)
        for (std::size_t ix = 0; ix < xs.size(); ++ix)
            noise = std::max(noise, std::abs(fine[g][ix] - half[g][ix]));

    GreenTable out;
    out.points.assign(xs.begin(), xs.end());
    out.method = "extrapolation";
    out.value.resize(xs.size());
    for (std::size_t ix = 0; ix < xs.size(); ++ix) {
        auto fit = [&](int m) {
            std::vector<double> ss(s.end() - m, s.end());
            std::vector<double> vv(m);
            for (int i = 0; i < m; ++i) vv[i] = fine[nlad - m + i][ix];
            return detail::poly_at_zero(ss, vv);
        };
        double p5 = fit(5), p6 = fit(6);
        out.value[ix] = p6;
        out.err = std::max(out.err, std::abs(p6 - p5) + 2.0 * noise);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Double-denominator sums for the threshold expansion coefficients
// ---------------------------------------------------------------------------

/// values[is * |ws| + iw] =
///   int (1 - cos((p,s))) cos((p,w)) / ((E_a - emin_a)(E_b - emin_b)) deta.
/// Requires d >= 3 and both minima certified at p = 0, where the numerator's
/// quadratic zero makes the integrand an |p|^{-2} (integrable) singularity.
inline std::vector<double> double_green(const PairDispersion& Ea, const PairDispersion& Eb,
                                        std::span<const LatticeVector> svecs,
                                        std::span<const LatticeVector> wvecs,
                                        const QuadOptions& opt = {}) {
    const int d = Ea.dim();
    if (Eb.dim() != d) throw std::invalid_argument("double_green: dimension mismatch");
    if (d < 3) throw HypothesisError("double_green: requires d >= 3");
    detail::require_certified(Ea, "double_green");
    detail::require_certified(Eb, "double_green");
    for (const auto& E : {std::cref(Ea), std::cref(Eb)})
        for (double m : E.get().minimizer)
            if (std::abs(m) > 1e-8)
                throw HypothesisError("double_green: both minima must sit at p = 0");
    const std::size_t ns = svecs.size(), nw = wvecs.size(), nacc = ns * nw;
    const double c = opt.ball_radius > 0.0 ? std::min(opt.ball_radius, 0.99 * pi) : 2.8;
    const double c2 = c * c;

    // ball part in polar coordinates; the doubled denominator and the
    // (omega, s)-weighted numerator are angularly rougher than the single
    // Green's function, so run the surface rule one level finer.
    const auto& sph = detail::sphere_rule(d, opt.sphere_level + 1);
    double lmin = std::min(Ea.hessian_min_eig, Eb.hessian_min_eig);
    detail::RadialNodes rad = detail::radial_nodes(c, 0.0, lmin, opt.radial_order);
    double norm = 1.0;
    for (int j = 0; j < d; ++j) norm /= two_pi;
    auto ball = parallel_accumulate(
        sph.size(), nacc, [&](std::size_t lo, std::size_t hi, double* acc) {
            std::vector<double> p(d), as(ns), aw(nw), nums(ns);
            for (std::size_t isph = lo; isph < hi; ++isph) {
                const double* omega = sph.point(isph);
                const double wsph = sph.weights[isph];
                for (std::size_t i = 0; i < ns; ++i)
                    as[i] = dot(std::span<const double>(omega, d), svecs[i]);
                for (std::size_t i = 0; i < nw; ++i)
                    aw[i] = dot(std::span<const double>(omega, d), wvecs[i]);
                for (std::size_t ir = 0; ir < rad.r.size(); ++ir) {
                    const double r = rad.r[ir];
                    double cut = detail::radial_cutoff(r * r, c2);
                    if (cut == 0.0) continue;
                    for (int j = 0; j < d; ++j) p[j] = r * omega[j];
                    double den = Ea.gap_above_min(p) * Eb.gap_above_min(p);
                    double common = norm * wsph * rad.w[ir] * cut * std::pow(r, d - 1) / den;
                    for (std::size_t i = 0; i < ns; ++i) {
                        double sn = std::sin(0.5 * r * as[i]);
                        nums[i] = 2.0 * sn * sn;
                    }
                    for (std::size_t i = 0; i < ns; ++i) {
                        double f = common * nums[i];
                        for (std::size_t jw = 0; jw < nw; ++jw)
                            acc[i * nw + jw] += f * std::cos(r * aw[jw]);
                    }
                }
            }
        });

    // masked torus scan
    std::vector<LatticeVector> vecs(wvecs.begin(), wvecs.end());
    vecs.insert(vecs.end(), svecs.begin(), svecs.end());
    double base_a = -Ea.emin, base_b = -Eb.emin;
    std::vector<double> amp_a, amp_b;
    std::vector<LatticeVector> term_vecs;
    for (const auto& t : Ea.terms()) {
        if (is_zero(t.s)) base_a += t.amplitude;
    }
    for (const auto& t : Eb.terms()) {
        if (is_zero(t.s)) base_b += t.amplitude;
    }
    // shared phase list for both dispersions' non-constant terms
    for (const auto& t : Ea.terms())
        if (!is_zero(t.s)) {
            term_vecs.push_back(t.s);
            amp_a.push_back(t.amplitude);
            amp_b.push_back(0.0);
        }
    for (const auto& t : Eb.terms()) {
        if (is_zero(t.s)) continue;
        bool merged = false;
        for (std::size_t i = 0; i < term_vecs.size(); ++i)
            if (term_vecs[i] == t.s) {
                amp_b[i] += t.amplitude;
                merged = true;
                break;
            }
        if (!merged) {
            term_vecs.push_back(t.s);
            amp_a.push_back(0.0);
            amp_b.push_back(t.amplitude);
        }
    }
    vecs.insert(vecs.end(), term_vecs.begin(), term_vecs.end());
    const std::size_t nterm = term_vecs.size();
    int n = opt.grid ? opt.grid : detail::default_grid(d);
    auto axes = quad::torus_axes(d, n);
    auto sums = scan_accumulate(
        d, axes, vecs, nacc,
        [&](std::span<const double> q, std::span<const std::complex<double>> ph, double* acc) {
            double r2 = 0.0;
            for (int j = 0; j < d; ++j) {
                double dj = reduce_to_torus(q[j]);
                r2 += dj * dj;
            }
            double mask = 1.0 - detail::radial_cutoff(r2, c2);
            if (mask == 0.0) return;
            double ea = base_a, eb = base_b;
            for (std::size_t t = 0; t < nterm; ++t) {
                double re = ph[nw + ns + t].real();
                ea += amp_a[t] * re;
                eb += amp_b[t] * re;
            }
            double common = mask / (ea * eb);
            for (std::size_t i = 0; i < ns; ++i) {
                double f = common * (1.0 - ph[nw + i].real());
                for (std::size_t jw = 0; jw < nw; ++jw) acc[i * nw + jw] += f * ph[jw].real();
            }
        });
    double cell = 1.0;
    for (int j = 0; j < d; ++j) cell *= axes[j].step / two_pi;
    std::vector<double> out(nacc);
    for (std::size_t i = 0; i < nacc; ++i) out[i] = ball[i] + sums[i] * cell;
    return out;
}

/// Independent check of double_green for nearest-neighbor dispersions:
/// 1/(AB) = int int e^{-tA - uB} dt du in polar time coordinates
/// (T, lambda) with t = lambda T, u = (1-lambda) T, each axis factor a
/// scaled Bessel function at 2 T (lambda c_j + (1-lambda) c'_j).
inline std::vector<double> double_green_bessel(const DispersionRelation& eps,
                                               const QuasiMomentum& ka, const QuasiMomentum& kb,
                                               std::span<const LatticeVector> svecs,
                                               std::span<const LatticeVector> wvecs,
                                               const QuadOptions& opt = {}) {
    const int d = eps.dim();
    if (d < 3) throw HypothesisError("double_green_bessel: requires d >= 3");
    if (!eps.nearest_neighbor())
        throw HypothesisError("double_green_bessel: nearest-neighbor dispersion required");
    std::vector<double> ca(d), cb(d);
    for (int j = 0; j < d; ++j) {
        LatticeVector ej(d, 0);
        ej[j] = 1;
        double amp = -2.0 * eps.coefficient(ej);
        ca[j] = amp * std::cos(0.5 * ka[j]);
        cb[j] = amp * std::cos(0.5 * kb[j]);
        if (!(ca[j] > 1e-12) || !(cb[j] > 1e-12))
            throw HypothesisError("double_green_bessel: k interior to the certified region required");
    }
    const std::size_t ns = svecs.size(), nw = wvecs.size();
    std::vector<int> nmax(d, 0);
    int smax = 0;
    for (const auto& w : wvecs)
        for (int j = 0; j < d; ++j) nmax[j] = std::max(nmax[j], std::abs(w[j]));
    for (const auto& s : svecs)
        for (int j = 0; j < d; ++j) smax = std::max(smax, std::abs(s[j]));
    for (int j = 0; j < d; ++j) nmax[j] += smax;

    const double t_split = 40.0;
    std::vector<double> tn, tw;
    const auto& gl24 = quad::gauss_legendre(24);
    auto add_panel = [&](double a, double b) {
        double mid = 0.5 * (a + b), half = 0.5 * (b - a);
        for (int i = 0; i < 24; ++i) {
            tn.push_back(mid + half * gl24.nodes[i]);
            tw.push_back(half * gl24.weights[i]);
        }
    };
    for (int p = 0; p < 4; ++p) add_panel(0.25 * p, 0.25 * (p + 1));
    double lo = 1.0;
    while (lo < t_split) {
        double hi = std::min(2.0 * lo, t_split);
        add_panel(lo, hi);
        lo = hi;
    }
    const auto& glt = quad::gauss_legendre(opt.tail_order);
    for (int i = 0; i < opt.tail_order; ++i) {
        double u = 0.5 * (glt.nodes[i] + 1.0);
        tn.push_back(t_split / (u * u));
        tw.push_back(0.5 * glt.weights[i] * 2.0 * t_split / (u * u * u));
    }

    const int nlam = 32;
    const auto& gll = quad::gauss_legendre(nlam);
    std::vector<double> out(ns * nw, 0.0);
    std::vector<std::vector<double>> axis(d);
    LatticeVector shifted(d);
    for (int il = 0; il < nlam; ++il) {
        const double lam = 0.5 * (gll.nodes[il] + 1.0);
        const double wl = 0.5 * gll.weights[il];
        for (std::size_t it = 0; it < tn.size(); ++it) {
            const double T = tn[it];
            for (int j = 0; j < d; ++j)
                axis[j] = scaled_bessel_i(nmax[j], 2.0 * T * (lam * ca[j] + (1.0 - lam) * cb[j]));
            auto prod = [&](const LatticeVector& v) {
                double pr = 1.0;
                for (int j = 0; j < d; ++j) pr *= axis[j][std::abs(v[j])];
                return pr;
            };
            const double wt = wl * tw[it] * T;
            for (std::size_t iw = 0; iw < nw; ++iw) {
                double pw = prod(wvecs[iw]);
                for (std::size_t is = 0; is < ns; ++is) {
                    for (int j = 0; j < d; ++j) shifted[j] = wvecs[iw][j] - svecs[is][j];
                    double pm = prod(shifted);
                    for (int j = 0; j < d; ++j) shifted[j] = wvecs[iw][j] + svecs[is][j];
                    double pp = prod(shifted);
                    out[is * nw + iw] += wt * (pw - 0.5 * pm - 0.5 * pp);
                }
            }
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Dispatcher
// ---------------------------------------------------------------------------

struct GreenRequest {
    GreenMethod method = GreenMethod::automatic;
    double gap = 0.0;
    bool cross_check = false;
    QuadOptions quad{};
};

/// Evaluate R0 with the requested or automatically selected method.  The
/// caller supplies the pair dispersion consistent with (eps, k).  With
/// cross_check set, a second (preferably independent) method is run and
/// the largest discrepancy is recorded in cross_diff.
inline GreenTable evaluate_green(const DispersionRelation& eps, const QuasiMomentum& k,
                                 const PairDispersion& pair, std::span<const LatticeVector> xs,
                                 const GreenRequest& req) {
    const int d = eps.dim();
    const bool nn = eps.nearest_neighbor();
    const bool bessel_ok =
        nn && (req.gap > 0.0 || (d >= 3 && in_region_g_laplacian(k) && pair.certified()));
    const bool polar_ok = pair.certified() && (req.gap > 0.0 || d >= 3);

    GreenMethod m = req.method;
    if (m == GreenMethod::automatic) {
        if (bessel_ok)
            m = GreenMethod::bessel;
        else if (polar_ok)
            m = GreenMethod::polar;
        else if (req.gap > 0.0)
            m = GreenMethod::direct;
        else
            throw HypothesisError(
                "evaluate_green: threshold evaluation needs a certified minimum and d >= 3");
    }
    auto run = [&](GreenMethod which) -> GreenTable {
        switch (which) {
            case GreenMethod::direct: return green_direct(pair, req.gap, xs, req.quad);
            case GreenMethod::polar: return green_polar(pair, req.gap, xs, req.quad);
            case GreenMethod::bessel: return green_bessel(eps, k, req.gap, xs, req.quad);
            case GreenMethod::extrapolation:
                if (req.gap != 0.0)
                    throw std::invalid_argument("evaluate_green: extrapolation is a threshold method");
                return green_extrapolated(pair, xs, req.quad);
            default: throw std::logic_error("evaluate_green: unresolved method");
        }
    };
    GreenTable out = run(m);
    if (req.cross_check) {
        GreenTable alt;
        if (m != GreenMethod::bessel && bessel_ok) {
            alt = run(GreenMethod::bessel);
        } else if (m != GreenMethod::polar && polar_ok) {
            alt = run(GreenMethod::polar);
        } else {
            QuadOptions finer = req.quad;
            finer.sphere_level = req.quad.sphere_level + 1;
            finer.grid = (req.quad.grid ? req.quad.grid : detail::default_grid(d)) * 3 / 2;
            GreenRequest r2 = req;
            r2.cross_check = false;
            r2.quad = finer;
            r2.method = m;
            alt = evaluate_green(eps, k, pair, xs, r2);
        }
        out.cross_diff = 0.0;
        for (std::size_t i = 0; i < out.value.size(); ++i)
            out.cross_diff = std::max(out.cross_diff, std::abs(out.value[i] - alt.value[i]));
    }
    return out;
}

}  // namespace latthresh::green
