#pragma once

// Quadrature building blocks shared by the Green's function integrators:
//  * Gauss-Legendre rules (nodes computed once by Newton iteration);
//  * tensor midpoint sums over boxes in the torus, with per-axis phasor
//    tables so that every requested e^{i(q,v)} costs one complex multiply
//    per grid point;
//  * a C-infinity cutoff used to localize quadratic-singularity subtractions.
//
// Midpoint grids are used throughout: on the full torus they have the same
// spectral accuracy as the trapezoid rule and never place a node on the
// singular point.

#include "latthresh/model.hpp"

#include <array>
#include <cmath>
#include <complex>
#include <functional>
#include <map>
#include <mutex>
#include <span>
#include <vector>

namespace latthresh::quad {

struct GaussLegendre {
    std::vector<double> nodes;    // on (-1, 1)
    std::vector<double> weights;
};

/// Gauss-Legendre rule of order n, cached. Nodes from Newton iteration on
/// P_n with the usual cosine initial guess; machine accurate for n <= 64.
inline const GaussLegendre& gauss_legendre(int n) {
    static std::map<int, GaussLegendre> cache;
    static std::mutex mutex;
    std::lock_guard<std::mutex> lock(mutex);
    auto it = cache.find(n);
    if (it != cache.end()) return it->second;
    GaussLegendre rule;
    rule.nodes.resize(n);
    rule.weights.resize(n);
    for (int i = 0; i < n; ++i) {
        double x = std::cos(pi * (i + 0.75) / (n + 0.5));
        double dp = 0.0;
        for (int iter = 0; iter < 100; ++iter) {
            double p0 = 1.0, p1 = x;
            for (int j = 2; j <= n; ++j) {
                double p2 = ((2.0 * j - 1.0) * x * p1 - (j - 1.0) * p0) / j;
                p0 = p1;
                p1 = p2;
            }
            dp = n * (x * p1 - p0) / (x * x - 1.0);
            double dx = p1 / dp;
            x -= dx;
            if (std::abs(dx) < 1e-16) break;
        }
        rule.nodes[i] = x;
        rule.weights[i] = 2.0 / ((1.0 - x * x) * dp * dp);
    }
    return cache.emplace(n, std::move(rule)).first->second;
}

/// Single-panel Gauss-Legendre integral of f over [a, b].
template <class F>
double integrate_gl(F&& f, double a, double b, int order = 20) {
    const auto& rule = gauss_legendre(order);
    const double mid = 0.5 * (a + b), half = 0.5 * (b - a);
    double acc = 0.0;
    for (int i = 0; i < order; ++i) acc += rule.weights[i] * f(mid + half * rule.nodes[i]);
    return acc * half;
}

/// Composite Gauss-Legendre with uniform panels.
template <class F>
double integrate_panels(F&& f, double a, double b, int panels, int order = 20) {
    double acc = 0.0;
    for (int p = 0; p < panels; ++p) {
        double pa = a + (b - a) * p / panels;
        double pb = a + (b - a) * (p + 1) / panels;
        acc += integrate_gl(f, pa, pb, order);
    }
    return acc;
}

/// C-infinity cutoff: 1 on [0, 1/4], 0 on [1, inf), monotone between.
inline double smooth_bump(double x) {
    if (x <= 0.25) return 1.0;
    if (x >= 1.0) return 0.0;
    auto h = [](double t) { return t > 0.0 ? std::exp(-1.0 / t) : 0.0; };
    double u = (x - 0.25) / 0.75;
    return h(1.0 - u) / (h(1.0 - u) + h(u));
}

/// One axis of a midpoint grid: points start + (i + 1/2) step, i = 0..n-1.
struct AxisSpec {
    double start = 0.0;
    double step = 0.0;
    int n = 0;
};

inline std::vector<AxisSpec> torus_axes(int dim, int n) {
    std::vector<AxisSpec> axes(dim);
    for (int j = 0; j < dim; ++j) axes[j] = {-pi, two_pi / n, n};
    return axes;
}

/// Centered box with half-width `half` per axis and n points per axis.
inline std::vector<AxisSpec> box_axes(int dim, std::span<const double> center, double half, int n) {
    std::vector<AxisSpec> axes(dim);
    for (int j = 0; j < dim; ++j) axes[j] = {center[j] - half, 2.0 * half / n, n};
    return axes;
}

/// Scan a tensor midpoint grid.  For every grid point the kernel receives
/// the point q and the phases e^{i(q, v)} for each requested lattice vector;
/// phases come from per-axis tables and cost one complex multiply per axis.
/// The caller multiplies accumulated sums by the cell volume itself.
template <class Kernel>
void midpoint_scan(int dim, std::span<const AxisSpec> axes,
                   std::span<const LatticeVector> phase_vecs, Kernel&& kernel) {
    const int nvec = static_cast<int>(phase_vecs.size());
    // tables[j][v * n + i] = exp(i * q_{j,i} * (phase_vecs[v])_j)
    std::vector<std::vector<std::complex<double>>> tables(dim);
    for (int j = 0; j < dim; ++j) {
        tables[j].resize(static_cast<std::size_t>(nvec) * axes[j].n);
        for (int v = 0; v < nvec; ++v)
            for (int i = 0; i < axes[j].n; ++i) {
                double q = axes[j].start + (i + 0.5) * axes[j].step;
                tables[j][static_cast<std::size_t>(v) * axes[j].n + i] =
                    std::polar(1.0, q * phase_vecs[v][j]);
            }
    }

    std::vector<std::complex<double>> prefix(static_cast<std::size_t>(dim + 1) * nvec);
    for (int v = 0; v < nvec; ++v) prefix[v] = {1.0, 0.0};
    std::vector<double> q(dim);

    // Explicit index recursion; depth is at most 5 in practice.
    std::vector<int> idx(dim, 0);
    int depth = 0;
    while (depth >= 0) {
        if (idx[depth] >= axes[depth].n) {
            idx[depth] = 0;
            --depth;
            if (depth >= 0) ++idx[depth];
            continue;
        }
        q[depth] = axes[depth].start + (idx[depth] + 0.5) * axes[depth].step;
        const auto* tab = tables[depth].data();
        auto* src = prefix.data() + static_cast<std::size_t>(depth) * nvec;
        auto* dst = src + nvec;
        for (int v = 0; v < nvec; ++v)
            dst[v] = src[v] * tab[static_cast<std::size_t>(v) * axes[depth].n + idx[depth]];
        if (depth == dim - 1) {
            kernel(std::span<const double>(q),
                   std::span<const std::complex<double>>(dst, nvec));
            ++idx[depth];
        } else {
            ++depth;
        }
    }
}

}  // namespace latthresh::quad
