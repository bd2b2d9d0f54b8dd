#pragma once

// Independent ground truth for the Birman-Schwinger machinery: dense
// diagonalization of the fiber Hamiltonian truncated to a finite box
// (position representation, Dirichlet walls), and an exact direct-integral
// check on a small periodic two-body model.

#include "latthresh/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <string>
#include <utility>
#include <vector>

namespace latthresh::oracle {

struct BoxOptions {
    int basis_cap = 6000;   // reject dense problems larger than this
    double margin = 0.5;    // report eigenvalues below emin + margin
    int l_max = 0;          // doubling limit override; 0 = dimension default
};

/// Fiber Hamiltonian compressed to even orbits of the box [-L,L]^d: Toeplitz
/// part from the pair Fourier coefficients (hard-wall truncation), diagonal
/// part mu vhat(x).  Toeplitz sections sit inside the symbol's range, so the
/// free box never produces spurious states below the threshold.
struct BoxHamiltonian {
    int dim = 0;
    QuasiMomentum k;
    double mu = 0.0;
    int L = 0;
    double emin = 0.0;
    std::vector<LatticeVector> basis;  // orbit representatives, lexicographic
    Eigen::MatrixXd matrix;
};

namespace detail {

inline std::vector<LatticeVector> box_orbits(int dim, int L) {
    return box_orbit_representatives(dim, L);
}

}  // namespace detail

inline BoxHamiltonian build_box(const DispersionRelation& eps, const QuasiMomentum& k,
                                double mu, const Potential& v, int L,
                                const BoxOptions& opt = {}) {
    if (v.dim() != eps.dim()) throw std::invalid_argument("box: dimension mismatch");
    if (L < v.support_radius() + eps.support_radius())
        throw std::invalid_argument("box: L smaller than the interaction support");
    BoxHamiltonian box{eps.dim(), k, mu, L, 0.0, {}, {}};
    box.basis = detail::box_orbits(eps.dim(), L);
    const std::size_t m = box.basis.size();
    if (m > static_cast<std::size_t>(opt.basis_cap))
        throw ResourceError("box: basis size " + std::to_string(m) + " exceeds the cap");

    PairDispersion pd = pair_dispersion(eps, k);
    box.emin = pd.emin;
    std::map<LatticeVector, double> T = pair_fourier_coeffs(eps, k);
    auto tval = [&](const LatticeVector& u) {
        auto it = T.find(u);
        return it == T.end() ? 0.0 : it->second;
    };

    box.matrix = Eigen::MatrixXd::Zero(m, m);
    const double c0 = 1.0 / std::sqrt(2.0);
    const int radius = eps.support_radius();
    for (std::size_t i = 0; i < m; ++i) {
        const LatticeVector& x = box.basis[i];
        double ci = is_zero(x) ? c0 : 1.0;
        for (std::size_t j = i; j < m; ++j) {
            const LatticeVector& y = box.basis[j];
            if (max_abs_component(vec_sub(x, y)) > radius &&
                max_abs_component(vec_add(x, y)) > radius)
                continue;
            double cj = is_zero(y) ? c0 : 1.0;
            double val = ci * cj * (tval(vec_sub(x, y)) + tval(vec_add(x, y)));
            box.matrix(i, j) = val;
            box.matrix(j, i) = val;
        }
        box.matrix(i, i) += mu * v.value(x);
    }
    return box;
}

struct BoxSpectrum {
    int L = 0;
    double emin = 0.0;
    std::vector<double> below_margin;  // all eigenvalues < emin + margin, ascending
    std::vector<double> bound;         // the subset strictly below emin
};

inline BoxSpectrum box_spectrum(const DispersionRelation& eps, const QuasiMomentum& k,
                                double mu, const Potential& v, int L,
                                const BoxOptions& opt = {}) {
    BoxHamiltonian box = build_box(eps, k, mu, v, L, opt);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(box.matrix, Eigen::EigenvaluesOnly);
    BoxSpectrum out{L, box.emin, {}, {}};
    for (Eigen::Index i = 0; i < es.eigenvalues().size(); ++i) {
        double e = es.eigenvalues()[i];
        if (e < box.emin + opt.margin) out.below_margin.push_back(e);
        if (e < box.emin) out.bound.push_back(e);
    }
    return out;
}

struct ConvergenceResult {
    int L = 0;           // final box radius
    double lowest = 0.0; // lowest eigenvalue at that radius
    double err = 0.0;    // |change| over the last doubling
    bool converged = false;
    std::vector<std::pair<int, double>> history;  // (L, lowest eigenvalue)
};

inline int convergence_l_max(int dim) { return dim >= 3 ? 20 : 200; }

/// Double the box until the lowest eigenvalue settles to 1e-9.  Throws when
/// no bound state is present (nothing to converge to); runs out of box at
/// L_max or at the dense-size cap with converged = false (shallow state).
inline ConvergenceResult convergence_rule(const DispersionRelation& eps,
                                          const QuasiMomentum& k, double mu,
                                          const Potential& v, const BoxOptions& opt = {}) {
    const int lmax = opt.l_max > 0 ? opt.l_max : convergence_l_max(eps.dim());
    int L = std::max(4, v.support_radius() + eps.support_radius());
    ConvergenceResult out;
    double prev = std::numeric_limits<double>::quiet_NaN();
    double emin = 0.0;
    while (true) {
        BoxSpectrum s;
        try {
            s = box_spectrum(eps, k, mu, v, L, opt);
        } catch (const ResourceError&) {
            break;  // cap reached before settling
        }
        emin = s.emin;
        double lowest = s.below_margin.empty() ? emin + opt.margin : s.below_margin.front();
        out.history.emplace_back(L, lowest);
        if (!std::isnan(prev) && std::abs(lowest - prev) < 1e-9) {
            out.L = L;
            out.lowest = lowest;
            out.err = std::abs(lowest - prev);
            out.converged = true;
            return out;
        }
        prev = lowest;
        if (2 * L > lmax) break;
        L *= 2;
    }
    if (!out.history.empty() && out.history.back().second >= emin)
        throw HypothesisError("convergence_rule: no bound state below the threshold");
    out.L = out.history.empty() ? L : out.history.back().first;
    out.lowest = out.history.empty() ? 0.0 : out.history.back().second;
    out.err = out.history.size() < 2
                  ? std::numeric_limits<double>::infinity()
                  : std::abs(out.history.back().second - out.history[out.history.size() - 2].second);
    out.converged = false;
    return out;
}

struct FiberCheckReport {
    int N = 0;
    std::size_t full_dim = 0;         // symmetric two-body subspace
    std::size_t fiber_dim_total = 0;  // sum of even fiber dimensions
    double max_mismatch = 0.0;        // multiset distance of sorted spectra
    bool pass = false;
};

/// Exact discrete analog of the direct-integral decomposition in d = 1: the
/// symmetric two-body spectrum on the N-periodic lattice must equal the union
/// over j of the even-fiber spectra at k_j = 2 pi j / N.  The two sides are
/// built independently (position-space Toeplitz vs. momentum-space blocks).
inline FiberCheckReport periodic_fiber_check(int N, double mu, const Potential& v,
                                             const DispersionRelation& eps) {
    if (eps.dim() != 1 || v.dim() != 1)
        throw std::invalid_argument("fiber check: one-dimensional model only");
    if (N < 3 || N > 12) throw std::invalid_argument("fiber check: N must be in [3, 12]");

    // periodized hopping and potential tables on Z_N
    std::vector<double> epsN(N, 0.0), vN(N, 0.0);
    for (const auto& [s, val] : eps.expanded_support()) epsN[((s[0] % N) + N) % N] += val;
    for (const auto& [x, val] : v.expanded_support()) vN[((x[0] % N) + N) % N] += val;

    // full side: H on (Z_N)^2 compressed to the swap-symmetric subspace
    std::vector<std::pair<int, int>> orbits;  // representative (a, b), a <= b
    for (int a = 0; a < N; ++a)
        for (int b = a; b < N; ++b) orbits.emplace_back(a, b);
    const std::size_t M = orbits.size();
    auto hfull = [&](int a, int b, int a2, int b2) {
        double h = 0.0;
        if (b == b2) h += epsN[((a - a2) % N + N) % N];
        if (a == a2) h += epsN[((b - b2) % N + N) % N];
        if (a == a2 && b == b2) h += mu * vN[((a - b) % N + N) % N];
        return h;
    };
    Eigen::MatrixXd full = Eigen::MatrixXd::Zero(M, M);
    for (std::size_t i = 0; i < M; ++i) {
        auto [a, b] = orbits[i];
        double ci = (a == b) ? 1.0 : 1.0 / std::sqrt(2.0);
        for (std::size_t j = 0; j < M; ++j) {
            auto [a2, b2] = orbits[j];
            double cj = (a2 == b2) ? 1.0 : 1.0 / std::sqrt(2.0);
            double acc = hfull(a, b, a2, b2);
            if (a2 != b2) acc += hfull(a, b, b2, a2);
            if (a != b) {
                acc += hfull(b, a, a2, b2);
                if (a2 != b2) acc += hfull(b, a, b2, a2);
            }
            full(i, j) = ci * cj * acc;
        }
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> esf(full, Eigen::EigenvaluesOnly);
    std::vector<double> full_spec(esf.eigenvalues().data(), esf.eigenvalues().data() + M);

    // fiber side: for each total momentum K_j the block over p_n = 2 pi n / N,
    // paired with p_{j-n}, reduced to the n <-> j-n symmetric subspace
    auto eps_at = [&](int n) {
        double p = two_pi * n / N, acc = 0.0;
        for (const auto& [s, val] : eps.expanded_support()) acc += val * std::cos(p * s[0]);
        return acc;
    };
    auto vf = [&](int l) {  // potential form factor at momentum 2 pi l / N
        double q = two_pi * l / N, acc = 0.0;
        for (const auto& [x, val] : v.expanded_support()) acc += val * std::cos(q * x[0]);
        return acc;
    };
    std::vector<double> fiber_spec;
    std::size_t fiber_dim = 0;
    for (int j = 0; j < N; ++j) {
        std::vector<std::pair<int, int>> reps;  // orbit {n, (j-n) mod N}
        for (int n = 0; n < N; ++n) {
            int partner = ((j - n) % N + N) % N;
            if (n <= partner) reps.emplace_back(n, partner);
        }
        const std::size_t mj = reps.size();
        fiber_dim += mj;
        Eigen::MatrixXd blk(mj, mj);
        auto helem = [&](int n, int n2) {
            double h = (mu / N) * vf(n - n2);
            if (n == n2) h += eps_at(n) + eps_at(((j - n) % N + N) % N);
            return h;
        };
        for (std::size_t r = 0; r < mj; ++r) {
            auto [n, np] = reps[r];
            double cr = (n == np) ? 1.0 : 1.0 / std::sqrt(2.0);
            for (std::size_t c = 0; c < mj; ++c) {
                auto [n2, np2] = reps[c];
                double cc = (n2 == np2) ? 1.0 : 1.0 / std::sqrt(2.0);
                double acc = helem(n, n2);
                if (n2 != np2) acc += helem(n, np2);
                if (n != np) {
                    acc += helem(np, n2);
                    if (n2 != np2) acc += helem(np, np2);
                }
                blk(r, c) = cr * cc * acc;
            }
        }
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> esb(blk, Eigen::EigenvaluesOnly);
        for (Eigen::Index t = 0; t < esb.eigenvalues().size(); ++t)
            fiber_spec.push_back(esb.eigenvalues()[t]);
    }
    std::sort(fiber_spec.begin(), fiber_spec.end());

    FiberCheckReport rep{N, M, fiber_dim, 0.0, false};
    if (full_spec.size() == fiber_spec.size()) {
        for (std::size_t i = 0; i < full_spec.size(); ++i)
            rep.max_mismatch = std::max(rep.max_mismatch,
                                        std::abs(full_spec[i] - fiber_spec[i]));
        rep.pass = rep.max_mismatch <= 1e-10;
    } else {
        rep.max_mismatch = std::numeric_limits<double>::infinity();
    }
    return rep;
}

}  // namespace latthresh::oracle
