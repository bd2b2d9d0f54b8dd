#pragma once

// Dispersion relations, pair potentials and fiber pair dispersions for the
// two-particle lattice problem.  A dispersion eps is a finite, even, real
// Fourier series on Z^d; the fiber Hamiltonian at quasi-momentum k acts by
// multiplication with E_k(p) = eps(k/2 + p) + eps(k/2 - p) on the torus.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <map>
#include <numbers>
#include <random>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace latthresh {

inline constexpr double pi = std::numbers::pi;
inline constexpr double two_pi = 2.0 * std::numbers::pi;

using LatticeVector = std::vector<int>;

/// Raised when a request relies on a spectral hypothesis (unique Morse
/// minimum, certified quasi-momentum region) that the data does not satisfy.
struct HypothesisError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Raised when a computation would exceed a configured resource cap.
struct ResourceError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Fold a real number into the fundamental interval [-pi, pi).
inline double reduce_to_torus(double x) {
    double y = std::remainder(x, two_pi);
    if (y >= pi) y -= two_pi;
    return y;
}

inline LatticeVector negated(const LatticeVector& v) {
    LatticeVector w(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) w[i] = -v[i];
    return w;
}

inline bool is_zero(const LatticeVector& v) {
    return std::all_of(v.begin(), v.end(), [](int c) { return c == 0; });
}

/// Orbit representative of {v, -v}: the copy whose first nonzero entry is
/// positive (the zero vector represents itself).
inline LatticeVector orbit_representative(const LatticeVector& v) {
    for (int c : v) {
        if (c > 0) return v;
        if (c < 0) return negated(v);
    }
    return v;
}

/// Sorted orbit representatives of [-L, L]^d under x ~ -x.
inline std::vector<LatticeVector> box_orbit_representatives(int dim, int L) {
    std::vector<LatticeVector> out;
    LatticeVector cur(dim, 0);
    auto walk = [&](auto&& self, int axis) -> void {
        if (axis == dim) {
            if (orbit_representative(cur) == cur) out.push_back(cur);
            return;
        }
        for (int c = -L; c <= L; ++c) {
            cur[axis] = c;
            self(self, axis + 1);
        }
    };
    walk(walk, 0);
    std::sort(out.begin(), out.end());
    return out;
}

inline LatticeVector vec_add(const LatticeVector& a, const LatticeVector& b) {
    LatticeVector r(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) r[i] = a[i] + b[i];
    return r;
}

inline LatticeVector vec_sub(const LatticeVector& a, const LatticeVector& b) {
    LatticeVector r(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) r[i] = a[i] - b[i];
    return r;
}

inline double dot(std::span<const double> p, const LatticeVector& s) {
    double acc = 0.0;
    for (std::size_t i = 0; i < s.size(); ++i) acc += p[i] * s[i];
    return acc;
}

inline int max_abs_component(const LatticeVector& v) {
    int m = 0;
    for (int c : v) m = std::max(m, std::abs(c));
    return m;
}

namespace detail {

/// Symmetrize and validate the entry list of a finite even table on Z^d.
/// Entries may list one or both members of an orbit {s, -s}; listing both
/// with different values is an error.  Zero values are dropped.
inline std::map<LatticeVector, double> canonical_even_table(
    int dim, const std::vector<std::pair<LatticeVector, double>>& entries,
    const char* what) {
    if (dim < 1) throw std::invalid_argument(std::string(what) + ": dimension must be >= 1");
    std::map<LatticeVector, double> reps;
    for (const auto& [s, value] : entries) {
        if (static_cast<int>(s.size()) != dim)
            throw std::invalid_argument(std::string(what) + ": entry size does not match dimension");
        if (!std::isfinite(value))
            throw std::invalid_argument(std::string(what) + ": non-finite coefficient");
        LatticeVector rep = orbit_representative(s);
        auto [it, inserted] = reps.emplace(rep, value);
        if (!inserted && std::abs(it->second - value) > 1e-14 * (1.0 + std::abs(value)))
            throw std::invalid_argument(std::string(what) + ": conflicting values on an orbit {s,-s}");
    }
    for (auto it = reps.begin(); it != reps.end();)
        it = (it->second == 0.0) ? reps.erase(it) : std::next(it);
    return reps;
}

inline std::vector<std::pair<LatticeVector, double>> expand_even_table(
    const std::map<LatticeVector, double>& reps) {
    std::vector<std::pair<LatticeVector, double>> full;
    full.reserve(2 * reps.size());
    for (const auto& [s, v] : reps) {
        full.emplace_back(s, v);
        if (!is_zero(s)) full.emplace_back(negated(s), v);
    }
    return full;
}

}  // namespace detail

/// Finite even real dispersion relation eps(p) = sum_s epshat(s) e^{i(p,s)}.
/// Only one representative per orbit {s,-s} is stored.
class DispersionRelation {
public:
    DispersionRelation(int dim, std::vector<std::pair<LatticeVector, double>> entries)
        : dim_(dim), reps_(detail::canonical_even_table(dim, entries, "dispersion")) {}

    int dim() const { return dim_; }

    const std::map<LatticeVector, double>& coefficients() const { return reps_; }

    /// Both members of every orbit, for formulas stated over the full support.
    std::vector<std::pair<LatticeVector, double>> expanded_support() const {
        return detail::expand_even_table(reps_);
    }

    double coefficient(const LatticeVector& s) const {
        auto it = reps_.find(orbit_representative(s));
        return it == reps_.end() ? 0.0 : it->second;
    }

    int support_radius() const {
        int r = 0;
        for (const auto& [s, v] : reps_) r = std::max(r, max_abs_component(s));
        return r;
    }

    /// True when the support is contained in {0, +-e_j}; such dispersions
    /// separate over axes and admit exact extrema and fast grid sums.
    bool nearest_neighbor() const {
        for (const auto& [s, v] : reps_) {
            int nonzero = 0;
            for (int c : s) nonzero += (c != 0);
            if (nonzero > 1) return false;
            if (max_abs_component(s) > 1) return false;
        }
        return true;
    }

    double evaluate(std::span<const double> p) const {
        double acc = 0.0;
        for (const auto& [s, v] : reps_)
            acc += is_zero(s) ? v : 2.0 * v * std::cos(dot(p, s));
        return acc;
    }

private:
    int dim_;
    std::map<LatticeVector, double> reps_;
};

inline double eval_dispersion(const DispersionRelation& eps, std::span<const double> p) {
    if (p.size() != static_cast<std::size_t>(eps.dim()))
        throw std::invalid_argument("eval_dispersion: point size does not match dimension");
    return eps.evaluate(p);
}

/// eps(p) = sum_j (1 - cos p_j): epshat(0) = d, epshat(+-e_j) = -1/2.
inline DispersionRelation laplacian_dispersion(int d) {
    std::vector<std::pair<LatticeVector, double>> entries;
    entries.emplace_back(LatticeVector(d, 0), static_cast<double>(d));
    for (int j = 0; j < d; ++j) {
        LatticeVector e(d, 0);
        e[j] = 1;
        entries.emplace_back(e, -0.5);
    }
    return DispersionRelation(d, std::move(entries));
}

/// Finite even attractive potential: v̂ <= 0, v̂(-x) = v̂(x).
class Potential {
public:
    Potential(int dim, std::vector<std::pair<LatticeVector, double>> entries)
        : dim_(dim), reps_(detail::canonical_even_table(dim, entries, "potential")) {
        for (const auto& [x, v] : reps_)
            if (v > 0.0)
                throw std::invalid_argument("potential: coefficients must be non-positive");
    }

    int dim() const { return dim_; }
    const std::map<LatticeVector, double>& coefficients() const { return reps_; }
    bool empty() const { return reps_.empty(); }

    std::vector<std::pair<LatticeVector, double>> expanded_support() const {
        return detail::expand_even_table(reps_);
    }

    double value(const LatticeVector& x) const {
        auto it = reps_.find(orbit_representative(x));
        return it == reps_.end() ? 0.0 : it->second;
    }

    int support_radius() const {
        int r = 0;
        for (const auto& [x, v] : reps_) r = std::max(r, max_abs_component(x));
        return r;
    }

private:
    int dim_;
    std::map<LatticeVector, double> reps_;
};

/// Quasi-momentum of the pair, always reduced componentwise to [-pi, pi).
class QuasiMomentum {
public:
    explicit QuasiMomentum(std::vector<double> components) : comps_(std::move(components)) {
        if (comps_.empty()) throw std::invalid_argument("quasi-momentum: empty component list");
        for (double& c : comps_) {
            if (!std::isfinite(c)) throw std::invalid_argument("quasi-momentum: non-finite component");
            c = reduce_to_torus(c);
        }
    }

    static QuasiMomentum zero(int dim) { return QuasiMomentum(std::vector<double>(dim, 0.0)); }

    int dim() const { return static_cast<int>(comps_.size()); }
    const std::vector<double>& components() const { return comps_; }
    double operator[](int j) const { return comps_[j]; }

    std::vector<double> half() const {
        std::vector<double> h(comps_);
        for (double& c : h) c *= 0.5;
        return h;
    }

private:
    std::vector<double> comps_;
};

/// Pair Fourier coefficients Ehat_k(s) = 2 epshat(s) cos((k/2, s)) over the
/// full (two-sided) support.
inline std::map<LatticeVector, double> pair_fourier_coeffs(const DispersionRelation& eps,
                                                           const QuasiMomentum& k) {
    if (k.dim() != eps.dim())
        throw std::invalid_argument("pair_fourier_coeffs: dimension mismatch");
    std::vector<double> kh = k.half();
    std::map<LatticeVector, double> out;
    for (const auto& [s, v] : eps.expanded_support())
        out[s] = 2.0 * v * std::cos(dot(kh, s));
    return out;
}

struct PairDispersionOptions {
    int n_grid = 0;            // scan points per axis; 0 picks a dimension-scaled default
    double tau_morse = 1e-8;   // smallest Hessian eigenvalue accepted as Morse
    int newton_max = 60;
};

/// One cosine term of E_k: amplitude * cos((p, s)), with s an orbit
/// representative (amplitudes already carry the +-s fold).
struct PairTerm {
    LatticeVector s;
    double amplitude;
};

/// The fiber symbol E_k together with its extrema and minimum structure.
class PairDispersion {
public:
    PairDispersion(DispersionRelation eps, QuasiMomentum k, std::vector<PairTerm> terms)
        : eps_(std::move(eps)), k_(std::move(k)), terms_(std::move(terms)) {}

    const DispersionRelation& dispersion() const { return eps_; }
    const QuasiMomentum& k() const { return k_; }
    int dim() const { return eps_.dim(); }
    const std::vector<PairTerm>& terms() const { return terms_; }

    double evaluate(std::span<const double> p) const {
        double acc = 0.0;
        for (const auto& t : terms_) acc += t.amplitude * std::cos(dot(p, t.s));
        return acc;
    }

    /// E_k(p) - E_min(k) evaluated without cancellation near the minimizer:
    /// each term uses cos A - cos B = -2 sin((A+B)/2) sin((A-B)/2).
    double gap_above_min(std::span<const double> p) const {
        double acc = 0.0;
        for (const auto& t : terms_) {
            double a = dot(p, t.s);
            double b = minimizer_dot_cache_.empty() ? 0.0 : minimizer_dot_cache_[&t - terms_.data()];
            acc += -2.0 * t.amplitude * std::sin(0.5 * (a + b)) * std::sin(0.5 * (a - b));
        }
        return acc;
    }

    Eigen::VectorXd gradient(std::span<const double> p) const {
        Eigen::VectorXd g = Eigen::VectorXd::Zero(dim());
        for (const auto& t : terms_) {
            double s = -t.amplitude * std::sin(dot(p, t.s));
            for (int j = 0; j < dim(); ++j) g[j] += s * t.s[j];
        }
        return g;
    }

    Eigen::MatrixXd hessian_at(std::span<const double> p) const {
        Eigen::MatrixXd h = Eigen::MatrixXd::Zero(dim(), dim());
        for (const auto& t : terms_) {
            double c = -t.amplitude * std::cos(dot(p, t.s));
            for (int a = 0; a < dim(); ++a)
                for (int b = 0; b < dim(); ++b) h(a, b) += c * t.s[a] * t.s[b];
        }
        return h;
    }

    double emin = 0.0;
    double emax = 0.0;
    std::vector<double> minimizer;   // p(k)
    Eigen::MatrixXd hessian;         // at the minimizer
    double hessian_min_eig = 0.0;
    bool morse_certified = false;    // Hessian positive definite above tau_morse
    bool unique_minimum = true;      // no distinct global minimum found elsewhere

    /// Hypotheses needed by threshold-side computations.
    bool certified() const { return morse_certified && unique_minimum; }

    void finalize_minimizer_cache() {
        minimizer_dot_cache_.resize(terms_.size());
        for (std::size_t i = 0; i < terms_.size(); ++i)
            minimizer_dot_cache_[i] = dot(minimizer, terms_[i].s);
    }

private:
    DispersionRelation eps_;
    QuasiMomentum k_;
    std::vector<PairTerm> terms_;
    std::vector<double> minimizer_dot_cache_;
};

namespace detail {

inline int default_scan_grid(int d) {
    switch (d) {
        case 1: return 256;
        case 2: return 96;
        case 3: return 48;
        case 4: return 20;
        default: return 12;
    }
}

/// Newton refinement of a stationary point of E_k; returns false when the
/// Hessian is numerically singular along the way.
inline bool newton_refine(const PairDispersion& pd, std::vector<double>& p, int max_iter) {
    const int d = pd.dim();
    for (int it = 0; it < max_iter; ++it) {
        Eigen::VectorXd g = pd.gradient(p);
        if (g.norm() < 1e-14) return true;
        Eigen::MatrixXd h = pd.hessian_at(p);
        Eigen::FullPivLU<Eigen::MatrixXd> lu(h);
        if (!lu.isInvertible()) return false;
        Eigen::VectorXd step = lu.solve(g);
        if (!step.allFinite() || step.norm() > 1.0) return false;
        for (int j = 0; j < d; ++j) p[j] = reduce_to_torus(p[j] - step[j]);
    }
    return pd.gradient(p).norm() < 1e-10;
}

/// Torus distance between two points, modulo the +-p symmetry of E_k.
inline double torus_distance_mod_parity(const std::vector<double>& a, const std::vector<double>& b) {
    double d1 = 0.0, d2 = 0.0;
    for (std::size_t j = 0; j < a.size(); ++j) {
        double u = reduce_to_torus(a[j] - b[j]);
        double v = reduce_to_torus(a[j] + b[j]);
        d1 += u * u;
        d2 += v * v;
    }
    return std::sqrt(std::min(d1, d2));
}

}  // namespace detail

/// Build the fiber symbol at quasi-momentum k and locate its extrema.
///
/// Nearest-neighbor dispersions separate over axes and are handled exactly;
/// otherwise a grid scan with Newton refinement is used.  A degenerate or
/// non-unique minimum is flagged, not fatal: only threshold-side requests
/// require certification.
inline PairDispersion pair_dispersion(const DispersionRelation& eps, const QuasiMomentum& k,
                                      const PairDispersionOptions& opts = {}) {
    if (k.dim() != eps.dim())
        throw std::invalid_argument("pair_dispersion: dimension mismatch");
    const int d = eps.dim();
    std::vector<double> kh = k.half();

    std::vector<PairTerm> terms;
    for (const auto& [s, v] : eps.coefficients()) {
        double ehat = 2.0 * v * std::cos(dot(kh, s));
        double amp = is_zero(s) ? ehat : 2.0 * ehat;
        if (amp != 0.0) terms.push_back({s, amp});
    }
    PairDispersion pd(eps, k, std::move(terms));

    if (eps.nearest_neighbor()) {
        // E(p) = a0 + sum_j a_j cos p_j with a_j the axis amplitudes.
        double a0 = 0.0;
        std::vector<double> axis(d, 0.0);
        for (const auto& t : pd.terms()) {
            if (is_zero(t.s)) {
                a0 += t.amplitude;
            } else {
                for (int j = 0; j < d; ++j)
                    if (t.s[j] != 0) axis[j] += t.amplitude;
            }
        }
        pd.minimizer.assign(d, 0.0);
        pd.emin = a0;
        pd.emax = a0;
        bool flat = false;
        for (int j = 0; j < d; ++j) {
            pd.emin -= std::abs(axis[j]);
            pd.emax += std::abs(axis[j]);
            if (axis[j] > 0.0) pd.minimizer[j] = -pi;  // pi and -pi coincide on the torus
            if (axis[j] == 0.0) flat = true;
        }
        pd.hessian = Eigen::MatrixXd::Zero(d, d);
        double min_eig = std::numeric_limits<double>::infinity();
        for (int j = 0; j < d; ++j) {
            pd.hessian(j, j) = std::abs(axis[j]);
            min_eig = std::min(min_eig, std::abs(axis[j]));
        }
        pd.hessian_min_eig = min_eig;
        pd.morse_certified = min_eig > opts.tau_morse;
        pd.unique_minimum = !flat;
        pd.finalize_minimizer_cache();
        return pd;
    }

    const int n = opts.n_grid > 0 ? opts.n_grid : detail::default_scan_grid(d);
    const double h = two_pi / n;
    std::vector<double> p(d, 0.0);
    std::vector<int> idx(d, 0);
    double vmin = std::numeric_limits<double>::infinity();
    double vmax = -std::numeric_limits<double>::infinity();
    std::vector<double> argmin(d, 0.0), argmax(d, 0.0);
    std::vector<std::vector<double>> low_cells;  // candidates for tied minima

    const long total = static_cast<long>(std::pow(static_cast<double>(n), d));
    for (long t = 0; t < total; ++t) {
        long rem = t;
        for (int j = 0; j < d; ++j) {
            idx[j] = static_cast<int>(rem % n);
            rem /= n;
            p[j] = -pi + idx[j] * h;
        }
        double v = pd.evaluate(p);
        if (v < vmin) {
            vmin = v;
            argmin = p;
        }
        if (v > vmax) {
            vmax = v;
            argmax = p;
        }
    }
    // Second pass: collect grid cells close to the global minimum but far
    // from +-argmin, to detect non-unique minima after refinement.
    const double tie_window = 1e-6 * (std::abs(vmax - vmin) + 1.0);
    for (long t = 0; t < total; ++t) {
        long rem = t;
        for (int j = 0; j < d; ++j) {
            idx[j] = static_cast<int>(rem % n);
            rem /= n;
            p[j] = -pi + idx[j] * h;
        }
        if (pd.evaluate(p) < vmin + tie_window &&
            detail::torus_distance_mod_parity(p, argmin) > 2.5 * h)
            low_cells.push_back(p);
    }

    bool newton_min_ok = detail::newton_refine(pd, argmin, opts.newton_max);
    pd.minimizer = argmin;
    pd.emin = pd.evaluate(argmin);
    detail::newton_refine(pd, argmax, opts.newton_max);
    pd.emax = std::max(vmax, pd.evaluate(argmax));

    pd.unique_minimum = true;
    for (auto& cell : low_cells) {
        detail::newton_refine(pd, cell, opts.newton_max);
        if (pd.evaluate(cell) < pd.emin - 1e-12 * (1.0 + std::abs(pd.emin))) {
            pd.minimizer = cell;
            pd.emin = pd.evaluate(cell);
            pd.unique_minimum = false;  // scan missed the true basin; stay conservative
        } else if (std::abs(pd.evaluate(cell) - pd.emin) <= 1e-9 * (1.0 + std::abs(pd.emin)) &&
                   detail::torus_distance_mod_parity(cell, pd.minimizer) > 1e-6) {
            pd.unique_minimum = false;
        }
    }

    // E_k is even, so minima come in pairs {p, -p}; a unique minimum must be
    // self-paired, i.e. have components in {0, pi}.
    for (double c : pd.minimizer) {
        double dist0 = std::abs(c);
        double distpi = std::min(std::abs(c - pi), std::abs(c + pi));
        if (std::min(dist0, distpi) > 1e-8) pd.unique_minimum = false;
    }

    pd.hessian = pd.hessian_at(pd.minimizer);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(pd.hessian, Eigen::EigenvaluesOnly);
    pd.hessian_min_eig = es.eigenvalues().minCoeff();
    pd.morse_certified = newton_min_ok && pd.hessian_min_eig > opts.tau_morse;
    pd.finalize_minimizer_cache();
    return pd;
}

/// The certified region for the Laplacian family: all components bounded
/// away from pi (equivalently -pi after reduction).
inline bool in_region_g_laplacian(const QuasiMomentum& k, double tol = 1e-9) {
    for (int j = 0; j < k.dim(); ++j) {
        double c = k[j];
        if (std::min(std::abs(c - pi), std::abs(c + pi)) < tol) return false;
    }
    return true;
}

struct CndReport {
    double max_violation = 0.0;  // largest observed value of the cnd form
    int samples = 0;
    bool vacuous = false;        // no samples drawn
    bool consistent(double tol = 1e-10) const { return vacuous || max_violation <= tol; }
};

/// Statistical refutation test for conditional negative definiteness:
/// draws point batches p_1..p_n and complex weights with sum zero and
/// evaluates sum_{ij} eps(p_i - p_j) z_i conj(z_j).  A cnd dispersion keeps
/// the form <= 0; a single clear positive value refutes the property.
inline CndReport check_cnd(const DispersionRelation& eps, int n_samples, std::uint64_t seed) {
    if (n_samples < 0) throw std::invalid_argument("check_cnd: negative sample count");
    CndReport rep;
    rep.samples = n_samples;
    if (n_samples == 0) {
        rep.vacuous = true;
        return rep;
    }
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> angle(-pi, pi);
    std::uniform_int_distribution<int> batch(2, 6);
    std::normal_distribution<double> gauss(0.0, 1.0);
    const int d = eps.dim();
    for (int it = 0; it < n_samples; ++it) {
        int n = batch(rng);
        std::vector<std::vector<double>> pts(n, std::vector<double>(d));
        for (auto& p : pts)
            for (double& c : p) c = angle(rng);
        std::vector<std::complex<double>> z(n);
        std::complex<double> total(0.0, 0.0);
        for (int i = 0; i + 1 < n; ++i) {
            z[i] = {gauss(rng), gauss(rng)};
            total += z[i];
        }
        z[n - 1] = -total;
        double value = 0.0;
        std::vector<double> diff(d);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j) {
                for (int c = 0; c < d; ++c) diff[c] = pts[i][c] - pts[j][c];
                value += eps.evaluate(diff) * (z[i] * std::conj(z[j])).real();
            }
        rep.max_violation = std::max(rep.max_violation, value);
    }
    return rep;
}

}  // namespace latthresh
