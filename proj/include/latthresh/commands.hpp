#pragma once

// Subcommand implementations: each takes a validated RunConfig, runs the
// corresponding library operations, and writes CSV/JSON artifacts into the
// output directory.  Outputs are deterministic functions of the config, and
// every numeric column that has an error estimate carries it alongside.

#include "latthresh/bs.hpp"
#include "latthresh/config.hpp"
#include "latthresh/green.hpp"
#include "latthresh/io.hpp"
#include "latthresh/model.hpp"
#include "latthresh/oracle.hpp"
#include "latthresh/threshold.hpp"
#include "latthresh/validate.hpp"

#include <Eigen/Dense>

#include <filesystem>
#include <ostream>
#include <string>
#include <vector>

namespace latthresh::commands {

using config::ConfigError;
using config::RunConfig;
namespace fs = std::filesystem;

namespace detail {

inline std::vector<std::pair<std::string, std::string>> metadata(const RunConfig& cfg) {
    return {{"version", io::kVersion},
            {"config_hash", cfg.hash},
            {"seed", std::to_string(cfg.seed)}};
}

inline std::vector<std::string> k_columns(int dim) {
    std::vector<std::string> cols;
    for (int j = 1; j <= dim; ++j) cols.push_back("k" + std::to_string(j));
    return cols;
}

inline nlohmann::json k_json(const QuasiMomentum& k) {
    nlohmann::json arr = nlohmann::json::array();
    for (int j = 0; j < k.dim(); ++j) arr.push_back(k[j]);
    return arr;
}

inline nlohmann::json base_json(const RunConfig& cfg) {
    nlohmann::json j;
    j["version"] = io::kVersion;
    j["config_hash"] = cfg.hash;
    j["seed"] = cfg.seed;
    return j;
}

/// Largest box half-side whose orbit basis fits the cap (at least the
/// interaction support), or 0 when even the smallest box does not fit.
inline int auto_box_side(const RunConfig& cfg) {
    int lmin = std::max(1, cfg.v.support_radius() + cfg.eps.support_radius());
    int best = 0;
    for (int L = lmin; L <= 200; ++L) {
        double full = 1.0;
        for (int j = 0; j < cfg.dim; ++j) full *= 2.0 * L + 1;
        if ((full + 1.0) / 2.0 > cfg.oracle.cap) break;
        best = L;
    }
    return best;
}

}  // namespace detail

/// Resolvent tables over a lattice window for each requested (k, gap).
inline int cmd_green(const RunConfig& cfg, std::ostream& log) {
    for (double gap : cfg.gaps)
        if (gap == 0.0 && cfg.dim < 3)
            throw ConfigError(
                "config error: key 'gaps': a table at the threshold itself requires "
                "d >= 3; in d <= 2 the kernel diverges there, request gap > 0");

    auto points = box_orbit_representatives(cfg.dim, cfg.window);
    std::vector<std::string> cols = detail::k_columns(cfg.dim);
    cols.push_back("gap");
    cols.push_back("z");
    for (int j = 1; j <= cfg.dim; ++j) cols.push_back("x" + std::to_string(j));
    cols.insert(cols.end(), {"value", "value_err", "method"});
    io::CsvWriter csv(fs::path(cfg.output) / "green.csv", cols, detail::metadata(cfg));

    for (const auto& k : cfg.ks) {
        auto pair = pair_dispersion(cfg.eps, k);
        for (double gap : cfg.gaps) {
            green::GreenRequest req;
            req.gap = gap;
            req.cross_check = true;
            req.quad = cfg.quad;
            green::GreenTable table;
            try {
                table = green::evaluate_green(cfg.eps, k, pair, points, req);
            } catch (const std::exception& ex) {
                throw ConfigError("config error: key 'gaps': request (k, gap=" +
                                  io::fmt(gap) + ") is not evaluable: " + ex.what());
            }
            double err = table.err + std::max(table.cross_diff, 0.0);
            for (std::size_t i = 0; i < points.size(); ++i) {
                std::vector<std::string> row;
                for (int j = 0; j < cfg.dim; ++j) row.push_back(io::fmt(k[j]));
                row.push_back(io::fmt(gap));
                row.push_back(io::fmt(pair.emin - gap));
                for (int j = 0; j < cfg.dim; ++j) row.push_back(io::fmt(points[i][j]));
                row.push_back(io::fmt(table.value[i]));
                row.push_back(io::fmt(err));
                row.push_back(table.method);
                csv.row(row);
            }
        }
    }
    log << "green: " << cfg.ks.size() * cfg.gaps.size() << " tables, " << points.size()
        << " points each\n";
    return 0;
}

namespace detail {

inline void state_row(io::CsvWriter& csv, double mu, const QuasiMomentum& k, double emin,
                      const bs::BoundState& s, const std::vector<std::string>& extra) {
    std::vector<std::string> row{io::fmt(mu)};
    for (int j = 0; j < k.dim(); ++j) row.push_back(io::fmt(k[j]));
    row.insert(row.end(),
               {io::fmt(emin), io::fmt(s.branch), io::fmt(s.z), io::fmt(s.gap),
                io::fmt(s.log_gap), io::fmt(s.multiplicity), io::fmt(s.residual)});
    row.insert(row.end(), extra.begin(), extra.end());
    csv.row(row);
}

inline std::vector<std::string> state_columns(int dim, bool audit) {
    std::vector<std::string> cols{"mu"};
    auto kc = k_columns(dim);
    cols.insert(cols.end(), kc.begin(), kc.end());
    cols.insert(cols.end(),
                {"emin", "branch", "z", "z_gap", "log_gap", "multiplicity", "residual"});
    if (audit) cols.insert(cols.end(), {"audit_lower", "audit_upper", "audit_ok"});
    return cols;
}

}  // namespace detail

/// Bound states below the threshold at fixed (mu, k) pairs.
inline int cmd_spectrum(const RunConfig& cfg, std::ostream& log) {
    io::CsvWriter csv(fs::path(cfg.output) / "spectrum.csv",
                      detail::state_columns(cfg.dim, false), detail::metadata(cfg));
    nlohmann::json summary = detail::base_json(cfg);
    summary["runs"] = nlohmann::json::array();
    summary["errors"] = nlohmann::json::array();

    bs::SolveOptions opt;
    opt.quad = cfg.quad;
    for (double mu : cfg.mus)
        for (const auto& k : cfg.ks) {
            try {
                auto pair = pair_dispersion(cfg.eps, k);
                auto set = bs::solve_bound_states(mu, pair, cfg.v, opt);
                for (const auto& s : set.states) detail::state_row(csv, mu, k, set.emin, s, {});
                summary["runs"].push_back({{"mu", mu},
                                           {"k", detail::k_json(k)},
                                           {"emin", set.emin},
                                           {"count", set.count()},
                                           {"basis_size", set.basis_size},
                                           {"near_critical", set.near_critical},
                                           {"counting_fallback", set.used_counting_fallback},
                                           {"shallow_unresolved", set.shallow_unresolved}});
            } catch (const std::exception& ex) {
                summary["errors"].push_back(
                    {{"mu", mu}, {"k", detail::k_json(k)}, {"error", ex.what()}});
            }
        }
    io::write_text(fs::path(cfg.output) / "spectrum_summary.json", summary.dump(2) + "\n");
    log << "spectrum: " << summary["runs"].size() << " runs, " << summary["errors"].size()
        << " errors\n";
    return summary["errors"].empty() ? 0 : 1;
}

/// Bound states over a quasi-momentum grid, with the strict two-sided bound
/// audit against the k = 0 base point on the lowest branch.
inline int cmd_sweep(const RunConfig& cfg, std::ostream& log) {
    io::CsvWriter csv(fs::path(cfg.output) / "sweep.csv",
                      detail::state_columns(cfg.dim, true), detail::metadata(cfg));
    nlohmann::json summary = detail::base_json(cfg);
    summary["runs"] = nlohmann::json::array();
    summary["errors"] = nlohmann::json::array();
    bool falsified = false;

    bs::SolveOptions opt;
    opt.quad = cfg.quad;
    for (double mu : cfg.mus) {
        auto entries = bs::dispersion_sweep(mu, cfg.eps, cfg.v, cfg.ks, opt);

        // base point for the audit: k = 0, when present and bound
        std::ptrdiff_t base = -1;
        for (std::size_t i = 0; i < cfg.ks.size(); ++i) {
            bool zero = true;
            for (int j = 0; j < cfg.dim; ++j) zero = zero && cfg.ks[i][j] == 0.0;
            if (zero && entries[i].states && entries[i].states->count() > 0) {
                base = static_cast<std::ptrdiff_t>(i);
                break;
            }
        }

        for (std::size_t i = 0; i < entries.size(); ++i) {
            const auto& e = entries[i];
            if (!e.error.empty()) {
                summary["errors"].push_back(
                    {{"mu", mu}, {"k", detail::k_json(cfg.ks[i])}, {"error", e.error}});
                continue;
            }
            const auto& set = *e.states;
            for (const auto& s : set.states) {
                std::vector<std::string> audit{"", "", ""};
                if (base >= 0 && s.branch == 0 &&
                    static_cast<std::ptrdiff_t>(i) != base) {
                    double z0 = entries[base].states->states[0].z;
                    double lo = z0, hi = z0 + (e.emin - entries[base].emin);
                    bool ok = s.z > lo && s.z < hi;
                    audit = {io::fmt(lo), io::fmt(hi), io::fmt(ok)};
                    if (!ok) falsified = true;
                }
                detail::state_row(csv, mu, cfg.ks[i], e.emin, s, audit);
            }
            summary["runs"].push_back({{"mu", mu},
                                       {"k", detail::k_json(cfg.ks[i])},
                                       {"emin", e.emin},
                                       {"count", set.count()},
                                       {"basis_size", set.basis_size},
                                       {"near_critical", set.near_critical},
                                       {"counting_fallback", set.used_counting_fallback},
                                       {"shallow_unresolved", set.shallow_unresolved}});
        }
    }
    summary["audit_falsified"] = falsified;
    io::write_text(fs::path(cfg.output) / "sweep_summary.json", summary.dump(2) + "\n");
    log << "sweep: " << summary["runs"].size() << " points, audit "
        << (falsified ? "FALSIFIED" : "clean") << "\n";
    if (falsified) return 1;
    return summary["errors"].empty() ? 0 : 1;
}

/// Threshold classification at each requested k, with critical couplings and
/// a recorded check of the free-operator lower bound on a finite box.
inline int cmd_classify(const RunConfig& cfg, std::ostream& log) {
    if (cfg.dim < 3)
        throw ConfigError(
            "config error: key 'dim': threshold classification requires d >= 3 "
            "(no finite threshold kernel in d <= 2)");
    nlohmann::json out = detail::base_json(cfg);
    out["mu"] = cfg.mus.front();
    out["runs"] = nlohmann::json::array();
    out["errors"] = nlohmann::json::array();

    for (const auto& k : cfg.ks) {
        try {
            auto pair = pair_dispersion(cfg.eps, k);
            green::GreenRequest req;
            req.quad = cfg.quad;
            auto rep = threshold::classify_threshold(cfg.mus.front(), pair, cfg.v, req);
            nlohmann::json run{{"k", detail::k_json(k)},
                               {"status", threshold::to_string(rep.status)},
                               {"multiplicity", rep.multiplicity},
                               {"kind", threshold::to_string(rep.kind)},
                               {"gap", rep.gap},
                               {"tau_sing", rep.tau_sing},
                               {"green_err", rep.green_err},
                               {"eigs", rep.eigs}};
            try {
                run["mu_star"] = bs::critical_coupling(pair, cfg.v, cfg.quad);
            } catch (const std::exception& ex) {
                run["mu_star_error"] = ex.what();
            }
            // record (not assume) that the free fiber operator sits above its
            // band minimum, via the lowest eigenvalue of a finite box
            int L = cfg.oracle.l > 0 ? cfg.oracle.l : detail::auto_box_side(cfg);
            if (L > 0) {
                try {
                    auto free_box =
                        oracle::build_box(cfg.eps, k, 0.0, cfg.v, L, {cfg.oracle.cap, 0.5, 0});
                    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(free_box.matrix,
                                                                      Eigen::EigenvaluesOnly);
                    double lowest = es.eigenvalues().minCoeff();
                    run["free_box"] = {{"L", L},
                                       {"lowest", lowest},
                                       {"emin", pair.emin},
                                       {"bounded_below", lowest >= pair.emin - 1e-9}};
                } catch (const std::exception& ex) {
                    run["free_box"] = {{"error", ex.what()}};
                }
            } else {
                run["free_box"] = {{"error", "no box fits the basis cap"}};
            }
            out["runs"].push_back(std::move(run));
        } catch (const std::exception& ex) {
            out["errors"].push_back({{"k", detail::k_json(k)}, {"error", ex.what()}});
        }
    }
    io::write_text(fs::path(cfg.output) / "classify.json", out.dump(2) + "\n");
    log << "classify: " << out["runs"].size() << " points\n";
    return out["errors"].empty() ? 0 : 1;
}

/// Sign structure of the movement form over a k-grid around a singular point.
inline int cmd_phase_map(const RunConfig& cfg, std::ostream& log) {
    if (cfg.dim < 3)
        throw ConfigError(
            "config error: key 'dim': phase maps require d >= 3 "
            "(no finite threshold kernel in d <= 2)");
    const threshold::PhaseMap pm = [&] {
        try {
            return threshold::phase_map(cfg.mus.front(), cfg.eps, cfg.k0, cfg.v, cfg.ks,
                                        cfg.quad);
        } catch (const HypothesisError& ex) {
            throw ConfigError(std::string("config error: key 'mu': ") + ex.what());
        }
    }();

    std::vector<std::string> cols = detail::k_columns(cfg.dim);
    cols.insert(cols.end(), {"lmin_proj", "lmax_proj", "lmin_full", "lmax_full", "some_up",
                             "all_up", "flat", "all_down", "label", "error"});
    auto meta = detail::metadata(cfg);
    meta.emplace_back("sign_tolerance", io::fmt(pm.tau));
    io::CsvWriter csv(fs::path(cfg.output) / "phase_map.csv", cols, meta);

    nlohmann::json summary = detail::base_json(cfg);
    summary["k0"] = detail::k_json(pm.k0);
    summary["mu"] = pm.mu;
    summary["multiplicity"] = pm.multiplicity;
    summary["sign_tolerance"] = pm.tau;
    nlohmann::json counts = nlohmann::json::object();
    summary["errors"] = nlohmann::json::array();
    for (const auto& r : pm.records) {
        std::vector<std::string> row;
        for (int j = 0; j < cfg.dim; ++j) row.push_back(io::fmt(r.k[j]));
        row.insert(row.end(),
                   {io::fmt(r.lmin_proj), io::fmt(r.lmax_proj), io::fmt(r.lmin_full),
                    io::fmt(r.lmax_full), io::fmt(r.some_up), io::fmt(r.all_up),
                    io::fmt(r.flat), io::fmt(r.all_down), r.label, r.error});
        csv.row(row);
        counts[r.label] = counts.value(r.label, 0) + 1;
        if (!r.error.empty())
            summary["errors"].push_back({{"k", detail::k_json(r.k)}, {"error", r.error}});
    }
    summary["label_counts"] = counts;
    io::write_text(fs::path(cfg.output) / "phase_map_summary.json", summary.dump(2) + "\n");
    log << "phase-map: " << pm.records.size() << " grid points\n";
    return summary["errors"].empty() ? 0 : 1;
}

/// Finite-box diagnostics at (mu, k): spectrum, convergence-in-L history,
/// solver-vs-box count table over an energy ladder, and the periodic fiber
/// identity in d = 1.
inline int cmd_oracle(const RunConfig& cfg, std::ostream& log) {
    const double mu = cfg.mus.front();
    const QuasiMomentum& k = cfg.ks.front();
    auto pair = pair_dispersion(cfg.eps, k);
    int L = cfg.oracle.l > 0 ? cfg.oracle.l : detail::auto_box_side(cfg);
    if (L == 0) throw ConfigError("config error: key 'oracle.cap': no box fits the cap");

    oracle::BoxOptions bopt{cfg.oracle.cap, 2.5, cfg.oracle.l_max};
    auto box = oracle::box_spectrum(cfg.eps, k, mu, cfg.v, L, bopt);

    io::CsvWriter bcsv(fs::path(cfg.output) / "box.csv",
                       {"L", "emin", "index", "eigenvalue", "below_threshold"},
                       detail::metadata(cfg));
    for (std::size_t i = 0; i < box.below_margin.size(); ++i)
        bcsv.row({io::fmt(L), io::fmt(box.emin), io::fmt(i), io::fmt(box.below_margin[i]),
                  io::fmt(box.below_margin[i] < box.emin)});

    nlohmann::json summary = detail::base_json(cfg);
    summary["mu"] = mu;
    summary["k"] = detail::k_json(k);
    summary["box"] = {{"L", L},
                      {"basis_size", box_orbit_representatives(cfg.dim, L).size()},
                      {"bound_count", box.bound.size()}};
    try {
        auto conv = oracle::convergence_rule(cfg.eps, k, mu, cfg.v, bopt);
        nlohmann::json hist = nlohmann::json::array();
        for (const auto& [hl, hv] : conv.history) hist.push_back({{"L", hl}, {"lowest", hv}});
        summary["convergence"] = {{"L", conv.L},
                                  {"lowest", conv.lowest},
                                  {"err", conv.err},
                                  {"converged", conv.converged},
                                  {"history", hist}};
    } catch (const std::exception& ex) {
        summary["convergence"] = {{"error", ex.what()}};
    }

    // solver count vs box count on a gap ladder
    std::vector<double> ladder;
    for (double g : cfg.gaps)
        if (g > 0.0) ladder.push_back(g);
    if (ladder.empty()) ladder = bs::geometric_gap_ladder(2.0, 1e-4, 10);
    io::CsvWriter dcsv(fs::path(cfg.output) / "count_diff.csv",
                       {"gap", "z", "solver_count", "box_count", "agree"},
                       detail::metadata(cfg));
    bool all_agree = true;
    for (double g : ladder) {
        double z = pair.emin - g;
        green::GreenRequest req;
        req.quad = cfg.quad;
        int nbs = bs::count_above_one(bs::build_bs_matrix(mu, pair, z, cfg.v, req));
        int nbox = 0;
        for (double e : box.below_margin)
            if (e < z) ++nbox;
        all_agree = all_agree && nbs == nbox;
        dcsv.row({io::fmt(g), io::fmt(z), io::fmt(nbs), io::fmt(nbox), io::fmt(nbs == nbox)});
    }
    summary["count_table_agrees"] = all_agree;

    bool fiber_failed = false;
    if (cfg.oracle.fiber_n > 0) {
        if (cfg.dim != 1)
            throw ConfigError("config error: key 'oracle.fiber_n': the periodic fiber "
                              "check is one-dimensional");
        auto rep = oracle::periodic_fiber_check(cfg.oracle.fiber_n, mu, cfg.v, cfg.eps);
        summary["fiber"] = {{"N", rep.N},
                            {"full_dim", rep.full_dim},
                            {"fiber_dim_total", rep.fiber_dim_total},
                            {"max_mismatch", rep.max_mismatch},
                            {"pass", rep.pass}};
        fiber_failed = !rep.pass;
    }
    io::write_text(fs::path(cfg.output) / "oracle_summary.json", summary.dump(2) + "\n");
    log << "oracle: box L=" << L << ", count table " << (all_agree ? "agrees" : "DIFFERS")
        << "\n";
    return fiber_failed ? 1 : 0;
}

/// Full validation suite; writes a JSON report and mirrors it to the log.
inline int cmd_validate(const RunConfig& cfg, std::ostream& log) {
    auto suite = validate::run_suite(log);
    nlohmann::json out = detail::base_json(cfg);
    out["criteria"] = nlohmann::json::array();
    for (const auto& c : suite.criteria)
        out["criteria"].push_back({{"name", c.name},
                                   {"pass", c.pass},
                                   {"seconds", c.seconds},
                                   {"detail", c.detail}});
    out["all_pass"] = suite.all_pass;
    io::write_text(fs::path(cfg.output) / "validate_report.json", out.dump(2) + "\n");
    return suite.all_pass ? 0 : 1;
}

}  // namespace latthresh::commands
