#pragma once

// Run configuration: a single JSON document describing the model (dimension,
// dispersion, potential), the requested couplings / quasi-momenta / energies,
// and numerical settings.  Parsing is strict: unknown or ill-typed keys fail
// with a message naming the offending key, so typos cannot silently fall back
// to defaults.

#include "latthresh/green.hpp"
#include "latthresh/io.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace latthresh::config {

using nlohmann::json;

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct OracleSettings {
    int l = 0;       // box half-side; 0 = largest that fits the basis cap
    int l_max = 0;   // doubling limit for the convergence rule; 0 = dimension default
    int cap = 6000;  // basis size cap
    int fiber_n = 0; // periodic fiber check size (d = 1); 0 = skip
};

struct RunConfig {
    int dim;
    DispersionRelation eps;
    Potential v;
    std::vector<double> mus;
    std::vector<QuasiMomentum> ks;
    QuasiMomentum k0;
    std::vector<double> gaps;   // distances below the threshold for Green requests
    int window;                 // lattice window half-side for tables/solutions
    green::QuadOptions quad;
    OracleSettings oracle;
    std::string output;
    std::uint64_t seed;
    std::string hash;           // fingerprint of the raw config bytes
};

namespace detail {

[[noreturn]] inline void fail(const std::string& key, const std::string& msg) {
    throw ConfigError("config error: key '" + key + "': " + msg);
}

inline void check_keys(const json& obj, const std::string& where,
                       const std::set<std::string>& allowed) {
    for (const auto& [key, value] : obj.items())
        if (!allowed.count(key))
            fail(where.empty() ? key : where + "." + key, "unknown key");
}

inline double number_at(const json& j, const std::string& key) {
    if (!j.is_number()) fail(key, "expected a number");
    return j.get<double>();
}

inline int integer_at(const json& j, const std::string& key) {
    if (!j.is_number_integer()) fail(key, "expected an integer");
    return j.get<int>();
}

inline LatticeVector site_at(const json& j, int dim, const std::string& key) {
    if (!j.is_array() || static_cast<int>(j.size()) != dim)
        fail(key, "expected a lattice site with " + std::to_string(dim) + " components");
    LatticeVector x(dim);
    for (int i = 0; i < dim; ++i) {
        if (!j[i].is_number_integer()) fail(key, "lattice components must be integers");
        x[i] = j[i].get<int>();
    }
    return x;
}

inline std::vector<std::pair<LatticeVector, double>> table_at(const json& j, int dim,
                                                              const std::string& key) {
    if (!j.is_array() || j.empty()) fail(key, "expected a non-empty array of [site, value] pairs");
    std::vector<std::pair<LatticeVector, double>> t;
    for (const auto& entry : j) {
        if (!entry.is_array() || entry.size() != 2) fail(key, "each entry must be [site, value]");
        t.emplace_back(site_at(entry[0], dim, key), number_at(entry[1], key));
    }
    return t;
}

inline std::vector<double> point_at(const json& j, int dim, const std::string& key) {
    if (!j.is_array() || static_cast<int>(j.size()) != dim)
        fail(key, "expected " + std::to_string(dim) + " components");
    std::vector<double> p(dim);
    for (int i = 0; i < dim; ++i) p[i] = number_at(j[i], key);
    return p;
}

inline std::vector<QuasiMomentum> k_points(const json& j, int dim, const std::string& key) {
    std::vector<QuasiMomentum> out;
    if (j.is_array() && !j.empty() && j[0].is_number()) {
        out.emplace_back(point_at(j, dim, key));
    } else if (j.is_array()) {
        if (j.empty()) fail(key, "empty quasi-momentum list");
        for (const auto& p : j) out.emplace_back(point_at(p, dim, key));
    } else if (j.is_object()) {
        check_keys(j, key, {"from", "to", "count"});
        if (!j.contains("from") || !j.contains("to") || !j.contains("count"))
            fail(key, "grid needs 'from', 'to' and 'count'");
        std::vector<double> from = point_at(j["from"], dim, key + ".from");
        std::vector<double> to = point_at(j["to"], dim, key + ".to");
        std::vector<int> count(dim);
        if (!j["count"].is_array() || static_cast<int>(j["count"].size()) != dim)
            fail(key + ".count", "expected " + std::to_string(dim) + " integers");
        long total = 1;
        for (int i = 0; i < dim; ++i) {
            count[i] = integer_at(j["count"][i], key + ".count");
            if (count[i] < 1) fail(key + ".count", "counts must be >= 1");
            total *= count[i];
            if (total > 200000) fail(key + ".count", "grid has too many points");
        }
        std::vector<int> idx(dim, 0);
        for (;;) {
            std::vector<double> p(dim);
            for (int i = 0; i < dim; ++i)
                p[i] = count[i] == 1 ? from[i]
                                     : from[i] + (to[i] - from[i]) * idx[i] / (count[i] - 1);
            out.emplace_back(p);
            int ax = dim - 1;
            while (ax >= 0 && ++idx[ax] == count[ax]) idx[ax--] = 0;
            if (ax < 0) break;
        }
    } else {
        fail(key, "expected a point, a list of points, or a grid object");
    }
    return out;
}

}  // namespace detail

inline RunConfig parse_config(const std::string& text) {
    using detail::fail;
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("config error: invalid JSON: ") + e.what());
    }
    if (!j.is_object()) throw ConfigError("config error: top level must be an object");
    detail::check_keys(j, "", {"dim", "dispersion", "potential", "mu", "k", "k0", "gaps",
                               "window", "quadrature", "oracle", "output", "seed"});
    for (const char* req : {"dim", "dispersion", "potential", "mu"})
        if (!j.contains(req)) fail(req, "required key missing");

    int dim = detail::integer_at(j["dim"], "dim");
    if (dim < 1 || dim > 6) fail("dim", "must be between 1 and 6");

    std::vector<std::pair<LatticeVector, double>> eps_table;
    if (j["dispersion"].is_string()) {
        std::string name = j["dispersion"].get<std::string>();
        if (name != "laplacian") fail("dispersion", "unknown keyword '" + name + "'");
        eps_table.emplace_back(LatticeVector(dim, 0), static_cast<double>(dim));
        for (int a = 0; a < dim; ++a) {
            LatticeVector e(dim, 0);
            e[a] = 1;
            eps_table.emplace_back(e, -0.5);
        }
    } else {
        eps_table = detail::table_at(j["dispersion"], dim, "dispersion");
    }

    std::vector<double> mus;
    const json& jm = j["mu"];
    if (jm.is_number()) {
        mus.push_back(jm.get<double>());
    } else if (jm.is_array()) {
        if (jm.empty()) fail("mu", "empty coupling list");
        for (const auto& m : jm) mus.push_back(detail::number_at(m, "mu"));
    } else if (jm.is_object()) {
        detail::check_keys(jm, "mu", {"from", "to", "count"});
        if (!jm.contains("from") || !jm.contains("to") || !jm.contains("count"))
            fail("mu", "range needs 'from', 'to' and 'count'");
        double from = detail::number_at(jm["from"], "mu.from");
        double to = detail::number_at(jm["to"], "mu.to");
        int count = detail::integer_at(jm["count"], "mu.count");
        if (count < 1 || count > 100000) fail("mu.count", "must be between 1 and 100000");
        for (int i = 0; i < count; ++i)
            mus.push_back(count == 1 ? from : from + (to - from) * i / (count - 1));
    } else {
        fail("mu", "expected a number, list, or range object");
    }
    for (double m : mus)
        if (!(m > 0.0)) fail("mu", "couplings must be positive");

    std::vector<QuasiMomentum> ks =
        j.contains("k") ? detail::k_points(j["k"], dim, "k")
                        : std::vector<QuasiMomentum>{QuasiMomentum::zero(dim)};
    QuasiMomentum k0 = j.contains("k0")
                           ? QuasiMomentum(detail::point_at(j["k0"], dim, "k0"))
                           : QuasiMomentum::zero(dim);

    std::vector<double> gaps{0.0};
    if (j.contains("gaps")) {
        gaps.clear();
        if (!j["gaps"].is_array() || j["gaps"].empty())
            fail("gaps", "expected a non-empty array of numbers");
        for (const auto& g : j["gaps"]) {
            double val = detail::number_at(g, "gaps");
            if (val < 0.0) fail("gaps", "gaps must be >= 0");
            gaps.push_back(val);
        }
    }

    int window = 8;
    if (j.contains("window")) {
        window = detail::integer_at(j["window"], "window");
        if (window < 1 || window > 200) fail("window", "must be between 1 and 200");
    }

    green::QuadOptions quad;
    if (j.contains("quadrature")) {
        const json& q = j["quadrature"];
        if (!q.is_object()) fail("quadrature", "expected an object");
        detail::check_keys(q, "quadrature", {"n_axis", "n_max", "tolerance", "ball_radius"});
        if (q.contains("n_axis")) {
            quad.grid = detail::integer_at(q["n_axis"], "quadrature.n_axis");
            if (quad.grid < 0) fail("quadrature.n_axis", "must be >= 0");
        }
        if (q.contains("n_max")) {
            quad.max_grid = detail::integer_at(q["n_max"], "quadrature.n_max");
            if (quad.max_grid < 0) fail("quadrature.n_max", "must be >= 0");
        }
        if (q.contains("tolerance")) {
            quad.target_abs = detail::number_at(q["tolerance"], "quadrature.tolerance");
            if (!(quad.target_abs > 0.0)) fail("quadrature.tolerance", "must be > 0");
        }
        if (q.contains("ball_radius")) {
            quad.ball_radius = detail::number_at(q["ball_radius"], "quadrature.ball_radius");
            if (!(quad.ball_radius > 0.0)) fail("quadrature.ball_radius", "must be > 0");
        }
    }

    OracleSettings oracle;
    if (j.contains("oracle")) {
        const json& o = j["oracle"];
        if (!o.is_object()) fail("oracle", "expected an object");
        detail::check_keys(o, "oracle", {"l", "l_max", "cap", "fiber_n"});
        if (o.contains("l")) oracle.l = detail::integer_at(o["l"], "oracle.l");
        if (o.contains("l_max")) oracle.l_max = detail::integer_at(o["l_max"], "oracle.l_max");
        if (o.contains("cap")) oracle.cap = detail::integer_at(o["cap"], "oracle.cap");
        if (o.contains("fiber_n"))
            oracle.fiber_n = detail::integer_at(o["fiber_n"], "oracle.fiber_n");
        if (oracle.l < 0) fail("oracle.l", "must be >= 0");
        if (oracle.l_max < 0) fail("oracle.l_max", "must be >= 0");
        if (oracle.cap < 1) fail("oracle.cap", "must be >= 1");
        if (oracle.fiber_n != 0 && (oracle.fiber_n < 3 || oracle.fiber_n > 12))
            fail("oracle.fiber_n", "must be between 3 and 12");
    }

    std::string output = "out";
    if (j.contains("output")) {
        if (!j["output"].is_string()) fail("output", "expected a string");
        output = j["output"].get<std::string>();
    }

    std::uint64_t seed = 0;
    if (j.contains("seed")) {
        if (!j["seed"].is_number_unsigned() && !j["seed"].is_number_integer())
            fail("seed", "expected an integer");
        seed = j["seed"].get<std::uint64_t>();
    }

    try {
        return RunConfig{dim,
                         DispersionRelation(dim, eps_table),
                         Potential(dim, detail::table_at(j["potential"], dim, "potential")),
                         std::move(mus),
                         std::move(ks),
                         std::move(k0),
                         std::move(gaps),
                         window,
                         quad,
                         oracle,
                         std::move(output),
                         seed,
                         io::hex64(io::fnv1a64(text))};
    } catch (const std::invalid_argument& e) {
        throw ConfigError(std::string("config error: ") + e.what());
    }
}

inline RunConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config error: cannot read " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str());
}

}  // namespace latthresh::config
