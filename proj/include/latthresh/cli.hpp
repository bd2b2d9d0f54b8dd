#pragma once

// Command-line driver.  Exit codes: 0 on success, 1 when a run completed but
// recorded a falsification or internal failure, 2 on usage or configuration
// errors.

#include "latthresh/commands.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <ostream>
#include <string>

namespace latthresh::cli {

inline int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Bound states, critical couplings and threshold classification for "
                 "two-particle lattice Schroedinger operators",
                 "lattice-threshold"};
    app.require_subcommand(1);

    std::string config_path, out_dir;
    int threads = 0;
    const std::pair<const char*, const char*> subs[] = {
        {"green", "tabulate lattice Green functions near and at the threshold"},
        {"spectrum", "bound states below the essential spectrum at fixed (mu, k)"},
        {"sweep", "bound states over a quasi-momentum grid with two-sided-bound audit"},
        {"classify", "regular/singular threshold classification and critical couplings"},
        {"phase-map", "sign structure of the threshold movement form over a k-grid"},
        {"oracle", "finite-box diagnostics: spectra, convergence, count comparison"},
        {"validate", "run the full acceptance suite and write a report"},
    };
    for (const auto& [name, desc] : subs) {
        CLI::App* sub = app.add_subcommand(name, desc);
        sub->add_option("--config", config_path, "JSON run configuration")->required();
        sub->add_option("--out", out_dir, "output directory (overrides the config)");
        sub->add_option("--threads", threads, "worker threads (overrides the environment)");
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return 0;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return 0;
    } catch (const CLI::ParseError& e) {
        err << e.what() << "\n\n" << app.help();
        return 2;
    }

    if (threads > 0) setenv("LATTICE_THRESHOLD_THREADS", std::to_string(threads).c_str(), 1);

    try {
        config::RunConfig cfg = config::load_config(config_path);
        if (!out_dir.empty()) cfg.output = out_dir;
        std::filesystem::create_directories(cfg.output);

        if (app.got_subcommand("green")) return commands::cmd_green(cfg, out);
        if (app.got_subcommand("spectrum")) return commands::cmd_spectrum(cfg, out);
        if (app.got_subcommand("sweep")) return commands::cmd_sweep(cfg, out);
        if (app.got_subcommand("classify")) return commands::cmd_classify(cfg, out);
        if (app.got_subcommand("phase-map")) return commands::cmd_phase_map(cfg, out);
        if (app.got_subcommand("oracle")) return commands::cmd_oracle(cfg, out);
        if (app.got_subcommand("validate")) return commands::cmd_validate(cfg, out);
        err << "unknown subcommand\n";
        return 2;
    } catch (const config::ConfigError& e) {
        err << e.what() << "\n";
        return 2;
    } catch (const std::filesystem::filesystem_error& e) {
        err << "filesystem error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return 1;
    }
}

}  // namespace latthresh::cli
