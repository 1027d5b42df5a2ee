#include <cstdint>
#include <filesystem>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "dsbp/config.hpp"
#include "dsbp/harness.hpp"

namespace fs = std::filesystem;

// Exit codes: 0 success, 1 run failure (FAILED marker written next to any
// partial outputs), 2 usage/config problems. CLI11 reports its own nonzero
// codes for malformed command lines.
int main(int argc, char** argv) {
    CLI::App app{"dynamic spectral backpropagation experiment driver"};
    app.require_subcommand(1);
    app.fallthrough();

    std::string config_path;
    std::string out_dir;
    std::uint64_t seed = 0;
    std::size_t threads = 1;

    auto* opt_config =
        app.add_option("--config", config_path,
                       "experiment config file (run directory for plot-data and prune-report)")
            ->required();
    auto* opt_seed = app.add_option("--seed", seed, "override the [run] seed");
    app.add_option("--threads", threads, "worker threads; 1 = reference deterministic mode")
        ->check(CLI::PositiveNumber);
    app.add_option("--out", out_dir, "output directory (all files land here)")->required();

    auto* cmd_train = app.add_subcommand("train", "train one model per the [optimizer] section");
    auto* cmd_meta = app.add_subcommand("meta", "spectral meta-learning over few-shot episodes");
    auto* cmd_sde = app.add_subcommand("sde", "SDE simulation plus optional weak-order sweep");
    auto* cmd_bound =
        app.add_subcommand("bound", "evaluate the generalization bound on a run summary");
    auto* cmd_plot = app.add_subcommand("plot-data", "emit figure tables from a run directory");
    auto* cmd_prune =
        app.add_subcommand("prune-report", "summarize pruning events from a run directory");

    CLI11_PARSE(app, argc, argv);
    (void)opt_seed;

    if (!fs::exists(config_path)) {
        std::cerr << "error: config path not found: " << config_path << "\n";
        return 2;
    }

    const bool needs_parsed_config =
        cmd_train->parsed() || cmd_meta->parsed() || cmd_sde->parsed() || cmd_bound->parsed();

    dsbp::harness::ExperimentConfig cfg;
    if (needs_parsed_config) {
        try {
            cfg = dsbp::harness::parse_config_file(config_path);
        } catch (const dsbp::harness::ConfigError& e) {
            std::cerr << "error: " << e.what() << "\n";
            return 2;
        }
        if (opt_seed->count() > 0) cfg.seed = seed;
        cfg.threads = threads;
    } else if (!fs::is_directory(config_path)) {
        std::cerr << "error: expected a run directory, got: " << config_path << "\n";
        return 2;
    }

    try {
        if (cmd_train->parsed()) {
            dsbp::harness::run_train(cfg, out_dir);
        } else if (cmd_meta->parsed()) {
            dsbp::harness::run_meta(cfg, out_dir);
        } else if (cmd_sde->parsed()) {
            dsbp::harness::run_sde(cfg, out_dir);
        } else if (cmd_bound->parsed()) {
            dsbp::harness::run_bound(cfg, out_dir, std::cout);
        } else if (cmd_plot->parsed()) {
            dsbp::harness::run_plot_data(config_path, out_dir);
        } else if (cmd_prune->parsed()) {
            dsbp::harness::run_prune_report(config_path, out_dir);
        }
    } catch (const std::exception& e) {
        dsbp::harness::write_failure_marker(out_dir, e.what());
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
