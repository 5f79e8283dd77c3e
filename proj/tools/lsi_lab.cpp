#include <exception>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "lsilab/runner.hpp"

int main(int argc, char** argv) {
    CLI::App app{"lsi-lab: local stochastic intensity calibration lab"};
    app.require_subcommand(1);

    std::string config_path;
    std::string out_override;
    std::int64_t seed_override = -1;
    std::int64_t threads_override = -1;

    const auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", config_path, "experiment config (JSON)")
            ->required();
        sub->add_option("--out", out_override, "output directory override");
        sub->add_option("--seed", seed_override, "seed override");
        sub->add_option("--threads", threads_override,
                        "worker thread count override");
    };

    auto* solve = app.add_subcommand(
        "solve", "solve the leverage fixed point and persist it");
    auto* simulate = app.add_subcommand(
        "simulate", "simulate calibrated paths from a solved leverage");
    auto* check = app.add_subcommand(
        "check", "run the statistical verification suite");
    auto* demo = app.add_subcommand(
        "demo-nonuniqueness",
        "build both inversions of the single-jump-factor example");
    auto* all = app.add_subcommand("all", "solve, simulate and check");
    for (auto* sub : {solve, simulate, check, demo, all}) add_common(sub);

    CLI11_PARSE(app, argc, argv);

    try {
        lsilab::ExperimentConfig cfg = lsilab::load_config(config_path);
        if (!out_override.empty()) cfg.out_dir = out_override;
        if (seed_override >= 0)
            cfg.seed = static_cast<std::uint64_t>(seed_override);
        if (threads_override > 0)
            cfg.threads = static_cast<std::size_t>(threads_override);

        if (solve->parsed()) return lsilab::run_solve(cfg);
        if (simulate->parsed()) return lsilab::run_simulate(cfg);
        if (check->parsed()) return lsilab::run_check(cfg);
        if (demo->parsed()) return lsilab::run_demo(cfg);
        if (all->parsed()) return lsilab::run_all(cfg);
    } catch (const lsilab::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const lsilab::io::ProvenanceError& e) {
        std::cerr << "provenance error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
