#pragma once

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "lsilab/config.hpp"
#include "lsilab/io.hpp"
#include "lsilab/li_model.hpp"
#include "lsilab/verify.hpp"

namespace lsilab {

// Stream roles derived from the config seed. The solver consumes
// (seed, 0) through its sample set; everything downstream gets disjoint
// stream ids so solve and verification randomness never overlap.
constexpr std::uint64_t kEnsembleStream = 1;
constexpr std::uint64_t kPowerStream = 2;

namespace detail {

inline std::string artifact(const ExperimentConfig& c, const char* name) {
    return (std::filesystem::path(c.out_dir) / name).string();
}

inline void log_line(const ExperimentConfig& c, const std::string& msg) {
    std::ofstream log(artifact(c, "run.log"), std::ios::app);
    const auto now = std::chrono::system_clock::now().time_since_epoch();
    log << std::chrono::duration_cast<std::chrono::milliseconds>(now).count()
        << " " << msg << "\n";
}

/// Unconditional mean of the factor per cell, the deliberately wrong
/// leverage used by the power drill.
inline GammaFamily unconditional_mean_gamma(const ExperimentConfig& c,
                                            const IntensitySpec& lam) {
    const EtaModel model = c.build_eta();
    const std::size_t n = c.grid.n_steps();
    std::vector<double> mean(n, 0.0);
    const std::size_t draws = 20000;
    RngStream base = RngStream(c.seed, kPowerStream).fork(0xE7A00);
    for (std::size_t i = 0; i < draws; ++i) {
        const auto p = model.sample(c.grid, base.fork(i));
        for (std::size_t j = 0; j < n; ++j) mean[j] += p[j];
    }
    for (double& v : mean) {
        v /= static_cast<double>(draws);
        v = std::min(c.bounds.U, std::max(c.bounds.L, v));
    }
    std::vector<GridFunction> table(lam.lattice().size(),
                                    GridFunction(c.grid, mean));
    return GammaFamily(lam.lattice_ptr(), std::move(table), c.bounds);
}

inline IntensitySpec doubled_intensity(const ExperimentConfig& c,
                                       const IntensitySpec& lam) {
    std::vector<GridFunction> table;
    for (std::size_t x = 0; x < lam.lattice().size(); ++x) {
        std::vector<double> v = lam.at(x).values();
        for (double& y : v) y = std::min(c.bounds.U, 2.0 * y);
        table.emplace_back(c.grid, std::move(v));
    }
    return IntensitySpec(lam.lattice_ptr(), std::move(table), c.bounds);
}

}  // namespace detail

inline FpSolution solve_config(const ExperimentConfig& c) {
    SolveOptions opt;
    opt.threads = c.threads;
    if (c.mode == SolverMode::kCounting)
        return solve_all_levels(c.counting_problem(), c.tol, c.max_iter, opt);
    if (c.restarts > 1)
        return solve_system_multistart(c.general_problem(), c.tol, c.max_iter,
                                       opt);
    return solve_system(c.general_problem(), c.tol, c.max_iter, opt);
}

inline int run_solve(const ExperimentConfig& c) {
    std::filesystem::create_directories(c.out_dir);
    const std::uint64_t hash = config_hash(c);
    try {
        if (c.mode == SolverMode::kGeneral) {
            // regularity diagnostic of the factor model
            const double holder = holder_constant_estimate(
                c.build_eta(), c.grid, 200,
                RngStream(c.seed, kPowerStream).fork(0x401DE2));
            detail::log_line(c, "holder estimate " + std::to_string(holder));
            std::cout << "factor regularity estimate (Holder modulus): "
                      << holder << "\n";
        }
        const FpSolution sol = solve_config(c);
        io::write_gamma_csv(detail::artifact(c, "gamma.csv"), sol.gamma, hash,
                            c.seed);
        io::write_residuals_csv(detail::artifact(c, "residuals.csv"), sol,
                                hash, c.seed);
        io::write_gamma_se_csv(detail::artifact(c, "gamma_se.csv"), sol,
                               c.grid, sol.gamma.lattice(), hash, c.seed);
        if (c.mode == SolverMode::kGeneral)
            io::write_word_stats_csv(detail::artifact(c, "word_stats.csv"),
                                     sol, hash, c.seed);
        if (sol.restart_disagreement > 0.0)
            std::cout << "restart disagreement: " << sol.restart_disagreement
                      << "\n";
        detail::log_line(c, "solve ok");
        std::cout << "solved; gamma written to "
                  << detail::artifact(c, "gamma.csv") << "\n";
        return 0;
    } catch (const SolverError& e) {
        std::ofstream out(detail::artifact(c, "residual_trace.csv"));
        out << io::stamp(hash, c.seed) << "\n" << "iteration,residual\n";
        for (std::size_t i = 0; i < e.residual_trace.size(); ++i)
            out << i << ',' << io::fmt(e.residual_trace[i]) << "\n";
        std::cerr << "solver did not converge: " << e.what() << "\n";
        detail::log_line(c, "solve failed");
        return 3;
    }
}

inline GammaFamily load_solved_gamma(const ExperimentConfig& c) {
    return io::read_gamma_csv(detail::artifact(c, "gamma.csv"),
                              config_hash(c), c.build_lattice_ptr(), c.grid,
                              c.bounds);
}

inline PathEnsemble build_ensemble(const ExperimentConfig& c,
                                   const GammaFamily& gamma,
                                   const IntensitySpec& lam) {
    return simulate_ensemble(c.build_eta(), gamma, lam, c.nu(), c.n_paths,
                             c.grid.horizon(), RngStream(c.seed, kEnsembleStream),
                             c.threads);
}

inline int run_simulate(const ExperimentConfig& c) {
    std::filesystem::create_directories(c.out_dir);
    const GammaFamily gamma = load_solved_gamma(c);
    const IntensitySpec lam = c.build_intensity(gamma.lattice_ptr());
    const PathEnsemble ens = build_ensemble(c, gamma, lam);
    io::write_paths_csv(detail::artifact(c, "paths.csv"), ens,
                        gamma.lattice(), config_hash(c), c.seed);
    detail::log_line(c, "simulate ok");
    std::cout << "simulated " << ens.size() << " paths ("
              << ens.n_exits() << " lattice exits)\n";
    return 0;
}

inline std::vector<TestReport> run_tests(
    const ExperimentConfig& c, const FpSolution* sol,
    const std::vector<std::vector<double>>& gamma_se,
    const GammaFamily& gamma, const IntensitySpec& lam,
    const PathEnsemble& ens, const MarginalCurve& curve) {
    std::vector<TestReport> reports;
    const StateLattice& lattice = gamma.lattice();
    for (const std::string& test : c.tests) {
        if (test == "projection") {
            reports.push_back(projection_check(ens, curve, lattice,
                                               c.probe_times, c.tv_tol,
                                               c.p_floor));
        } else if (test == "clocks") {
            reports.push_back(exp_clock_test(ens, gamma, lam, c.nu(),
                                             c.p_floor));
        } else if (test == "martingale") {
            reports.push_back(
                martingale_test(ens, gamma, lam, c.nu(), c.probe_times));
        } else if (test == "consistency") {
            reports.push_back(leverage_consistency_check(
                ens, gamma, sol ? sol->gamma_se : gamma_se, c.probe_times));
        } else if (test == "power") {
            reports.push_back(power_check_perturbed_gamma(
                c.build_eta(), gamma, lam, c.nu(), curve, lattice, c.n_paths,
                c.probe_times, RngStream(c.seed, kPowerStream), c.threads,
                c.tv_tol, c.p_floor));
            reports.push_back(power_check_wrong_lambda(
                ens,
                li_forward_marginals(detail::doubled_intensity(c, lam),
                                     c.nu(), lattice, c.grid, 1e-2),
                lattice, c.probe_times, c.tv_tol, c.p_floor));
            reports.push_back(power_check_unconditional_gamma(
                ens, detail::unconditional_mean_gamma(c, lam), lam, c.nu(),
                c.probe_times));
            reports.push_back(power_check_wrong_gamma_clocks(ens, lam, c.nu(),
                                                             c.bounds,
                                                             c.p_floor));
        } else {
            throw ConfigError("verify.tests: unknown test '" + test + "'");
        }
    }
    return reports;
}

inline int run_check(const ExperimentConfig& c, const FpSolution* sol,
                     const GammaFamily& gamma, const PathEnsemble* given) {
    std::filesystem::create_directories(c.out_dir);
    const std::uint64_t hash = config_hash(c);
    const IntensitySpec lam = c.build_intensity(gamma.lattice_ptr());
    const MarginalCurve curve =
        li_forward_marginals(lam, c.nu(), gamma.lattice(), c.grid);
    const PathEnsemble ens = given ? *given : build_ensemble(c, gamma, lam);

    // solver uncertainty persisted at solve time, if available
    std::vector<std::vector<double>> gamma_se;
    if (!sol)
        gamma_se = io::read_gamma_se_csv(detail::artifact(c, "gamma_se.csv"),
                                         hash, gamma.lattice(), c.grid);

    const auto reports = run_tests(c, sol, gamma_se, gamma, lam, ens, curve);
    if (c.wants_format("json"))
        io::write_reports_jsonl(detail::artifact(c, "reports.jsonl"), reports,
                                hash, c.seed);
    if (c.wants_format("csv")) {
        io::write_marginals_csv(detail::artifact(c, "marginals.csv"), curve,
                                gamma.lattice(), hash, c.seed);
        io::write_empirical_pmf_csv(detail::artifact(c, "empirical_pmf.csv"),
                                    ens, gamma.lattice(), c.probe_times, hash,
                                    c.seed);
    }
    bool all_pass = true;
    for (const auto& rep : reports) {
        std::cout << io::report_line(rep) << "\n";
        all_pass = all_pass && rep.pass;
    }
    detail::log_line(c, all_pass ? "check ok" : "check failed");
    return all_pass ? 0 : 1;
}

inline int run_check(const ExperimentConfig& c) {
    const GammaFamily gamma = load_solved_gamma(c);
    return run_check(c, nullptr, gamma, nullptr);
}

inline int run_demo(const ExperimentConfig& c) {
    std::filesystem::create_directories(c.out_dir);
    const std::uint64_t hash = config_hash(c);
    const auto demo = nonuniqueness_demo(c.n_paths, c.mc_paths, c.grid,
                                         c.seed, c.threads);
    io::write_reports_jsonl(detail::artifact(c, "demo_report.jsonl"),
                            {demo.report}, hash, c.seed);
    io::write_demo_curves_csv(detail::artifact(c, "demo_curves.csv"), demo,
                              hash, c.seed);
    std::cout << io::report_line(demo.report) << "\n";
    for (const auto& [k, v] : demo.report.details)
        std::cout << "  " << k << " = " << v << "\n";
    detail::log_line(c, "demo done");
    return demo.report.pass ? 0 : 1;
}

inline int run_all(const ExperimentConfig& c) {
    std::filesystem::create_directories(c.out_dir);
    const std::uint64_t hash = config_hash(c);
    try {
        const FpSolution sol = solve_config(c);
        io::write_gamma_csv(detail::artifact(c, "gamma.csv"), sol.gamma, hash,
                            c.seed);
        io::write_residuals_csv(detail::artifact(c, "residuals.csv"), sol,
                                hash, c.seed);
        io::write_gamma_se_csv(detail::artifact(c, "gamma_se.csv"), sol,
                               c.grid, sol.gamma.lattice(), hash, c.seed);
        if (c.mode == SolverMode::kGeneral)
            io::write_word_stats_csv(detail::artifact(c, "word_stats.csv"),
                                     sol, hash, c.seed);
        const IntensitySpec lam = c.build_intensity(sol.gamma.lattice_ptr());
        const PathEnsemble ens = build_ensemble(c, sol.gamma, lam);
        io::write_paths_csv(detail::artifact(c, "paths.csv"), ens,
                            sol.gamma.lattice(), hash, c.seed);
        return run_check(c, &sol, sol.gamma, &ens);
    } catch (const SolverError& e) {
        std::cerr << "solver did not converge: " << e.what() << "\n";
        detail::log_line(c, "all: solve failed");
        return 3;
    }
}

}  // namespace lsilab
