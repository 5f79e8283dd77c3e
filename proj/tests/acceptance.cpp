// Acceptance suite: one line per criterion, every tolerance pinned in
// code. Exit status is the number of failed criteria.

#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <memory>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "lsilab/fp_counting.hpp"
#include "lsilab/fp_general.hpp"
#include "lsilab/li_model.hpp"
#include "lsilab/runner.hpp"
#include "lsilab/verify.hpp"
#include "support/counting_oracle.hpp"

using namespace lsilab;
namespace fs = std::filesystem;

namespace {

int g_failures = 0;

void report(int id, bool pass, const std::string& label,
            const std::string& detail) {
    std::printf("criterion %d: %s  %s  [%s]\n", id, pass ? "PASS" : "FAIL",
                label.c_str(), detail.c_str());
    std::fflush(stdout);
    if (!pass) ++g_failures;
}

std::string fmt(double x) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.4g", x);
    return buf;
}

const Bounds kBand(1.0, 2.0);

struct CountingArtifacts {
    TimeGrid grid{1.0, 64};
    std::size_t K = poisson_truncation_level(4.0);
    std::shared_ptr<const StateLattice> lattice =
        std::make_shared<StateLattice>(
            build_lattice(JumpDistribution::unit(), K));
    JumpDistribution nu = JumpDistribution::unit();
    EtaModel eta = EtaModel::random_constant({1.0, 2.0}, {0.5, 0.5}, kBand);
    IntensitySpec lam = IntensitySpec::constant(lattice, grid, 1.0, kBand);
    FpSolution sol;

    CountingArtifacts()
        : sol(solve_all_levels(
              CountingFpProblem(eta, lam, kBand, grid, 20000, K, 101),
              /*tol=*/1e-4, /*max_iter=*/60)) {}
};

// --- criteria 1, 4, 8: the counting problem and its ensemble --------------

void criteria_counting(const CountingArtifacts& a) {
    const auto curve = li_forward_marginals(a.lam, a.nu, *a.lattice, a.grid);
    const std::size_t n_verify = 100000;
    const auto ens = simulate_ensemble(a.eta, a.sol.gamma, a.lam, a.nu,
                                       n_verify, 1.0, RngStream(101, 1));

    // criterion 1: fake Poisson marginal at t = 1
    {
        const auto d = marginal_distance(ens.paths, curve, *a.lattice, 1.0);
        std::size_t zeros = 0;
        for (const auto& p : ens.paths) zeros += p.n_jumps() == 0 ? 1 : 0;
        const double n = static_cast<double>(ens.size());
        const double p0 = static_cast<double>(zeros) / n;
        const double ref = std::exp(-1.0);
        const double se = std::sqrt(ref * (1.0 - ref) / n);
        const bool pass = d.tv <= 0.02 && d.chi2_pvalue >= 0.001 &&
                          std::abs(p0 - ref) <= 3.0 * se;
        report(1, pass, "fake Poisson marginals (counting, two-point factor)",
               "tv=" + fmt(d.tv) + " chi2_p=" + fmt(d.chi2_pvalue) +
                   " |p0-exp(-1)|=" + fmt(std::abs(p0 - ref)) +
                   " 3se=" + fmt(3.0 * se));
    }

    // criterion 4: contraction behavior of the Picard iterations
    {
        bool converged = true;
        double worst_factor = 0.0;
        std::size_t worst_iters = 0;
        for (std::size_t m = 0; m < a.sol.traces.size(); ++m) {
            const auto& tr = a.sol.traces[m];
            if (tr.iterations == 0) continue;  // unreachable level
            worst_iters = std::max(worst_iters, tr.iterations);
            if (tr.iterations > 60 || tr.weighted.back() > 1e-4 ||
                tr.unweighted.back() > 1e-4)
                converged = false;
            // asymptotic regime: successive ratios over the back half of
            // the trace, above the floating noise floor
            const auto measure = [&](const std::vector<double>& r,
                                     double floor) {
                for (std::size_t i = r.size() / 2; i + 1 < r.size(); ++i) {
                    if (r[i] < floor) break;
                    worst_factor = std::max(worst_factor, r[i + 1] / r[i]);
                }
            };
            measure(tr.unweighted, 1e-13);
            measure(tr.weighted, 1e-300);
        }
        const bool pass = converged && worst_factor <= 0.75;
        report(4, pass, "picard contraction at tol 1e-4 within 60 iterations",
               "max_iters=" + std::to_string(worst_iters) +
                   " max_decay_factor=" + fmt(worst_factor));
    }

    // criterion 8: power checks at N = 1e5
    {
        const auto drill_gamma = power_check_perturbed_gamma(
            a.eta, a.sol.gamma, a.lam, a.nu, curve, *a.lattice, n_verify,
            {0.5, 1.0}, RngStream(101, 2));
        const auto wrong_curve = li_forward_marginals(
            IntensitySpec::constant(a.lattice, a.grid, 2.0, kBand), a.nu,
            *a.lattice, a.grid);
        const auto drill_lambda =
            power_check_wrong_lambda(ens, wrong_curve, *a.lattice, {0.5, 1.0});
        const auto gamma_mean =
            GammaFamily::constant(a.lattice, a.grid, 1.5, kBand);
        const auto drill_uncond = power_check_unconditional_gamma(
            ens, gamma_mean, a.lam, a.nu, {0.5, 1.0});
        const auto drill_clocks =
            power_check_wrong_gamma_clocks(ens, a.lam, a.nu, kBand);
        const bool pass = drill_gamma.pass && drill_lambda.pass &&
                          drill_uncond.pass && drill_clocks.pass;
        report(8, pass, "power checks reject every corruption",
               std::string("perturbed_gamma=") +
                   (drill_gamma.pass ? "rejected" : "MISSED") +
                   " wrong_lambda=" +
                   (drill_lambda.pass ? "rejected" : "MISSED") +
                   " unconditional_gamma=" +
                   (drill_uncond.pass ? "rejected" : "MISSED") +
                   " wrong_gamma_clocks=" +
                   (drill_clocks.pass ? "rejected" : "MISSED"));
    }
}

// --- criteria 2, 3: the signed-jump problem --------------------------------

void criteria_general() {
    const TimeGrid grid(1.0, 64);
    const std::size_t K = poisson_truncation_level(4.0);
    JumpDistribution nu({1.0, -1.0}, {0.7, 0.3});
    auto lattice = std::make_shared<StateLattice>(build_lattice(nu, K));
    auto lam = IntensitySpec::constant(lattice, grid, 1.0, kBand);
    auto eta = EtaModel::random_constant({1.0, 2.0}, {0.5, 0.5}, kBand);

    GeneralFpProblem prob(eta, nu, lam, kBand, grid, 20000, 0.5, 202);
    const FpSolution sol = solve_system_multistart(prob, 1e-5, 200);
    const auto curve = li_forward_marginals(lam, nu, *lattice, grid);

    // criterion 2: marginals at t = 1 within TV 0.03 at N = 1e5
    {
        const auto ens = simulate_ensemble(eta, sol.gamma, lam, nu, 100000,
                                           1.0, RngStream(202, 1));
        const auto d = marginal_distance(ens.paths, curve, *lattice, 1.0);
        const bool pass = d.tv <= 0.03 && ens.exit_rate() <= 1e-3;
        report(2, pass, "general-jump projection onto the forward equations",
               "tv=" + fmt(d.tv) + " chi2_p=" + fmt(d.chi2_pvalue) +
                   " exit_rate=" + fmt(ens.exit_rate()) +
                   " restart_disagreement=" + fmt(sol.restart_disagreement));
    }

    // criterion 3: clock extraction across 1e4 paths
    {
        const auto ens = simulate_ensemble(eta, sol.gamma, lam, nu, 10000,
                                           1.0, RngStream(202, 7));
        const auto rep = exp_clock_test(ens, sol.gamma, lam, nu);
        report(3, rep.pass, "Exp(1) clock and jump-size extraction",
               "ks_p=" + fmt(rep.details.at("ks_pvalue")) + " lag1=" +
                   fmt(rep.details.at("lag1_rank_corr")) + " n=" +
                   std::to_string(rep.n_samples) + " atom_dev_sigma=" +
                   fmt(rep.details.at("atom_dev_sigma_0")) + "/" +
                   fmt(rep.details.at("atom_dev_sigma_1")));
    }
}

// --- criterion 5: solver vs independent quadrature oracles -----------------

void criterion_oracle(const CountingArtifacts& a) {
    bool pass = true;
    double worst_counting = 0.0;

    // counting side: the two-point problem against the density-chain oracle
    {
        const TimeGrid fine(1.0, 4096);
        std::vector<GridFunction> lam_levels;
        for (std::size_t m = 0; m <= a.K; ++m)
            lam_levels.push_back(testing::resample(a.lam.at(m), fine));
        testing::CountingOracle oracle(
            fine, lam_levels,
            {{GridFunction(fine, 1.0), 0.5}, {GridFunction(fine, 2.0), 0.5}},
            kBand);
        const auto gamma_or = oracle.solve(3);
        const double h = a.grid.step();
        for (std::size_t m = 0; m < 3; ++m) {
            for (double t : {0.25, 0.5, 0.75}) {
                const std::size_t cell = a.grid.cell_index(t);
                if (cell < a.sol.traces[m].first_trusted_cell) continue;
                const double probe = a.grid.midpoint(cell);
                const double mc = a.sol.gamma.at(m)(probe);
                const double orv = gamma_or[m](probe);
                const double drift =
                    std::abs(gamma_or[m](std::min(1.0, probe + h)) -
                             gamma_or[m](std::max(0.0, probe - h)));
                // 1e-9 floor: exactly-solvable cases have zero SE and
                // zero drift, leaving only roundoff
                const double lim = std::max(
                    {3.0 * a.sol.gamma_se[m][cell], drift, 1e-8});
                const double ratio = std::abs(mc - orv) / lim;
                worst_counting = std::max(worst_counting, ratio);
                if (ratio > 1.0) pass = false;
            }
        }
    }

    // general side: deterministic and two-point factors against the
    // theta/xi word-sum oracle, with identical word truncation on both
    // routes
    double worst_general = 0.0;
    {
        const TimeGrid grid(1.0, 64);
        JumpDistribution nu({1.0, -1.0}, {0.7, 0.3});
        const std::size_t K = 5;
        auto lattice = std::make_shared<StateLattice>(build_lattice(nu, K));
        auto lam = IntensitySpec::constant(lattice, grid, 1.0, kBand);
        const TimeGrid fine(1.0, 1024);
        auto lam_fine = IntensitySpec::constant(lattice, fine, 1.0, kBand);

        EtaPath det_fine, lo_fine, hi_fine;
        det_fine.values = GridFunction(fine, 1.7);
        lo_fine.values = GridFunction(fine, 1.0);
        hi_fine.values = GridFunction(fine, 2.0);

        struct Case {
            EtaModel model;
            std::vector<std::pair<EtaPath, double>> branches;
        };
        const std::vector<Case> cases = {
            {EtaModel::constant(1.7, kBand), {{det_fine, 1.0}}},
            {EtaModel::random_constant({1.0, 2.0}, {0.5, 0.5}, kBand),
             {{lo_fine, 0.5}, {hi_fine, 0.5}}},
        };

        for (std::size_t ci = 0; ci < cases.size(); ++ci) {
            GeneralFpProblem prob(cases[ci].model, nu, lam, kBand, grid,
                                  20000, 0.5, 303 + ci);
            // tight stop so that exactly-solvable cases sit well inside
            // the roundoff floor below
            const auto sol = solve_system(prob, 1e-9, 400);
            const auto oracle =
                solve_system_oracle(lam_fine, nu, cases[ci].branches, kBand,
                                    0.5, 1e-10, 400, K);
            const double h = grid.step();
            for (double state : {0.0, 1.0, -1.0}) {
                const std::size_t x = lattice->index_of(state);
                for (double t : {0.25, 0.5, 0.75}) {
                    const std::size_t cell = grid.cell_index(t);
                    if (cell < sol.traces[x].first_trusted_cell) continue;
                    const double probe = grid.midpoint(cell);
                    const double mc = sol.gamma.at(x)(probe);
                    const double orv = oracle.at(x)(probe);
                    const double drift =
                        std::abs(oracle.at(x)(std::min(1.0, probe + h)) -
                                 oracle.at(x)(std::max(0.0, probe - h)));
                    const double lim = std::max(
                        {3.0 * sol.gamma_se[x][cell], drift, 1e-8});
                    const double ratio = std::abs(mc - orv) / lim;
                    worst_general = std::max(worst_general, ratio);
                    if (ratio > 1.0) pass = false;
                }
            }
        }
    }
    report(5, pass, "oracle equivalence at probes T/4, T/2, 3T/4",
           "max |mc-oracle|/tolerance: counting=" + fmt(worst_counting) +
               " general=" + fmt(worst_general));
}

// --- criterion 6: cross-solver agreement -----------------------------------

void criterion_cross_solver() {
    const TimeGrid grid(1.0, 48);
    const auto nu = JumpDistribution::unit();
    const std::size_t K = 6;
    auto lattice = std::make_shared<StateLattice>(build_lattice(nu, K));
    auto lam = IntensitySpec::constant(lattice, grid, 1.0, kBand);
    auto eta = EtaModel::random_constant({1.0, 2.0}, {0.5, 0.5}, kBand);

    CountingFpProblem cp(eta, lam, kBand, grid, 2000, K, 404);
    const auto counting = solve_all_levels(cp, 1e-8, 300);
    GeneralFpProblem gp(eta, nu, lam, kBand, grid, 2000, 0.5, 404);
    const auto general = solve_system(gp, 1e-8, 400);

    double worst = 0.0;
    for (std::size_t m = 0; m <= K; ++m) {
        const std::size_t first =
            std::max(counting.traces[m].first_trusted_cell,
                     general.traces[m].first_trusted_cell);
        for (std::size_t j = first; j < grid.n_steps(); ++j)
            worst = std::max(worst,
                             std::abs(counting.gamma.at(m).values()[j] -
                                      general.gamma.at(m).values()[j]));
    }
    report(6, worst < 1e-6,
           "unit-jump law through both solvers under identical seeds",
           "max |counting - general| = " + fmt(worst));
}

// --- criterion 7: the nonuniqueness demo ------------------------------------

void criterion_nonuniqueness() {
    const TimeGrid grid(1.0, 64);
    const auto demo = nonuniqueness_demo(10000, 20000, grid, 505);
    const auto& d = demo.report.details;
    const bool b_ok = d.at("b_matches_exp") == 1.0;
    const bool a_rejects = d.at("a_rejects_exp") == 1.0;
    const bool marg_ok = d.at("marginals_ok") == 1.0;
    report(7, b_ok && a_rejects && marg_ok,
           "nonuniqueness demo (reused-driver Poisson vs Cox construction)",
           "b_ks=" + fmt(d.at("ks_first_arrival_poisson")) + " a_ks=" +
               fmt(d.at("ks_first_arrival_cox")) + " a_crit=" +
               fmt(d.at("ks_critical_cox")) + " tv_a=" +
               fmt(d.at("tv_poisson_cox")) + " tv_b=" +
               fmt(d.at("tv_poisson_reuse")) + " driver_corr_a=" +
               fmt(d.count("driver_rank_corr_cox")
                       ? d.at("driver_rank_corr_cox")
                       : 0.0) +
               " driver_corr_b=" +
               fmt(d.count("driver_rank_corr_reuse")
                       ? d.at("driver_rank_corr_reuse")
                       : 0.0));
    if (!a_rejects) {
        std::printf(
            "  note: construction (a)'s first arrival is exponential as a\n"
            "  consequence of the marginal-matching property itself (its law\n"
            "  equals the reference zero-state occupancy e^{-t}), so the KS\n"
            "  rejection demanded by this criterion cannot occur for a\n"
            "  correctly solved leverage; the constructions are instead\n"
            "  distinguished by the driver coupling reported alongside.\n");
    }
}

// --- criterion 9: determinism ------------------------------------------------

void criterion_determinism() {
    json j = {
        {"seed", 606},
        {"model",
         {{"bounds", {{"L", 1.0}, {"U", 2.0}}},
          {"grid", {{"horizon", 1.0}, {"n_steps", 32}}},
          {"eta",
           {{"kind", "random-constant"},
            {"values", {1.0, 2.0}},
            {"probs", {0.5, 0.5}}}},
          {"lambda", {{"form", "constant"}, {"value", 1.0}}},
          {"nu", {{"atoms", {1.0}}, {"probs", {1.0}}}}}},
        {"solver",
         {{"mode", "counting"},
          {"tol", 1e-4},
          {"max_iter", 100},
          {"mc_paths", 4000}}},
        {"verify",
         {{"n_paths", 20000},
          {"probe_times", {0.5, 1.0}},
          {"tests", {"projection", "clocks", "martingale"}}}},
    };
    auto cfg = parse_config(j);
    const fs::path root =
        fs::temp_directory_path() / "lsilab-acceptance-determinism";
    fs::remove_all(root);

    // the nested pipeline chatters on stdout; keep the criterion lines clean
    std::ostringstream sink;
    auto* old = std::cout.rdbuf(sink.rdbuf());
    cfg.out_dir = (root / "a").string();
    cfg.threads = 1;
    const int rc1 = run_all(cfg);
    cfg.out_dir = (root / "b").string();
    cfg.threads = 4;
    const int rc2 = run_all(cfg);
    std::cout.rdbuf(old);

    const auto slurp = [](const fs::path& p) {
        std::ifstream in(p, std::ios::binary);
        std::ostringstream os;
        os << in.rdbuf();
        return os.str();
    };
    bool identical = rc1 == 0 && rc2 == 0;
    for (const char* name : {"gamma.csv", "paths.csv", "marginals.csv"})
        identical = identical &&
                    slurp(root / "a" / name) == slurp(root / "b" / name);
    report(9, identical,
           "byte-identical artifacts across reruns and thread counts",
           std::string("exit_codes=") + std::to_string(rc1) + "," +
               std::to_string(rc2));
    fs::remove_all(root);
}

}  // namespace

int main() {
    std::printf("acceptance suite\n");
    const CountingArtifacts counting;
    criteria_counting(counting);
    criteria_general();
    criterion_oracle(counting);
    criterion_cross_solver();
    criterion_nonuniqueness();
    criterion_determinism();
    std::printf("%d criterion(s) failed\n", g_failures);
    return g_failures;
}
