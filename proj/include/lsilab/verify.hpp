#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>
#include <memory>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "lsilab/cox.hpp"
#include "lsilab/eta.hpp"
#include "lsilab/fp_counting.hpp"
#include "lsilab/li_model.hpp"
#include "lsilab/parallel.hpp"
#include "lsilab/stats.hpp"

namespace lsilab {

struct TestReport {
    std::string name;
    double statistic = 0.0;
    double threshold = 0.0;
    bool pass = false;
    std::size_t n_samples = 0;
    std::map<std::string, double> details;
};

/// A batch of simulated LSI paths with their factor paths. Each path owns
/// the substream derived from its index, so the ensemble is reproducible
/// for any thread count.
struct PathEnsemble {
    TimeGrid grid;
    std::vector<EtaPath> etas;
    std::vector<JumpPath> paths;

    std::size_t size() const { return paths.size(); }
    std::size_t n_exits() const {
        std::size_t k = 0;
        for (const auto& p : paths) k += p.lattice_exit ? 1 : 0;
        return k;
    }
    double exit_rate() const {
        return paths.empty() ? 0.0
                             : static_cast<double>(n_exits()) /
                                   static_cast<double>(paths.size());
    }
};

inline PathEnsemble simulate_ensemble(const EtaModel& model,
                                      const GammaFamily& gamma,
                                      const IntensitySpec& lam,
                                      const JumpDistribution& nu,
                                      std::size_t n_paths, double horizon,
                                      RngStream base,
                                      std::size_t threads = 1) {
    PathEnsemble ens;
    ens.grid = gamma.grid();
    ens.etas.resize(n_paths);
    ens.paths.resize(n_paths);
    blocked_reduce<char>(
        n_paths, 4096, threads,
        [&](std::size_t begin, std::size_t end, char&) {
            for (std::size_t i = begin; i < end; ++i) {
                RngStream stream = base.fork(i);
                ens.etas[i] =
                    model.sample(ens.grid, stream.fork(detail::kTagEta));
                ens.paths[i] = cox_simulate(ens.etas[i], gamma, lam, nu,
                                            stream, horizon);
            }
        },
        [](const char&) {});
    return ens;
}

/// Marginal projection check: the LSI ensemble's one-dimensional laws must
/// match the LI model's forward-equation marginals at every probe time.
inline TestReport projection_check(const PathEnsemble& ens,
                                   const MarginalCurve& curve,
                                   const StateLattice& lattice,
                                   const std::vector<double>& probe_times,
                                   double tv_tol = 0.02,
                                   double p_floor = 0.001,
                                   double exit_rate_tol = 1e-3) {
    TestReport rep;
    rep.name = "projection";
    rep.threshold = tv_tol;
    rep.n_samples = ens.size();
    rep.pass = true;

    const double exit_rate = ens.exit_rate();
    rep.details["exit_rate"] = exit_rate;
    if (exit_rate > exit_rate_tol) rep.pass = false;

    std::size_t idx = 0;
    for (double t : probe_times) {
        const auto d = marginal_distance(ens.paths, curve, lattice, t);
        rep.statistic = std::max(rep.statistic, d.tv);
        rep.details["tv_" + std::to_string(idx)] = d.tv;
        rep.details["pvalue_" + std::to_string(idx)] = d.chi2_pvalue;
        rep.details["t_" + std::to_string(idx)] = t;
        if (d.tv > tv_tol || d.chi2_pvalue < p_floor) rep.pass = false;
        ++idx;
    }
    return rep;
}

namespace detail {

/// Probability-integral transform of a completed compensator increment.
/// On a finite window an increment is observed only when the clock did
/// not outrun its remaining budget, so the conditional law is Exp(1)
/// truncated to [0, budget]; mapping through that CDF gives iid uniforms.
/// (Raw pooled increments are biased low by the censoring; the transform
/// removes the bias exactly, budget by budget.)
inline double censor_pit(double increment, double budget) {
    return -std::expm1(-increment) / -std::expm1(-budget);
}

}  // namespace detail

/// Exp(1)/jump-size extraction test: censoring-adjusted KS for the clock
/// increments, serial independence proxy, jump-size frequencies, and
/// clock/jump independence.
inline TestReport exp_clock_test(const PathEnsemble& ens,
                                 const GammaFamily& gamma,
                                 const IntensitySpec& lam,
                                 const JumpDistribution& nu,
                                 double p_floor = 0.001) {
    std::vector<double> pit;
    std::vector<double> pit_lag_a, pit_lag_b;
    std::vector<double> pit_for_jump, jump_abs;
    std::vector<std::size_t> atom_counts(nu.n_atoms(), 0);

    for (std::size_t i = 0; i < ens.size(); ++i) {
        const auto& path = ens.paths[i];
        const auto rec = extract_clocks(path, ens.etas[i], gamma, lam);
        const auto budgets =
            completed_clock_budgets(path, ens.etas[i], gamma, lam);
        for (std::size_t k = 0; k < rec.size(); ++k) {
            const double u = detail::censor_pit(rec[k].first, budgets[k]);
            pit.push_back(u);
            pit_for_jump.push_back(u);
            jump_abs.push_back(std::abs(rec[k].second));
            for (std::size_t a = 0; a < nu.n_atoms(); ++a)
                if (rec[k].second == nu.atoms()[a]) ++atom_counts[a];
            if (k + 1 < rec.size()) {
                pit_lag_a.push_back(u);
                pit_lag_b.push_back(
                    detail::censor_pit(rec[k + 1].first, budgets[k + 1]));
            }
        }
    }

    if (pit.size() < 1000)
        throw std::invalid_argument(
            "exp_clock_test: fewer than 1000 completed intervals");

    TestReport rep;
    rep.name = "exp-clocks";
    rep.n_samples = pit.size();
    rep.pass = true;

    const double d =
        stats::ks_statistic(pit, [](double u) { return std::min(1.0, u); });
    const double p = stats::ks_pvalue(d, pit.size());
    rep.statistic = d;
    rep.threshold = stats::ks_critical_value(p_floor, pit.size());
    rep.details["ks_distance"] = d;
    rep.details["ks_pvalue"] = p;
    if (p < p_floor) rep.pass = false;

    if (pit_lag_a.size() >= 100) {
        const double rho = stats::spearman(pit_lag_a, pit_lag_b);
        const double bound =
            3.0 / std::sqrt(static_cast<double>(pit_lag_a.size()));
        rep.details["lag1_rank_corr"] = rho;
        rep.details["lag1_bound"] = bound;
        if (std::abs(rho) > bound) rep.pass = false;
    }

    if (nu.n_atoms() > 1) {
        const double n = static_cast<double>(pit.size());
        bool atoms_ok = true;
        for (std::size_t a = 0; a < nu.n_atoms(); ++a) {
            const double pa = nu.probs()[a];
            const double se = std::sqrt(n * pa * (1.0 - pa));
            const double dev =
                std::abs(static_cast<double>(atom_counts[a]) - n * pa);
            rep.details["atom_dev_sigma_" + std::to_string(a)] =
                se > 0.0 ? dev / se : 0.0;
            if (dev > 3.0 * se) atoms_ok = false;
        }
        if (!atoms_ok) rep.pass = false;

        const double rho_j = stats::spearman(pit_for_jump, jump_abs);
        const double bound_j = 3.0 / std::sqrt(n);
        rep.details["clock_jump_rank_corr"] = rho_j;
        if (std::abs(rho_j) > bound_j) rep.pass = false;
    }
    return rep;
}

/// Martingale test of the compensated process M_t = X_t - m1 * int rate:
/// unconditional mean zero at each checkpoint, plus a conditional
/// mean-zero check of the increments given a coarse binning of the state.
inline TestReport martingale_test(const PathEnsemble& ens,
                                  const GammaFamily& gamma,
                                  const IntensitySpec& lam,
                                  const JumpDistribution& nu,
                                  const std::vector<double>& checkpoints,
                                  std::size_t max_bins = 10,
                                  std::size_t min_bin_count = 25) {
    if (ens.size() < 1000)
        throw std::invalid_argument("martingale_test: fewer than 1000 paths");
    const StateLattice& lattice = gamma.lattice();
    const double m1 = nu.mean_jump();

    std::vector<std::size_t> usable;
    usable.reserve(ens.size());
    for (std::size_t i = 0; i < ens.size(); ++i)
        if (!ens.paths[i].lattice_exit) usable.push_back(i);

    // M at each checkpoint, per usable path
    std::vector<std::vector<double>> m_at(checkpoints.size());
    std::vector<std::vector<std::size_t>> state_at(checkpoints.size());
    for (auto& v : m_at) v.reserve(usable.size());
    for (auto& v : state_at) v.reserve(usable.size());
    for (std::size_t i : usable) {
        const auto& path = ens.paths[i];
        for (std::size_t c = 0; c < checkpoints.size(); ++c) {
            const double t = checkpoints[c];
            const double comp =
                integrated_intensity(path, ens.etas[i], gamma, lam, 0.0, t);
            const double x = lattice.state(path.ordinal_at(t));
            m_at[c].push_back(x - m1 * comp);
            state_at[c].push_back(path.ordinal_at(t));
        }
    }

    TestReport rep;
    rep.name = "martingale";
    rep.threshold = 3.0;
    rep.n_samples = usable.size();
    rep.pass = true;

    double worst_z = 0.0;
    for (std::size_t c = 0; c < checkpoints.size(); ++c) {
        stats::MeanVar mv;
        for (double m : m_at[c]) mv.add(m);
        const double z =
            mv.std_error() > 0.0 ? std::abs(mv.mean) / mv.std_error() : 0.0;
        rep.details["z_" + std::to_string(c)] = z;
        worst_z = std::max(worst_z, z);
        if (z > 3.0) rep.pass = false;
    }

    // conditional increments between consecutive checkpoints
    for (std::size_t c = 0; c + 1 < checkpoints.size(); ++c) {
        // group the occupied states into at most max_bins contiguous bins
        std::vector<std::size_t> occupied;
        for (std::size_t s : state_at[c]) occupied.push_back(s);
        std::sort(occupied.begin(), occupied.end());
        occupied.erase(std::unique(occupied.begin(), occupied.end()),
                       occupied.end());
        const std::size_t n_bins = std::min(max_bins, occupied.size());
        std::map<std::size_t, std::size_t> bin_of;
        for (std::size_t r = 0; r < occupied.size(); ++r)
            bin_of[occupied[r]] = r * n_bins / occupied.size();

        std::vector<stats::MeanVar> bins(n_bins);
        for (std::size_t i = 0; i < state_at[c].size(); ++i)
            bins[bin_of[state_at[c][i]]].add(m_at[c + 1][i] - m_at[c][i]);
        for (std::size_t b = 0; b < n_bins; ++b) {
            if (bins[b].n < min_bin_count) continue;
            const double z = bins[b].std_error() > 0.0
                                 ? std::abs(bins[b].mean) / bins[b].std_error()
                                 : 0.0;
            rep.details["bin_z_" + std::to_string(c) + "_" +
                        std::to_string(b)] = z;
            worst_z = std::max(worst_z, z);
            if (z > 3.0) rep.pass = false;
        }
    }
    rep.statistic = worst_z;
    return rep;
}

/// Defining-property consistency: on fresh paths, the binned conditional
/// mean of the factor given the pre-jump state must recover the solved
/// leverage, within combined Monte Carlo and solver uncertainty.
inline TestReport leverage_consistency_check(
    const PathEnsemble& ens, const GammaFamily& gamma,
    const std::vector<std::vector<double>>& gamma_se,
    const std::vector<double>& probe_times, std::size_t min_count = 100) {
    TestReport rep;
    rep.name = "leverage-consistency";
    rep.threshold = 3.0;
    rep.n_samples = ens.size();
    rep.pass = true;

    const TimeGrid& grid = gamma.grid();
    double worst = 0.0;
    std::size_t probe_idx = 0;
    for (double t : probe_times) {
        const std::size_t cell = grid.cell_index(t);
        std::vector<stats::MeanVar> by_state(gamma.size());
        for (std::size_t i = 0; i < ens.size(); ++i) {
            const auto& path = ens.paths[i];
            if (path.lattice_exit && path.exit_time <= t) continue;
            by_state[path.ordinal_before(t)].add(ens.etas[i].values[cell]);
        }
        for (std::size_t x = 0; x < gamma.size(); ++x) {
            if (by_state[x].n < min_count) continue;
            const double solver_se =
                x < gamma_se.size() && cell < gamma_se[x].size() &&
                        std::isfinite(gamma_se[x][cell])
                    ? gamma_se[x][cell]
                    : 0.0;
            const double se = std::sqrt(by_state[x].std_error() *
                                            by_state[x].std_error() +
                                        solver_se * solver_se);
            if (se <= 0.0) continue;
            const double z =
                std::abs(by_state[x].mean - gamma.at(x).values()[cell]) / se;
            rep.details["z_" + std::to_string(probe_idx) + "_state_" +
                        std::to_string(x)] = z;
            worst = std::max(worst, z);
            if (z > 3.0) rep.pass = false;
        }
        ++probe_idx;
    }
    rep.statistic = worst;
    return rep;
}

/// The nonuniqueness demonstration: two inversions of the same projection.
///
/// (a) is the Cox-type construction driven by fresh clocks independent of
/// the factor; (b) is a plain Poisson process whose first arrival reuses
/// the factor's own jump driver. Both reproduce Poisson(1) marginals, yet
/// they are different objects: in (b) the first arrival coincides with the
/// factor's driver almost surely, while in (a) it is run by an independent
/// clock (the driver-coupling diagnostics expose this). Note the
/// first-arrival *law* does not separate them: the solved leverage
/// restores exactly the zero-state occupancy of the reference model, and
/// that occupancy is the first-arrival law, so tau_1 is Exp(1) for both.
struct NonuniquenessResult {
    TestReport report;
    std::vector<double> first_arrivals_cox;      // construction (a)
    std::vector<double> first_arrivals_poisson;  // construction (b)
};

inline NonuniquenessResult nonuniqueness_demo(std::size_t n_paths,
                                              std::size_t mc_paths,
                                              const TimeGrid& grid,
                                              std::uint64_t seed,
                                              std::size_t threads = 1) {
    const Bounds band(1.0, 2.0);
    const auto nu = JumpDistribution::unit();
    const double T = grid.horizon();
    const std::size_t K =
        poisson_truncation_level(band.rate_upper() * T);
    auto lattice = std::make_shared<StateLattice>(build_lattice(nu, K));
    const auto lam = IntensitySpec::constant(lattice, grid, 1.0, band);
    const auto eta_model = EtaModel::single_jump(band);

    CountingFpProblem prob(eta_model, lam, band, grid, mc_paths, K, seed);
    SolveOptions opt;
    opt.threads = threads;
    const auto sol = solve_all_levels(prob, 1e-5, 200, opt);

    // construction (a): Cox paths with independent clocks
    const auto ens = simulate_ensemble(eta_model, sol.gamma, lam, nu, n_paths,
                                       T, RngStream(seed, 1), threads);

    // construction (b): Poisson whose first arrival is the factor's driver
    std::vector<double> first_b, driver_b;
    std::vector<std::size_t> count_b;
    first_b.reserve(n_paths);
    count_b.reserve(n_paths);
    RngStream base_b(seed, 2);
    for (std::size_t i = 0; i < n_paths; ++i) {
        RngStream stream = base_b.fork(i);
        const auto eta = eta_model.sample(grid, stream.fork(detail::kTagEta));
        RngStream fresh = stream.fork(detail::kTagClocks);
        double t = eta.driver_time;  // sigma_1 = E_1 reused
        first_b.push_back(t);
        driver_b.push_back(eta.driver_time);
        std::size_t n_jumps = 0;
        while (t <= T) {
            ++n_jumps;
            t += fresh.exponential();
        }
        count_b.push_back(n_jumps);
    }

    // statistics ------------------------------------------------------
    NonuniquenessResult out;
    TestReport& rep = out.report;
    rep.name = "nonuniqueness-demo";
    rep.n_samples = n_paths;

    const double window_cdf = -std::expm1(-T);
    const auto trunc_exp_cdf = [&](double x) {
        return -std::expm1(-x) / window_cdf;
    };

    std::vector<double> first_a, driver_a;
    for (std::size_t i = 0; i < ens.paths.size(); ++i) {
        const auto& p = ens.paths[i];
        if (p.n_jumps() >= 1) {
            out.first_arrivals_cox.push_back(p.times[0]);
            first_a.push_back(p.times[0]);
            driver_a.push_back(ens.etas[i].driver_time);
        }
    }
    std::vector<double> first_b_obs, driver_b_obs;
    for (std::size_t i = 0; i < first_b.size(); ++i)
        if (first_b[i] <= T) {
            out.first_arrivals_poisson.push_back(first_b[i]);
            first_b_obs.push_back(first_b[i]);
            driver_b_obs.push_back(driver_b[i]);
        }

    const double d_a =
        stats::ks_statistic(out.first_arrivals_cox, trunc_exp_cdf);
    const double d_b =
        stats::ks_statistic(out.first_arrivals_poisson, trunc_exp_cdf);
    const double crit_a =
        stats::ks_critical_value(0.001, out.first_arrivals_cox.size());
    const double crit_b =
        stats::ks_critical_value(0.001, out.first_arrivals_poisson.size());
    rep.details["ks_first_arrival_cox"] = d_a;
    rep.details["ks_critical_cox"] = crit_a;
    rep.details["ks_first_arrival_poisson"] = d_b;
    rep.details["ks_critical_poisson"] = crit_b;
    const bool b_matches_exp = d_b <= crit_b;
    const bool a_rejects_exp = d_a > crit_a;

    // marginals at the horizon against the analytic Poisson(T) pmf
    const auto poisson_tv = [&](const std::vector<std::size_t>& counts_hist,
                                double n) {
        double tv = 0.0;
        double pmf = std::exp(-T);
        double covered = 0.0;
        for (std::size_t k = 0; k < counts_hist.size(); ++k) {
            tv += std::abs(static_cast<double>(counts_hist[k]) / n - pmf);
            covered += pmf;
            pmf *= T / static_cast<double>(k + 1);
        }
        tv += 1.0 - covered;  // reference mass beyond the histogram
        return 0.5 * tv;
    };
    std::vector<std::size_t> hist_a(K + 2, 0), hist_b(K + 2, 0);
    for (const auto& p : ens.paths)
        hist_a[std::min<std::size_t>(p.n_jumps(), K + 1)] += 1;
    for (std::size_t c : count_b)
        hist_b[std::min<std::size_t>(c, K + 1)] += 1;
    const double tv_a = poisson_tv(hist_a, static_cast<double>(n_paths));
    const double tv_b = poisson_tv(hist_b, static_cast<double>(n_paths));
    rep.details["tv_poisson_cox"] = tv_a;
    rep.details["tv_poisson_reuse"] = tv_b;
    const bool marginals_ok = tv_a <= 0.02 && tv_b <= 0.02;

    // construction discriminator: coupling of the first arrival to the
    // factor's own driver. In (b) they coincide by construction; in (a)
    // the arrival is run by an independent clock.
    if (first_a.size() >= 100)
        rep.details["driver_rank_corr_cox"] =
            stats::spearman(first_a, driver_a);
    if (first_b_obs.size() >= 100)
        rep.details["driver_rank_corr_reuse"] =
            stats::spearman(first_b_obs, driver_b_obs);

    rep.statistic = d_a;
    rep.threshold = crit_a;
    rep.details["b_matches_exp"] = b_matches_exp ? 1.0 : 0.0;
    rep.details["a_rejects_exp"] = a_rejects_exp ? 1.0 : 0.0;
    rep.details["marginals_ok"] = marginals_ok ? 1.0 : 0.0;
    rep.pass = b_matches_exp && a_rejects_exp && marginals_ok;
    return out;
}

// --- corruption drills -----------------------------------------------------
// Each drill deliberately breaks one input and PASSES exactly when the
// designated test rejects it: the harness checks its own power.

/// Leverage inflated by 10% on the origin state; the projection must fail.
inline TestReport power_check_perturbed_gamma(
    const EtaModel& model, const GammaFamily& gamma, const IntensitySpec& lam,
    const JumpDistribution& nu, const MarginalCurve& curve,
    const StateLattice& lattice, std::size_t n_paths,
    const std::vector<double>& probes, RngStream rng, std::size_t threads = 1,
    double tv_tol = 0.02, double p_floor = 0.001) {
    std::vector<GridFunction> table;
    for (std::size_t x = 0; x < gamma.size(); ++x) table.push_back(gamma.at(x));
    auto& v0 = table[lattice.origin()].values();
    for (double& v : v0) v = std::min(gamma.bounds().U, 1.1 * v);
    const GammaFamily corrupted(gamma.lattice_ptr(), std::move(table),
                                gamma.bounds());
    const auto ens = simulate_ensemble(model, corrupted, lam, nu, n_paths,
                                       gamma.grid().horizon(), rng, threads);
    TestReport inner =
        projection_check(ens, curve, lattice, probes, tv_tol, p_floor);
    TestReport rep;
    rep.name = "power-perturbed-gamma";
    rep.statistic = inner.statistic;
    rep.threshold = inner.threshold;
    rep.n_samples = inner.n_samples;
    rep.details = inner.details;
    rep.pass = !inner.pass;
    return rep;
}

/// Reference curve built from a doubled intensity; the chi-square must
/// reject it on a correctly simulated ensemble.
inline TestReport power_check_wrong_lambda(const PathEnsemble& good_ens,
                                           const MarginalCurve& wrong_curve,
                                           const StateLattice& lattice,
                                           const std::vector<double>& probes,
                                           double tv_tol = 0.02,
                                           double p_floor = 0.001) {
    TestReport inner = projection_check(good_ens, wrong_curve, lattice, probes,
                                        tv_tol, p_floor);
    TestReport rep;
    rep.name = "power-wrong-lambda";
    rep.statistic = inner.statistic;
    rep.threshold = inner.threshold;
    rep.n_samples = inner.n_samples;
    rep.details = inner.details;
    rep.pass = !inner.pass;
    return rep;
}

/// Compensator evaluated with the unconditional mean of the factor instead
/// of the conditional one; the binned martingale check must reject when
/// the factor genuinely correlates with the state.
inline TestReport power_check_unconditional_gamma(
    const PathEnsemble& good_ens, const GammaFamily& gamma_unconditional,
    const IntensitySpec& lam, const JumpDistribution& nu,
    const std::vector<double>& checkpoints) {
    TestReport inner = martingale_test(good_ens, gamma_unconditional, lam, nu,
                                       checkpoints);
    TestReport rep;
    rep.name = "power-unconditional-gamma";
    rep.statistic = inner.statistic;
    rep.threshold = inner.threshold;
    rep.n_samples = inner.n_samples;
    rep.details = inner.details;
    rep.pass = !inner.pass;
    return rep;
}

/// Clock increments extracted with a wrong leverage (the constant upper
/// bound); the censoring-adjusted KS must reject.
inline TestReport power_check_wrong_gamma_clocks(
    const PathEnsemble& good_ens, const IntensitySpec& lam,
    const JumpDistribution& nu, const Bounds& bounds,
    double p_floor = 0.001) {
    const GammaFamily wrong = GammaFamily::constant(
        lam.lattice_ptr(), good_ens.grid, bounds.U, bounds);
    TestReport inner = exp_clock_test(good_ens, wrong, lam, nu, p_floor);
    TestReport rep;
    rep.name = "power-wrong-gamma-clocks";
    rep.statistic = inner.statistic;
    rep.threshold = inner.threshold;
    rep.n_samples = inner.n_samples;
    rep.details = inner.details;
    rep.pass = !inner.pass;
    return rep;
}

}  // namespace lsilab
