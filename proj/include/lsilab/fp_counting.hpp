#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <memory>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "lsilab/core.hpp"
#include "lsilab/cox.hpp"
#include "lsilab/eta.hpp"
#include "lsilab/parallel.hpp"

namespace lsilab {

struct SolverError : std::runtime_error {
    SolverError(std::string msg, std::vector<double> trace)
        : std::runtime_error(std::move(msg)),
          residual_trace(std::move(trace)) {}
    std::vector<double> residual_trace;
};

struct InsufficientMassError : std::runtime_error {
    InsufficientMassError(std::string msg, double t)
        : std::runtime_error(std::move(msg)), first_failing_t(t) {}
    double first_failing_t;
};

/// The shared Monte Carlo scenarios of a fixed-point solve: one eta path
/// and a ladder of Exp(1) clocks per sample. Both solvers consume the same
/// set, and the set is a pure function of (model, grid, n, n_clocks, seed),
/// which is what makes common-random-numbers runs reproducible.
struct FpSampleSet {
    TimeGrid grid;
    std::vector<EtaPath> etas;
    std::vector<std::vector<double>> clocks;

    std::size_t size() const { return etas.size(); }
    std::size_t n_clocks() const { return clocks.empty() ? 0 : clocks[0].size(); }
};

inline FpSampleSet draw_fp_samples(const EtaModel& model, const TimeGrid& grid,
                                   std::size_t n, std::size_t n_clocks,
                                   RngStream base) {
    FpSampleSet s;
    s.grid = grid;
    s.etas.reserve(n);
    s.clocks.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        RngStream stream = base.fork(i);
        s.etas.push_back(model.sample(grid, stream.fork(detail::kTagEta)));
        RngStream cl = stream.fork(detail::kTagClocks);
        std::vector<double> e(n_clocks);
        for (double& v : e) v = cl.exponential();
        s.clocks.push_back(std::move(e));
    }
    return s;
}

/// Problem data for the level-by-level counting solve. The intensity table
/// must live on the counting lattice {0, 1, ..., K}.
struct CountingFpProblem {
    EtaModel eta_model;
    IntensitySpec lam;
    Bounds bounds;
    TimeGrid grid;
    std::size_t mc_paths = 1000;
    std::size_t max_level = 1;
    std::uint64_t seed = 0;

    CountingFpProblem(EtaModel model, IntensitySpec intensity, Bounds b,
                      TimeGrid g, std::size_t paths, std::size_t levels,
                      std::uint64_t seed_)
        : eta_model(std::move(model)),
          lam(std::move(intensity)),
          bounds(b),
          grid(g),
          mc_paths(paths),
          max_level(levels),
          seed(seed_) {
        if (mc_paths < 1000)
            throw std::invalid_argument("CountingFpProblem: mc_paths >= 1000");
        if (lam.lattice().size() < max_level + 1)
            throw std::invalid_argument(
                "CountingFpProblem: intensity table shorter than level range");
    }

    FpSampleSet draw_samples() const {
        return draw_fp_samples(eta_model, grid, mc_paths, max_level,
                               RngStream(seed, 0));
    }
};

struct SolveOptions {
    double tol = 1e-6;
    std::size_t max_iter = 200;
    /// Cells need at least this many contributing samples before the
    /// empirical ratio is trusted; earlier cells take the first trusted
    /// value (the intensity there is never consumed before the level's
    /// first jump anyway).
    std::size_t min_mass = 50;
    std::size_t threads = 1;
    std::size_t block_size = 1024;
};

/// Picard residual weight from the contraction proof: a = 2 C(T) with
/// C(T) = 2 U^3 e^{(U^2/L) T} / L^2. At this a the exact map contracts
/// with factor 1/2 in the e^{-a t}-weighted sup norm.
inline double contraction_weight(const Bounds& b, double horizon) {
    const double c =
        2.0 * b.U * b.U * b.U / (b.L * b.L) * std::exp(b.rate_upper() * horizon);
    return 2.0 * c;
}

/// Empirical numerator/denominator of the level-m fixed point map at the
/// cell midpoints, given each sample's frozen level-m jump time.
struct FgEstimate {
    std::vector<double> f, g;
    std::vector<std::size_t> mass;  // samples with tau_m before the midpoint
    std::vector<double> se;         // delta-method SE of f/g (optional pass)
};

namespace detail {

struct FgPartial {
    std::vector<double> f, g, ff, fg, gg;
    std::vector<std::size_t> mass;
};

/// Core accumulation: for each sample with tau < midpoint m_j, weight
/// w = exp(-int_{tau}^{m_j} eta lambda / candidate). The integrand is a
/// step function so the integral is a running prefix; one pass per sample.
inline void accumulate_fg(const TimeGrid& grid, const EtaPath& eta,
                          const std::vector<double>& lam_level,
                          const std::vector<double>& candidate, double tau,
                          bool with_moments, FgPartial& out) {
    const std::size_t n = grid.n_steps();
    if (tau >= grid.horizon() || std::isinf(tau)) return;
    const double h = grid.step();
    const std::vector<double>& ev = eta.values.values();
    const std::size_t cell_tau = grid.cell_index(tau);

    double p = 0.0;  // rate integral up to node(j)
    double c = 0.0;  // rate integral up to tau
    for (std::size_t j = 0; j < n; ++j) {
        const double r = ev[j] * lam_level[j] / candidate[j];
        if (j < cell_tau) {
            p += r * h;
            continue;
        }
        if (j == cell_tau) c = p + r * (tau - grid.node(j));
        const double q_mid = p + r * 0.5 * h;
        p += r * h;
        if (grid.midpoint(j) <= tau) continue;
        const double w = std::exp(-(q_mid - c));
        const double fw = ev[j] * w;
        out.g[j] += w;
        out.f[j] += fw;
        out.mass[j] += 1;
        if (with_moments) {
            out.gg[j] += w * w;
            out.fg[j] += fw * w;
            out.ff[j] += fw * fw;
        }
    }
}

}  // namespace detail

/// Frozen level times: tau_m per sample, chained by exact clock inversion
/// through the already-solved levels. +inf marks "beyond the horizon".
inline std::vector<double> frozen_level_times(
    const FpSampleSet& samples, const IntensitySpec& lam,
    const std::vector<GridFunction>& gamma_prior, std::size_t level) {
    std::vector<double> tau(samples.size(), 0.0);
    if (level == 0) return tau;
    if (gamma_prior.size() < level)
        throw std::invalid_argument("frozen_level_times: missing prior gammas");
    for (std::size_t s = 0; s < samples.size(); ++s) {
        double t = 0.0;
        for (std::size_t m = 0; m < level; ++m) {
            const auto next = detail::invert_clock(
                samples.grid, samples.etas[s].values.values(),
                lam.at(m).values(), gamma_prior[m].values(), t,
                samples.clocks[s][m]);
            if (!next) {
                t = std::numeric_limits<double>::infinity();
                break;
            }
            t = *next;
        }
        tau[s] = t;
    }
    return tau;
}

inline FgEstimate estimate_fg_at(const FpSampleSet& samples,
                                 const GridFunction& lam_level,
                                 const GridFunction& candidate,
                                 const std::vector<double>& tau,
                                 const SolveOptions& opt,
                                 bool with_se = false) {
    const TimeGrid& grid = samples.grid;
    const std::size_t n = grid.n_steps();
    FgEstimate est;
    est.f.assign(n, 0.0);
    est.g.assign(n, 0.0);
    est.mass.assign(n, 0);
    std::vector<double> ff(n, 0.0), fg(n, 0.0), gg(n, 0.0);

    blocked_reduce<detail::FgPartial>(
        samples.size(), opt.block_size, opt.threads,
        [&](std::size_t begin, std::size_t end, detail::FgPartial& part) {
            part.f.assign(n, 0.0);
            part.g.assign(n, 0.0);
            part.mass.assign(n, 0);
            if (with_se) {
                part.ff.assign(n, 0.0);
                part.fg.assign(n, 0.0);
                part.gg.assign(n, 0.0);
            }
            for (std::size_t s = begin; s < end; ++s)
                detail::accumulate_fg(grid, samples.etas[s],
                                      lam_level.values(), candidate.values(),
                                      tau[s], with_se, part);
        },
        [&](const detail::FgPartial& part) {
            for (std::size_t j = 0; j < n; ++j) {
                est.f[j] += part.f[j];
                est.g[j] += part.g[j];
                est.mass[j] += part.mass[j];
                if (with_se) {
                    ff[j] += part.ff[j];
                    fg[j] += part.fg[j];
                    gg[j] += part.gg[j];
                }
            }
        });

    if (with_se) {
        est.se.assign(n, std::numeric_limits<double>::infinity());
        for (std::size_t j = 0; j < n; ++j) {
            if (est.g[j] <= 0.0) continue;
            const double r = est.f[j] / est.g[j];
            const double s2 = ff[j] - 2.0 * r * fg[j] + r * r * gg[j];
            est.se[j] = std::sqrt(std::max(0.0, s2)) / est.g[j];
        }
    }
    return est;
}

/// Spec-shaped estimator: computes the frozen times from the prior levels
/// and returns (f, g) as grid functions (values at cell midpoints).
inline std::pair<GridFunction, GridFunction> estimate_fg(
    std::size_t level, const std::vector<GridFunction>& gamma_prior,
    const GridFunction& candidate, const FpSampleSet& samples,
    const IntensitySpec& lam, const SolveOptions& opt = {}) {
    const auto tau = frozen_level_times(samples, lam, gamma_prior, level);
    const auto est =
        estimate_fg_at(samples, lam.at(level), candidate, tau, opt);
    bool any = false;
    for (std::size_t j = 0; j < est.mass.size(); ++j)
        if (est.mass[j] > 0) any = true;
    if (!any)
        throw InsufficientMassError(
            "estimate_fg: no sample reaches level " + std::to_string(level) +
            " before the horizon",
            samples.grid.midpoint(0));
    return {GridFunction(samples.grid, est.f), GridFunction(samples.grid, est.g)};
}

/// Per-level iteration diagnostics.
struct LevelTrace {
    std::vector<double> weighted;
    std::vector<double> unweighted;
    std::size_t iterations = 0;
    std::size_t first_trusted_cell = 0;
    double clamp_fraction = 0.0;
};

struct FpSolution {
    GammaFamily gamma;
    std::vector<double> residuals{};        // final weighted residual per level
    std::vector<std::size_t> iterations{};  // Picard iterations per level
    std::vector<LevelTrace> traces{};
    std::vector<std::vector<double>> gamma_se{};  // per level, per cell
    double weight_a = 0.0;
    /// Multi-restart disagreement (general solver); 0 when not used.
    double restart_disagreement = 0.0;
    /// Word-enumeration statistics (general solver only).
    std::size_t max_words_per_sample = 0;
    double mean_dropped_word_weight = 0.0;
};

namespace detail {

struct LevelUpdate {
    std::vector<double> values;
    std::size_t first_trusted = 0;
    double clamp_fraction = 0.0;
};

/// Turn an (f, g) estimate into the next iterate: clamp the ratio into
/// [L, U] where enough samples contribute, extrapolate the leading cells
/// backward from the first trusted one.
inline LevelUpdate ratio_update(const FgEstimate& est, const Bounds& bounds,
                                std::size_t min_mass) {
    const std::size_t n = est.f.size();
    LevelUpdate up;
    up.values.assign(n, bounds.midpoint());
    std::size_t first = n;
    std::size_t clamped = 0;
    for (std::size_t j = 0; j < n; ++j) {
        if (est.mass[j] < min_mass) continue;
        if (first == n) first = j;
        const double r = est.f[j] / est.g[j];
        double v = r;
        if (v < bounds.L) v = bounds.L;
        if (v > bounds.U) v = bounds.U;
        if (v != r) ++clamped;
        up.values[j] = v;
    }
    if (first == n) {
        up.first_trusted = n;
        return up;
    }
    for (std::size_t j = 0; j < first; ++j) up.values[j] = up.values[first];
    up.first_trusted = first;
    up.clamp_fraction =
        static_cast<double>(clamped) / static_cast<double>(n - first);
    return up;
}

}  // namespace detail

/// Solve one level of the counting fixed point by Picard iteration under
/// common random numbers, initialized at the midpoint of [L, U].
///
/// Stopping requires the weighted residual sup_t e^{-a t} |diff(t)| with
/// the proof's a = 2 C(T) to fall below tol, and also the plain sup
/// residual: for interesting bands the exponential weight underflows away
/// from t = 0, so on its own it certifies nothing numerically.
inline GridFunction solve_level_on(const FpSampleSet& samples,
                                   const IntensitySpec& lam,
                                   const Bounds& bounds, std::size_t level,
                                   const std::vector<double>& tau,
                                   const SolveOptions& opt, LevelTrace* trace,
                                   std::vector<double>* se_out) {
    const TimeGrid& grid = samples.grid;
    const std::size_t n = grid.n_steps();
    const double a = contraction_weight(bounds, grid.horizon());
    std::vector<double> weight(n);
    for (std::size_t j = 0; j < n; ++j)
        weight[j] = std::exp(-a * grid.midpoint(j));

    GridFunction gamma(grid, bounds.midpoint());
    LevelTrace local;
    bool converged = false;
    for (std::size_t it = 0; it < opt.max_iter; ++it) {
        const auto est = estimate_fg_at(samples, lam.at(level), gamma, tau, opt);
        auto up = detail::ratio_update(est, bounds, opt.min_mass);
        if (up.first_trusted == n) {
            double first_t = grid.horizon();
            for (std::size_t j = 0; j < n; ++j)
                if (est.mass[j] == 0) {
                    first_t = grid.midpoint(j);
                    break;
                }
            throw InsufficientMassError(
                "solve_level: level " + std::to_string(level) +
                    " has no trusted cells (mc_paths too small?)",
                first_t);
        }
        double res_u = 0.0, res_w = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            const double d = std::abs(up.values[j] - gamma.values()[j]);
            res_u = std::max(res_u, d);
            res_w = std::max(res_w, weight[j] * d);
        }
        gamma = GridFunction(grid, std::move(up.values));
        local.weighted.push_back(res_w);
        local.unweighted.push_back(res_u);
        local.iterations = it + 1;
        local.first_trusted_cell = up.first_trusted;
        local.clamp_fraction = up.clamp_fraction;
        if (res_w <= opt.tol && res_u <= opt.tol) {
            converged = true;
            break;
        }
    }
    if (!converged)
        throw SolverError("solve_level: level " + std::to_string(level) +
                              " did not converge in " +
                              std::to_string(opt.max_iter) + " iterations",
                          local.unweighted);
    if (se_out) {
        const auto est =
            estimate_fg_at(samples, lam.at(level), gamma, tau, opt, true);
        *se_out = est.se;
    }
    if (trace) *trace = std::move(local);
    return gamma;
}

/// Spec-shaped single-level entry point; draws the problem's sample set.
inline GridFunction solve_level(std::size_t level,
                                const std::vector<GridFunction>& gamma_prior,
                                const CountingFpProblem& problem, double tol,
                                std::size_t max_iter,
                                const SolveOptions& base_opt = {}) {
    SolveOptions opt = base_opt;
    opt.tol = tol;
    opt.max_iter = max_iter;
    const FpSampleSet samples = problem.draw_samples();
    const auto tau =
        frozen_level_times(samples, problem.lam, gamma_prior, level);
    return solve_level_on(samples, problem.lam, problem.bounds, level, tau,
                          opt, nullptr, nullptr);
}

/// Solve levels 0..K sequentially, each consuming the previously solved
/// leverage functions through the frozen jump times.
inline FpSolution solve_all_levels(const CountingFpProblem& problem,
                                   double tol, std::size_t max_iter,
                                   const SolveOptions& base_opt = {}) {
    SolveOptions opt = base_opt;
    opt.tol = tol;
    opt.max_iter = max_iter;

    const FpSampleSet samples = problem.draw_samples();
    const std::size_t n_levels = problem.max_level + 1;
    std::vector<GridFunction> solved;
    solved.reserve(n_levels);

    FpSolution sol{GammaFamily::constant(problem.lam.lattice_ptr(),
                                         problem.grid,
                                         problem.bounds.midpoint(),
                                         problem.bounds)};
    sol.weight_a = contraction_weight(problem.bounds, problem.grid.horizon());

    std::vector<double> tau(samples.size(), 0.0);
    for (std::size_t m = 0; m < n_levels; ++m) {
        LevelTrace trace;
        std::vector<double> se;
        GridFunction gamma_m;
        try {
            gamma_m = solve_level_on(samples, problem.lam, problem.bounds, m,
                                     tau, opt, &trace, &se);
        } catch (const InsufficientMassError&) {
            // deep levels no sample reaches: leave the midpoint constant,
            // their intensity is never consumed by paths that exist
            for (std::size_t k = m; k < n_levels; ++k) {
                solved.emplace_back(problem.grid, problem.bounds.midpoint());
                sol.residuals.push_back(0.0);
                sol.iterations.push_back(0);
                sol.traces.push_back({});
                sol.gamma_se.emplace_back();
            }
            break;
        }
        solved.push_back(gamma_m);
        sol.residuals.push_back(trace.weighted.back());
        sol.iterations.push_back(trace.iterations);
        sol.traces.push_back(std::move(trace));
        sol.gamma_se.push_back(std::move(se));

        if (m + 1 < n_levels) {
            // advance the frozen times to the next level
            for (std::size_t s = 0; s < samples.size(); ++s) {
                if (std::isinf(tau[s])) continue;
                const auto next = detail::invert_clock(
                    samples.grid, samples.etas[s].values.values(),
                    problem.lam.at(m).values(), gamma_m.values(), tau[s],
                    samples.clocks[s][m]);
                tau[s] = next ? *next : std::numeric_limits<double>::infinity();
            }
        }
    }

    sol.gamma = GammaFamily(problem.lam.lattice_ptr(), std::move(solved),
                            problem.bounds);
    return sol;
}

}  // namespace lsilab
