#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <memory>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "lsilab/core.hpp"
#include "lsilab/cox.hpp"
#include "lsilab/eta.hpp"
#include "lsilab/fp_counting.hpp"
#include "lsilab/parallel.hpp"

namespace lsilab {

struct WordBudgetError : std::runtime_error {
    WordBudgetError(std::string msg, std::size_t count)
        : std::runtime_error(std::move(msg)), words_visited(count) {}
    std::size_t words_visited;
};

/// Problem data for the coupled general-jump system on a truncated lattice.
struct GeneralFpProblem {
    EtaModel eta_model;
    JumpDistribution nu;
    IntensitySpec lam;
    Bounds bounds;
    TimeGrid grid;
    std::size_t mc_paths = 1000;
    double damping = 0.5;
    std::uint64_t seed = 0;
    std::size_t word_budget = 1u << 20;

    GeneralFpProblem(EtaModel model, JumpDistribution nu_, IntensitySpec lam_,
                     Bounds b, TimeGrid g, std::size_t paths, double theta_d,
                     std::uint64_t seed_)
        : eta_model(std::move(model)),
          nu(std::move(nu_)),
          lam(std::move(lam_)),
          bounds(b),
          grid(g),
          mc_paths(paths),
          damping(theta_d),
          seed(seed_) {
        if (!(damping > 0.0) || damping > 1.0)
            throw std::invalid_argument("GeneralFpProblem: damping in (0, 1]");
        if (mc_paths < 1000)
            throw std::invalid_argument("GeneralFpProblem: mc_paths >= 1000");
        // the lattice must contain every sum the truncation depth allows
        const auto check = build_lattice(nu, lam.lattice().max_jumps());
        for (double s : check.states())
            if (!lam.lattice().find(s))
                throw std::invalid_argument(
                    "GeneralFpProblem: lattice inconsistent with nu");
    }

    const StateLattice& lattice() const { return lam.lattice(); }

    FpSampleSet draw_samples() const {
        return draw_fp_samples(eta_model, grid, mc_paths,
                               lattice().max_jumps() + 1, RngStream(seed, 0));
    }
};

/// Jump times of one frozen word: times[0] = 0 and times[i] solves the
/// clock condition with the leverage of the prefix state S_{i-1}(a), up to
/// and including the (k+1)-th time that would follow the word.
struct FrozenWordTimes {
    std::vector<double> word;
    std::vector<double> times;
};

inline FrozenWordTimes frozen_word_times(const std::vector<double>& word,
                                         const EtaPath& eta,
                                         const std::vector<double>& clocks,
                                         const GammaFamily& gamma,
                                         const IntensitySpec& lam) {
    if (clocks.size() < word.size() + 1)
        throw std::invalid_argument("frozen_word_times: not enough clocks");
    const StateLattice& lattice = gamma.lattice();
    FrozenWordTimes out;
    out.word = word;
    out.times.assign(word.size() + 2, 0.0);
    double state = 0.0;
    std::size_t ord = lattice.origin();
    for (std::size_t i = 0; i + 1 < out.times.size(); ++i) {
        const double start = out.times[i];
        double next = std::numeric_limits<double>::infinity();
        if (std::isfinite(start)) {
            const auto hit = detail::invert_clock(
                eta.grid(), eta.values.values(), lam.at(ord).values(),
                gamma.at(ord).values(), start, clocks[i]);
            if (hit) next = *hit;
        }
        out.times[i + 1] = next;
        if (i < word.size()) {
            state += word[i];
            const auto next_ord = lattice.find(state);
            if (!next_ord)
                throw std::invalid_argument(
                    "frozen_word_times: word leaves the lattice");
            ord = *next_ord;
        }
    }
    return out;
}

struct GeneralFgEstimate {
    std::vector<std::vector<double>> f, g;      // [state][cell midpoint]
    std::vector<std::vector<std::size_t>> mass; // contributing samples
    std::vector<std::vector<double>> se;        // ratio SE (optional pass)
    std::size_t max_words_per_sample = 0;
    double mean_dropped_weight = 0.0;  // word mass pruned at the boundary
};

namespace detail {

struct WordDfsPartial {
    std::vector<std::vector<double>> f, g, ff, fg, gg;
    std::vector<std::vector<std::size_t>> mass;
    std::size_t max_words = 0;
    double dropped = 0.0;
    bool budget_hit = false;
};

struct WordDfsScratch {
    // per-state lazily built tables for the current sample
    std::vector<std::vector<double>> rates;    // [state][cell]
    std::vector<std::vector<double>> prefix;   // [state][node]
    std::vector<char> built;
    std::vector<std::vector<double>> buckets;  // [state][2 * cell]
    std::vector<char> touched;
    std::vector<std::size_t> touched_list;
    // per-sample per-state accumulators (for SE moments)
    std::vector<double> fs, gs;

    struct Node {
        std::size_t depth;
        std::size_t state;
        double tau;
        double weight;
    };
    std::vector<Node> stack;
};

/// DFS over jump words for one sample. Every visited node is one word
/// prefix a with its frozen arrival time tau^a_k; it contributes the
/// survival-weighted indicator to its terminal state's f and g at every
/// later midpoint. Expansion stops at the truncation depth, at the
/// horizon, and at the lattice boundary (the dropped probability mass is
/// tracked; the truncation rule certifies it is negligible).
inline void word_dfs_sample(const TimeGrid& grid, const EtaPath& eta,
                            const IntensitySpec& lam,
                            const JumpDistribution& nu,
                            const GammaFamily& gamma,
                            const std::vector<double>& clocks,
                            std::size_t max_depth, std::size_t word_budget,
                            bool with_moments, WordDfsScratch& scr,
                            WordDfsPartial& out) {
    const std::size_t n = grid.n_steps();
    const double h = grid.step();
    const StateLattice& lattice = gamma.lattice();
    const std::vector<double>& ev = eta.values.values();

    const auto build_state = [&](std::size_t x) {
        if (scr.built[x]) return;
        auto& r = scr.rates[x];
        auto& p = scr.prefix[x];
        const auto& lv = lam.at(x).values();
        const auto& gv = gamma.at(x).values();
        double acc = 0.0;
        p[0] = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            r[j] = ev[j] * lv[j] / gv[j];
            acc += r[j] * h;
            p[j + 1] = acc;
        }
        scr.built[x] = 1;
    };

    const auto touch = [&](std::size_t x) {
        if (scr.touched[x]) return;
        scr.touched[x] = 1;
        scr.touched_list.push_back(x);
        std::fill(scr.buckets[x].begin(), scr.buckets[x].end(), 0.0);
    };

    scr.stack.clear();
    scr.stack.push_back({0, lattice.origin(), 0.0, 1.0});
    std::size_t visited = 0;

    while (!scr.stack.empty()) {
        const auto node = scr.stack.back();
        scr.stack.pop_back();
        ++visited;
        if (visited > word_budget) {
            out.budget_hit = true;
            out.max_words = std::max(out.max_words, visited);
            return;
        }

        build_state(node.state);
        touch(node.state);
        const auto& pref = scr.prefix[node.state];
        const auto& rates = scr.rates[node.state];
        const std::size_t cell = grid.cell_index(node.tau);
        const double p_tau =
            pref[cell] + rates[cell] * (node.tau - grid.node(cell));
        const double arrival = node.weight * std::exp(p_tau);
        const bool before_mid = node.tau < grid.midpoint(cell);
        scr.buckets[node.state][2 * cell + (before_mid ? 0 : 1)] += arrival;

        if (node.depth >= max_depth) continue;
        // one shared clock rings the next jump; the children only differ
        // in the atom that then fires
        const auto next = invert_clock(grid, ev, lam.at(node.state).values(),
                                       gamma.at(node.state).values(), node.tau,
                                       clocks[node.depth]);
        if (!next || *next >= grid.horizon()) continue;
        const double value = lattice.state(node.state);
        for (std::size_t a = 0; a < nu.n_atoms(); ++a) {
            const double w = node.weight * nu.probs()[a];
            const auto child = lattice.find(value + nu.atoms()[a]);
            if (!child) {
                out.dropped += w;
                continue;
            }
            scr.stack.push_back({node.depth + 1, *child, *next, w});
        }
    }
    out.max_words = std::max(out.max_words, visited);

    // fold the arrival buckets into f/g at each midpoint
    for (std::size_t x : scr.touched_list) {
        const auto& pref = scr.prefix[x];
        const auto& rates = scr.rates[x];
        const auto& bucket = scr.buckets[x];
        double carry = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            const double sum_pre = carry + bucket[2 * j];
            carry = sum_pre + bucket[2 * j + 1];
            if (sum_pre <= 0.0) continue;
            const double q_mid = pref[j] + rates[j] * 0.5 * h;
            const double gs = std::exp(-q_mid) * sum_pre;
            const double fs = ev[j] * gs;
            out.g[x][j] += gs;
            out.f[x][j] += fs;
            out.mass[x][j] += 1;
            if (with_moments) {
                out.gg[x][j] += gs * gs;
                out.fg[x][j] += fs * gs;
                out.ff[x][j] += fs * fs;
            }
        }
        scr.touched[x] = 0;
        scr.built[x] = 0;
    }
    scr.touched_list.clear();
}

}  // namespace detail

/// Estimate the coupled system's numerators/denominators for every lattice
/// state in one pass over the samples.
inline GeneralFgEstimate estimate_fg_general_all(
    const FpSampleSet& samples, const IntensitySpec& lam,
    const JumpDistribution& nu, const GammaFamily& gamma,
    const SolveOptions& opt, std::size_t word_budget, bool with_se = false) {
    const TimeGrid& grid = samples.grid;
    const std::size_t n = grid.n_steps();
    const std::size_t n_states = gamma.size();
    const std::size_t max_depth = gamma.lattice().max_jumps();

    GeneralFgEstimate est;
    est.f.assign(n_states, std::vector<double>(n, 0.0));
    est.g.assign(n_states, std::vector<double>(n, 0.0));
    est.mass.assign(n_states, std::vector<std::size_t>(n, 0));
    std::vector<std::vector<double>> ff, fg, gg;
    if (with_se) {
        ff.assign(n_states, std::vector<double>(n, 0.0));
        fg.assign(n_states, std::vector<double>(n, 0.0));
        gg.assign(n_states, std::vector<double>(n, 0.0));
    }

    bool budget_hit = false;
    std::size_t max_words = 0;
    double dropped = 0.0;

    blocked_reduce<detail::WordDfsPartial>(
        samples.size(), opt.block_size, opt.threads,
        [&](std::size_t begin, std::size_t end, detail::WordDfsPartial& part) {
            part.f.assign(n_states, std::vector<double>(n, 0.0));
            part.g.assign(n_states, std::vector<double>(n, 0.0));
            part.mass.assign(n_states, std::vector<std::size_t>(n, 0));
            if (with_se) {
                part.ff.assign(n_states, std::vector<double>(n, 0.0));
                part.fg.assign(n_states, std::vector<double>(n, 0.0));
                part.gg.assign(n_states, std::vector<double>(n, 0.0));
            }
            detail::WordDfsScratch scr;
            scr.rates.assign(n_states, std::vector<double>(n, 0.0));
            scr.prefix.assign(n_states, std::vector<double>(n + 1, 0.0));
            scr.built.assign(n_states, 0);
            scr.buckets.assign(n_states, std::vector<double>(2 * n, 0.0));
            scr.touched.assign(n_states, 0);
            for (std::size_t s = begin; s < end; ++s)
                detail::word_dfs_sample(grid, samples.etas[s], lam, nu, gamma,
                                        samples.clocks[s], max_depth,
                                        word_budget, with_se, scr, part);
        },
        [&](const detail::WordDfsPartial& part) {
            budget_hit = budget_hit || part.budget_hit;
            max_words = std::max(max_words, part.max_words);
            dropped += part.dropped;
            for (std::size_t x = 0; x < n_states; ++x)
                for (std::size_t j = 0; j < n; ++j) {
                    est.f[x][j] += part.f[x][j];
                    est.g[x][j] += part.g[x][j];
                    est.mass[x][j] += part.mass[x][j];
                    if (with_se) {
                        ff[x][j] += part.ff[x][j];
                        fg[x][j] += part.fg[x][j];
                        gg[x][j] += part.gg[x][j];
                    }
                }
        });

    if (budget_hit)
        throw WordBudgetError(
            "estimate_fg_general: word budget exceeded (visited > " +
                std::to_string(word_budget) + " per sample)",
            max_words);

    est.max_words_per_sample = max_words;
    est.mean_dropped_weight = dropped / static_cast<double>(samples.size());
    if (with_se) {
        est.se.assign(n_states,
                      std::vector<double>(
                          n, std::numeric_limits<double>::infinity()));
        for (std::size_t x = 0; x < n_states; ++x)
            for (std::size_t j = 0; j < n; ++j) {
                if (est.g[x][j] <= 0.0) continue;
                const double r = est.f[x][j] / est.g[x][j];
                const double s2 =
                    ff[x][j] - 2.0 * r * fg[x][j] + r * r * gg[x][j];
                est.se[x][j] = std::sqrt(std::max(0.0, s2)) / est.g[x][j];
            }
    }
    return est;
}

/// Spec-shaped single-state view of the estimator.
inline std::pair<GridFunction, GridFunction> estimate_fg_general(
    std::size_t state_ordinal, const GammaFamily& gamma,
    const FpSampleSet& samples, const IntensitySpec& lam,
    const JumpDistribution& nu, const SolveOptions& opt = {},
    std::size_t word_budget = 1u << 20) {
    const auto est =
        estimate_fg_general_all(samples, lam, nu, gamma, opt, word_budget);
    return {GridFunction(samples.grid, est.f.at(state_ordinal)),
            GridFunction(samples.grid, est.g.at(state_ordinal))};
}

/// Damped simultaneous fixed-point iteration over all lattice states with
/// common random numbers. Existence of the target is Schauder-based, so
/// convergence is monitored rather than assumed; non-convergence carries
/// the residual trace and the best iterate.
inline FpSolution solve_system(const GeneralFpProblem& problem, double tol,
                               std::size_t max_iter,
                               const SolveOptions& base_opt = {},
                               const GammaFamily* start = nullptr) {
    SolveOptions opt = base_opt;
    opt.tol = tol;
    opt.max_iter = max_iter;

    const FpSampleSet samples = problem.draw_samples();
    const TimeGrid& grid = problem.grid;
    const std::size_t n = grid.n_steps();
    const std::size_t n_states = problem.lattice().size();
    const double theta = problem.damping;
    const double a = contraction_weight(problem.bounds, grid.horizon());
    std::vector<double> weight(n);
    for (std::size_t j = 0; j < n; ++j)
        weight[j] = std::exp(-a * grid.midpoint(j));

    GammaFamily gamma = start ? *start
                              : GammaFamily::constant(
                                    problem.lam.lattice_ptr(), grid,
                                    problem.bounds.midpoint(), problem.bounds);

    FpSolution sol{gamma};
    sol.weight_a = a;
    sol.traces.assign(n_states, {});
    std::vector<std::size_t> first_trusted(n_states, n);

    bool converged = false;
    for (std::size_t it = 0; it < opt.max_iter; ++it) {
        const auto est = estimate_fg_general_all(samples, problem.lam,
                                                 problem.nu, gamma, opt,
                                                 problem.word_budget);
        double res = 0.0;
        std::vector<GridFunction> next;
        next.reserve(n_states);
        for (std::size_t x = 0; x < n_states; ++x) {
            FgEstimate view;
            view.f = est.f[x];
            view.g = est.g[x];
            view.mass = est.mass[x];
            const auto up =
                detail::ratio_update(view, problem.bounds, opt.min_mass);
            std::vector<double> v(n);
            double res_x = 0.0, res_w = 0.0;
            if (up.first_trusted == n) {
                v = gamma.at(x).values();  // untouched state: hold
            } else {
                for (std::size_t j = 0; j < n; ++j) {
                    v[j] = (1.0 - theta) * gamma.at(x).values()[j] +
                           theta * up.values[j];
                    const double d = std::abs(v[j] - gamma.at(x).values()[j]);
                    res_x = std::max(res_x, d);
                    res_w = std::max(res_w, weight[j] * d);
                }
            }
            first_trusted[x] = up.first_trusted;
            sol.traces[x].unweighted.push_back(res_x);
            sol.traces[x].weighted.push_back(res_w);
            sol.traces[x].first_trusted_cell = up.first_trusted;
            sol.traces[x].clamp_fraction = up.clamp_fraction;
            res = std::max(res, res_x);
            next.emplace_back(grid, std::move(v));
        }
        gamma = GammaFamily(problem.lam.lattice_ptr(), std::move(next),
                            problem.bounds);
        if (res <= opt.tol) {
            converged = true;
            break;
        }
    }

    sol.gamma = gamma;
    sol.residuals.assign(n_states, 0.0);
    sol.iterations.assign(n_states, 0);
    for (std::size_t x = 0; x < n_states; ++x) {
        if (!sol.traces[x].unweighted.empty())
            sol.residuals[x] = sol.traces[x].unweighted.back();
        sol.iterations[x] = sol.traces[x].unweighted.size();
        sol.traces[x].iterations = sol.traces[x].unweighted.size();
    }
    if (!converged) {
        std::vector<double> trace;
        for (std::size_t x = 0; x < n_states; ++x)
            if (sol.traces[x].unweighted.size() > trace.size())
                trace = sol.traces[x].unweighted;
        throw SolverError("solve_system: no convergence in " +
                              std::to_string(opt.max_iter) +
                              " iterations (best residual " +
                              std::to_string(trace.empty() ? -1.0
                                                           : trace.back()) +
                              ")",
                          trace);
    }

    // final pass for standard errors and word diagnostics
    const auto est_final = estimate_fg_general_all(
        samples, problem.lam, problem.nu, gamma, opt, problem.word_budget,
        true);
    sol.gamma_se = est_final.se;
    sol.max_words_per_sample = est_final.max_words_per_sample;
    sol.mean_dropped_word_weight = est_final.mean_dropped_weight;
    return sol;
}

/// Run the damped solve from the constant starts {L, (L+U)/2, U} and
/// report the largest pairwise disagreement over trusted cells. The
/// midpoint-start solution is returned; disagreement is evidence on the
/// open uniqueness question, never averaged away.
inline FpSolution solve_system_multistart(const GeneralFpProblem& problem,
                                          double tol, std::size_t max_iter,
                                          const SolveOptions& opt = {}) {
    const std::vector<double> starts = {problem.bounds.L,
                                        problem.bounds.midpoint(),
                                        problem.bounds.U};
    std::vector<FpSolution> sols;
    for (double s0 : starts) {
        GammaFamily g0 = GammaFamily::constant(problem.lam.lattice_ptr(),
                                               problem.grid, s0,
                                               problem.bounds);
        sols.push_back(solve_system(problem, tol, max_iter, opt, &g0));
    }
    double disagree = 0.0;
    const std::size_t n = problem.grid.n_steps();
    for (std::size_t x = 0; x < problem.lattice().size(); ++x) {
        std::size_t first = 0;
        for (const auto& s : sols)
            first = std::max(first, s.traces[x].first_trusted_cell);
        if (first >= n) continue;
        for (std::size_t j = first; j < n; ++j)
            for (std::size_t i = 1; i < sols.size(); ++i)
                disagree = std::max(
                    disagree, std::abs(sols[i].gamma.at(x).values()[j] -
                                       sols[0].gamma.at(x).values()[j]));
    }
    FpSolution out = std::move(sols[1]);  // midpoint start is canonical
    out.restart_disagreement = disagree;
    return out;
}

// --- theta/xi quadrature oracle -------------------------------------------

struct ThetaXi {
    double theta = 0.0;
    double xi = 0.0;
    double value = 0.0;  // eta_t * theta_t * xi_t
};

namespace detail {

/// Forward trapezoid recursion for one word and one deterministic factor
/// path: D_0(s) = e^{-P_0(s)} and
///   D_i(s) = e^{-P_i(s)} int_0^s r_{i-1}(u) D_{i-1}(u) e^{P_i(u)} du,
/// where r_i is the hazard at the word's i-th prefix state and P_i its
/// prefix integral. D_k(t) equals theta_t * xi_t, the whole survival
/// weight of the frozen word, so one pass serves every query time.
struct WordChain {
    std::vector<double> d_nodes;        // D_k at grid nodes
    std::vector<double> rate_terminal;  // hazard at the terminal state
    std::vector<double> pref_terminal;  // its prefix integral at nodes
};

inline WordChain word_chain(const std::vector<std::size_t>& ords,
                            const GammaFamily& gamma, const IntensitySpec& lam,
                            const EtaPath& eta) {
    const TimeGrid& grid = eta.grid();
    const std::size_t n = grid.n_steps();
    const double h = grid.step();
    const std::size_t k = ords.size() - 1;
    const std::vector<double>& ev = eta.values.values();

    std::vector<double> rate_prev(n), pref_prev(n + 1, 0.0);
    std::vector<double> rate_cur(n), pref_cur(n + 1, 0.0);
    std::vector<double> d_prev(n + 1), d_cur(n + 1);

    const auto fill = [&](std::size_t ord, std::vector<double>& rate,
                          std::vector<double>& pref) {
        const auto& lv = lam.at(ord).values();
        const auto& gv = gamma.at(ord).values();
        pref[0] = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            rate[j] = ev[j] * lv[j] / gv[j];
            pref[j + 1] = pref[j] + rate[j] * h;
        }
    };

    fill(ords[0], rate_prev, pref_prev);
    for (std::size_t j = 0; j <= n; ++j) d_prev[j] = std::exp(-pref_prev[j]);

    for (std::size_t i = 1; i <= k; ++i) {
        fill(ords[i], rate_cur, pref_cur);
        double acc = 0.0;
        d_cur[0] = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            const double lo = d_prev[j] * std::exp(pref_cur[j]);
            const double hi = d_prev[j + 1] * std::exp(pref_cur[j + 1]);
            acc += rate_prev[j] * h * 0.5 * (lo + hi);
            d_cur[j + 1] = std::exp(-pref_cur[j + 1]) * acc;
        }
        d_prev.swap(d_cur);
        rate_prev.swap(rate_cur);
        pref_prev.swap(pref_cur);
    }

    WordChain out;
    out.d_nodes = std::move(d_prev);
    out.rate_terminal = std::move(rate_prev);
    out.pref_terminal = std::move(pref_prev);
    return out;
}

inline std::vector<std::size_t> word_ordinals(const std::vector<double>& word,
                                              const StateLattice& lattice) {
    std::vector<std::size_t> ords(word.size() + 1);
    ords[0] = lattice.origin();
    double value = 0.0;
    for (std::size_t i = 0; i < word.size(); ++i) {
        value += word[i];
        const auto o = lattice.find(value);
        if (!o)
            throw std::invalid_argument("word leaves the truncated lattice");
        ords[i + 1] = *o;
    }
    return ords;
}

}  // namespace detail

/// Iterated-integral evaluation of one word's contribution for a single
/// deterministic factor path: theta is the exponential tilt to the horizon
/// at the terminal state, xi the simplex integral over the word's frozen
/// jump times.
inline ThetaXi theta_xi_oracle(std::size_t target_ordinal,
                               const std::vector<double>& word,
                               const GammaFamily& gamma,
                               const IntensitySpec& lam, const EtaPath& eta,
                               double t) {
    const TimeGrid& grid = eta.grid();
    const StateLattice& lattice = gamma.lattice();
    if (word.size() > lattice.max_jumps())
        throw std::invalid_argument("theta_xi_oracle: word longer than K");
    const auto ords = detail::word_ordinals(word, lattice);
    if (ords.back() != target_ordinal)
        throw std::invalid_argument(
            "theta_xi_oracle: word does not land on the target state");

    const auto chain = detail::word_chain(ords, gamma, lam, eta);
    const std::size_t n = grid.n_steps();
    const std::size_t cell = grid.cell_index(t);
    const double frac = (t - grid.node(cell)) / grid.step();
    const double p_t = chain.pref_terminal[cell] +
                       chain.rate_terminal[cell] * (t - grid.node(cell));
    const double tail = chain.pref_terminal[n] - p_t;
    // the empty word's weight is a pure exponential of the exact prefix;
    // longer words interpolate the simplex integral between nodes
    const double d_t =
        word.empty() ? std::exp(-p_t)
                     : chain.d_nodes[cell] * (1.0 - frac) +
                           chain.d_nodes[cell + 1] * frac;

    ThetaXi out;
    out.theta = std::exp(tail);
    out.xi = d_t * std::exp(-tail);
    out.value = eta.values(t) * d_t;
    return out;
}

/// Full word-sum oracle for finite-law factors: f_n(t), g_n(t) as
/// branch-weighted sums of word contributions with words up to length
/// max_len whose prefixes stay on the lattice.
inline std::pair<double, double> oracle_fg_general(
    std::size_t state_ordinal, const GammaFamily& gamma,
    const IntensitySpec& lam, const JumpDistribution& nu,
    const std::vector<std::pair<EtaPath, double>>& branches, double t,
    std::size_t max_len) {
    const StateLattice& lattice = gamma.lattice();
    double f = 0.0, g = 0.0;
    std::vector<double> word;

    const std::function<void(double, double)> recurse = [&](double sum,
                                                            double prob) {
        if (auto o = lattice.find(sum); o && *o == state_ordinal) {
            for (const auto& [path, branch_p] : branches) {
                const auto v =
                    theta_xi_oracle(state_ordinal, word, gamma, lam, path, t);
                f += prob * branch_p * v.value;
                g += prob * branch_p * v.theta * v.xi;
            }
        }
        if (word.size() >= max_len) return;
        for (std::size_t a = 0; a < nu.n_atoms(); ++a) {
            const double nsum = sum + nu.atoms()[a];
            if (!lattice.find(nsum)) continue;
            word.push_back(nu.atoms()[a]);
            recurse(nsum, prob * nu.probs()[a]);
            word.pop_back();
        }
    };
    recurse(0.0, 1.0);
    return {f, g};
}

/// Quadrature-side damped fixed point for finite-law factors: exact
/// expectations via the word chains, one D-recursion per (word, branch)
/// per sweep serving all midpoints at once. The independent route used to
/// cross-check the Monte Carlo solve.
inline GammaFamily solve_system_oracle(
    const IntensitySpec& lam, const JumpDistribution& nu,
    const std::vector<std::pair<EtaPath, double>>& branches,
    const Bounds& bounds, double damping, double tol, std::size_t max_iter,
    std::size_t max_len) {
    const TimeGrid& grid = branches.front().first.grid();
    const std::size_t n = grid.n_steps();
    const StateLattice& lattice = lam.lattice();
    const std::size_t n_states = lattice.size();
    GammaFamily gamma = GammaFamily::constant(lam.lattice_ptr(), grid,
                                              bounds.midpoint(), bounds);

    // enumerate lattice-respecting words once
    std::vector<std::pair<std::vector<double>, double>> words;
    std::vector<double> word;
    const std::function<void(double, double)> enumerate = [&](double sum,
                                                              double prob) {
        words.emplace_back(word, prob);
        if (word.size() >= max_len) return;
        for (std::size_t a = 0; a < nu.n_atoms(); ++a) {
            const double nsum = sum + nu.atoms()[a];
            if (!lattice.find(nsum)) continue;
            word.push_back(nu.atoms()[a]);
            enumerate(nsum, prob * nu.probs()[a]);
            word.pop_back();
        }
    };
    enumerate(0.0, 1.0);

    for (std::size_t it = 0; it < max_iter; ++it) {
        std::vector<std::vector<double>> f(n_states,
                                           std::vector<double>(n, 0.0));
        std::vector<std::vector<double>> g(n_states,
                                           std::vector<double>(n, 0.0));
        for (const auto& [w, prob] : words) {
            const auto ords = detail::word_ordinals(w, lattice);
            const std::size_t target = ords.back();
            for (const auto& [path, branch_p] : branches) {
                const auto chain = detail::word_chain(ords, gamma, lam, path);
                const double pw = prob * branch_p;
                for (std::size_t j = 0; j < n; ++j) {
                    const double d_mid = 0.5 * (chain.d_nodes[j] +
                                                chain.d_nodes[j + 1]);
                    g[target][j] += pw * d_mid;
                    f[target][j] += pw * path[j] * d_mid;
                }
            }
        }
        double res = 0.0;
        std::vector<GridFunction> next;
        next.reserve(n_states);
        for (std::size_t x = 0; x < n_states; ++x) {
            std::vector<double> v(n);
            for (std::size_t j = 0; j < n; ++j) {
                const double old = gamma.at(x).values()[j];
                if (g[x][j] <= 0.0) {
                    v[j] = old;
                    continue;
                }
                double r = f[x][j] / g[x][j];
                r = std::min(bounds.U, std::max(bounds.L, r));
                v[j] = (1.0 - damping) * old + damping * r;
                res = std::max(res, std::abs(v[j] - old));
            }
            next.emplace_back(grid, std::move(v));
        }
        gamma = GammaFamily(lam.lattice_ptr(), std::move(next), bounds);
        if (res <= tol) return gamma;
    }
    throw std::runtime_error("solve_system_oracle: no convergence");
}

}  // namespace lsilab
