#pragma once

#include <cmath>
#include <cstddef>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "lsilab/core.hpp"
#include "lsilab/cox.hpp"
#include "lsilab/stats.hpp"

namespace lsilab {

/// One-dimensional marginal laws of the reference local intensity model,
/// per grid node. Mass lost to lattice truncation is tracked per node.
struct MarginalCurve {
    TimeGrid grid;
    std::vector<std::vector<double>> pmf;  // [node][state ordinal]
    std::vector<double> leak;              // 1 - sum(pmf) per node

    const std::vector<double>& at_node(std::size_t i) const { return pmf[i]; }

    std::size_t node_index(double t) const {
        const double pos = t / grid.step();
        auto i = static_cast<std::size_t>(std::llround(pos));
        if (std::abs(pos - static_cast<double>(i)) > 1e-9 || i >= pmf.size())
            throw std::invalid_argument("MarginalCurve: t is not a grid node");
        return i;
    }

    const std::vector<double>& at_time(double t) const {
        return pmf[node_index(t)];
    }
};

/// Integrate the forward equations
///   dp_x/dt = sum_xi lambda(t, x - xi) nu(xi) p_{x-xi} - lambda(t, x) p_x
/// from p = delta_0 with classical RK4, substepped so lambda_max * h <= 0.1.
/// Jumps leaving the lattice drain mass; the drain is the tracked leak.
inline MarginalCurve li_forward_marginals(const IntensitySpec& lam,
                                          const JumpDistribution& nu,
                                          const StateLattice& lattice,
                                          const TimeGrid& grid,
                                          double leak_tol = 1e-5) {
    const std::size_t n_states = lattice.size();
    const std::size_t n_atoms = nu.n_atoms();

    // source[x][j]: ordinal of state(x) - atom_j, or npos if outside
    constexpr std::size_t npos = static_cast<std::size_t>(-1);
    std::vector<std::vector<std::size_t>> source(
        n_states, std::vector<std::size_t>(n_atoms, npos));
    for (std::size_t x = 0; x < n_states; ++x)
        for (std::size_t j = 0; j < n_atoms; ++j)
            if (auto s = lattice.find(lattice.state(x) - nu.atoms()[j]))
                source[x][j] = *s;

    std::vector<double> p(n_states, 0.0);
    p[lattice.origin()] = 1.0;

    MarginalCurve curve;
    curve.grid = grid;
    curve.pmf.reserve(grid.n_steps() + 1);
    curve.leak.reserve(grid.n_steps() + 1);

    double lam_max = 0.0;
    for (std::size_t x = 0; x < n_states; ++x)
        lam_max = std::max(lam_max, lam.at(x).max_value());

    std::vector<double> k1(n_states), k2(n_states), k3(n_states), k4(n_states),
        tmp(n_states);

    const auto rhs = [&](const std::vector<double>& state, double t,
                         std::vector<double>& out) {
        for (std::size_t x = 0; x < n_states; ++x) {
            double in = 0.0;
            for (std::size_t j = 0; j < n_atoms; ++j) {
                const std::size_t s = source[x][j];
                if (s != npos) in += lam.at(s)(t) * nu.probs()[j] * state[s];
            }
            out[x] = in - lam.at(x)(t) * state[x];
        }
    };

    const auto record = [&](const std::vector<double>& state) {
        std::vector<double> snap(state);
        double sum = 0.0;
        for (double& v : snap) {
            if (v < 0.0) {
                if (v < -1e-12)
                    throw std::runtime_error(
                        "li_forward_marginals: negative probability");
                v = 0.0;
            }
            sum += v;
        }
        curve.pmf.push_back(std::move(snap));
        curve.leak.push_back(1.0 - sum);
    };

    record(p);
    const std::size_t substeps = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::ceil(lam_max * grid.step() / 0.1)));
    const double h = grid.step() / static_cast<double>(substeps);

    for (std::size_t cell = 0; cell < grid.n_steps(); ++cell) {
        // lambda is constant within the cell; keep evaluations inside it
        const double t_eval = grid.midpoint(cell);
        for (std::size_t s = 0; s < substeps; ++s) {
            rhs(p, t_eval, k1);
            for (std::size_t x = 0; x < n_states; ++x)
                tmp[x] = p[x] + 0.5 * h * k1[x];
            rhs(tmp, t_eval, k2);
            for (std::size_t x = 0; x < n_states; ++x)
                tmp[x] = p[x] + 0.5 * h * k2[x];
            rhs(tmp, t_eval, k3);
            for (std::size_t x = 0; x < n_states; ++x)
                tmp[x] = p[x] + h * k3[x];
            rhs(tmp, t_eval, k4);
            for (std::size_t x = 0; x < n_states; ++x)
                p[x] += h / 6.0 *
                        (k1[x] + 2.0 * k2[x] + 2.0 * k3[x] + k4[x]);
        }
        record(p);
        if (curve.leak.back() > leak_tol)
            throw std::runtime_error(
                "li_forward_marginals: truncation leak " +
                std::to_string(curve.leak.back()) + " above tolerance at t = " +
                std::to_string(grid.node(cell + 1)));
    }
    return curve;
}

struct MarginalDistance {
    double tv = 0.0;
    double chi2_pvalue = 1.0;
    std::size_t usable_paths = 0;
};

/// Empirical pmf of X_t over an ensemble against the reference curve:
/// total variation plus a chi-square goodness-of-fit p-value with cells
/// pooled to expected count >= 5. Lattice-exit paths are not usable.
inline MarginalDistance marginal_distance(const std::vector<JumpPath>& paths,
                                          const MarginalCurve& curve,
                                          const StateLattice& lattice,
                                          double t) {
    const std::vector<double>& ref = curve.at_time(t);
    std::vector<double> counts(lattice.size(), 0.0);
    std::size_t usable = 0;
    for (const JumpPath& p : paths) {
        if (p.lattice_exit && p.exit_time <= t) continue;
        counts[p.ordinal_at(t)] += 1.0;
        ++usable;
    }
    if (usable < 100)
        throw std::invalid_argument("marginal_distance: fewer than 100 paths");

    MarginalDistance out;
    out.usable_paths = usable;
    const double n = static_cast<double>(usable);
    const double leak = curve.leak[curve.node_index(t)];
    double tv = leak;  // model mass outside the lattice, empirically zero
    std::vector<double> expected(lattice.size());
    for (std::size_t x = 0; x < lattice.size(); ++x) {
        expected[x] = n * ref[x];
        tv += std::abs(counts[x] / n - ref[x]);
    }
    out.tv = 0.5 * tv;
    out.chi2_pvalue = stats::chi_square_gof(counts, expected).p_value;
    return out;
}

}  // namespace lsilab
