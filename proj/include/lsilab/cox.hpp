#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <memory>
#include <optional>
#include <stdexcept>
#include <utility>
#include <vector>

#include "lsilab/core.hpp"
#include "lsilab/eta.hpp"
#include "lsilab/rng.hpp"

namespace lsilab {

namespace detail {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Substream tags used by the simulator; fixed so that replays and
// lazily-drawn variates line up across runs.
constexpr std::uint64_t kTagClocks = 0xC10C;
constexpr std::uint64_t kTagJumps = 0x10A9;
constexpr std::uint64_t kTagEta = 0xE7A;

// rate on cell i is eta[i] * lam[i] / gam[i]; all three share the grid.
inline double cell_rate(const std::vector<double>& eta,
                        const std::vector<double>& lam,
                        const std::vector<double>& gam, std::size_t i) {
    return eta[i] * lam[i] / gam[i];
}

/// Integral of the step-function rate over [a, b]. Accumulates cell by
/// cell left to right, which is the same arithmetic the clock inversion
/// uses, so inversion followed by integration reproduces the clock to
/// rounding error.
inline double integrate_rate(const TimeGrid& g, const std::vector<double>& eta,
                             const std::vector<double>& lam,
                             const std::vector<double>& gam, double a,
                             double b) {
    if (b <= a) return 0.0;
    const std::size_t ia = g.cell_index(a);
    const std::size_t ib = g.cell_index(b);
    if (ia == ib) return cell_rate(eta, lam, gam, ia) * (b - a);
    double acc = cell_rate(eta, lam, gam, ia) * (g.node(ia + 1) - a);
    for (std::size_t i = ia + 1; i < ib; ++i)
        acc += cell_rate(eta, lam, gam, i) * g.step();
    acc += cell_rate(eta, lam, gam, ib) * (b - g.node(ib));
    return acc;
}

/// Solve inf{t > start : int_start^t rate ds >= clock} exactly; the
/// integrated rate is piecewise linear so the hitting time is closed-form
/// inside a cell. Returns nullopt when the budget up to T is insufficient.
inline std::optional<double> invert_clock(const TimeGrid& g,
                                          const std::vector<double>& eta,
                                          const std::vector<double>& lam,
                                          const std::vector<double>& gam,
                                          double start, double clock) {
    if (clock <= 0.0) return start;
    if (start >= g.horizon()) return std::nullopt;
    std::size_t i = g.cell_index(start);
    double left = start;
    double acc = 0.0;
    while (i < g.n_steps()) {
        const double r = cell_rate(eta, lam, gam, i);
        const double right = g.node(i + 1);
        const double gain = r * (right - left);
        if (acc + gain >= clock) return left + (clock - acc) / r;
        acc += gain;
        left = right;
        ++i;
    }
    return std::nullopt;
}

}  // namespace detail

/// State-indexed local intensity table lambda(., x) on the lattice.
class IntensitySpec {
  public:
    IntensitySpec(std::shared_ptr<const StateLattice> lattice,
                  std::vector<GridFunction> lambda, Bounds bounds)
        : lattice_(std::move(lattice)),
          lambda_(std::move(lambda)),
          bounds_(bounds) {
        if (!lattice_ || lambda_.size() != lattice_->size())
            throw std::invalid_argument("IntensitySpec: table/lattice mismatch");
        for (const auto& f : lambda_)
            if (!f.within(bounds_))
                throw std::invalid_argument("IntensitySpec: lambda outside band");
    }

    static IntensitySpec constant(std::shared_ptr<const StateLattice> lattice,
                                  const TimeGrid& grid, double value,
                                  Bounds bounds) {
        std::vector<GridFunction> tab(lattice->size(),
                                      GridFunction(grid, value));
        return IntensitySpec(std::move(lattice), std::move(tab), bounds);
    }

    const StateLattice& lattice() const { return *lattice_; }
    std::shared_ptr<const StateLattice> lattice_ptr() const { return lattice_; }
    const Bounds& bounds() const { return bounds_; }
    const GridFunction& at(std::size_t ordinal) const {
        return lambda_.at(ordinal);
    }
    const TimeGrid& grid() const { return lambda_.front().grid(); }

  private:
    std::shared_ptr<const StateLattice> lattice_;
    std::vector<GridFunction> lambda_;
    Bounds bounds_;
};

/// State-indexed family of leverage functions, the unknown of the fixed
/// point problem. Values always live in [L, U].
class GammaFamily {
  public:
    GammaFamily(std::shared_ptr<const StateLattice> lattice,
                std::vector<GridFunction> gamma, Bounds bounds)
        : lattice_(std::move(lattice)),
          gamma_(std::move(gamma)),
          bounds_(bounds) {
        if (!lattice_ || gamma_.size() != lattice_->size())
            throw std::invalid_argument("GammaFamily: table/lattice mismatch");
        for (const auto& f : gamma_)
            if (!f.within(bounds_))
                throw std::invalid_argument("GammaFamily: gamma outside band");
    }

    static GammaFamily constant(std::shared_ptr<const StateLattice> lattice,
                                const TimeGrid& grid, double value,
                                Bounds bounds) {
        std::vector<GridFunction> tab(lattice->size(),
                                      GridFunction(grid, value));
        return GammaFamily(std::move(lattice), std::move(tab), bounds);
    }

    const StateLattice& lattice() const { return *lattice_; }
    std::shared_ptr<const StateLattice> lattice_ptr() const { return lattice_; }
    const Bounds& bounds() const { return bounds_; }
    const GridFunction& at(std::size_t ordinal) const {
        return gamma_.at(ordinal);
    }
    GridFunction& at(std::size_t ordinal) { return gamma_.at(ordinal); }
    const TimeGrid& grid() const { return gamma_.front().grid(); }
    std::size_t size() const { return gamma_.size(); }

  private:
    std::shared_ptr<const StateLattice> lattice_;
    std::vector<GridFunction> gamma_;
    Bounds bounds_;
};

/// One realized pure jump path on [0, T]. Jump k happened at times[k]
/// with size sizes[k], leaving the chain at lattice ordinal
/// states_after[k]. If a jump would have left the truncated lattice the
/// path is flagged: recorded jumps stop just before the exit.
struct JumpPath {
    std::vector<double> times;
    std::vector<double> sizes;
    std::vector<std::size_t> states_after;
    double horizon = 0.0;
    std::size_t origin = 0;

    bool lattice_exit = false;
    double exit_time = std::numeric_limits<double>::quiet_NaN();
    double exit_jump = std::numeric_limits<double>::quiet_NaN();

    std::size_t n_jumps() const { return times.size(); }

    std::size_t ordinal_before_jump(std::size_t k) const {
        return k == 0 ? origin : states_after[k - 1];
    }

    /// Lattice ordinal of X_t (jumps at exactly t included).
    std::size_t ordinal_at(double t) const {
        const auto it = std::upper_bound(times.begin(), times.end(), t);
        const auto k = static_cast<std::size_t>(it - times.begin());
        return k == 0 ? origin : states_after[k - 1];
    }

    /// Lattice ordinal of the left limit X_{t-}.
    std::size_t ordinal_before(double t) const {
        const auto it = std::lower_bound(times.begin(), times.end(), t);
        const auto k = static_cast<std::size_t>(it - times.begin());
        return k == 0 ? origin : states_after[k - 1];
    }
};

namespace detail {

template <typename ClockFn, typename JumpFn>
JumpPath cox_simulate_impl(const EtaPath& eta, const GammaFamily& gamma,
                           const IntensitySpec& lam, ClockFn&& next_clock,
                           JumpFn&& next_jump, double horizon) {
    const TimeGrid& grid = eta.grid();
    if (!(grid == gamma.grid()) || !(grid == lam.grid()))
        throw std::invalid_argument("cox_simulate: grid mismatch");
    if (horizon > grid.horizon() * (1.0 + 1e-12))
        throw std::invalid_argument("cox_simulate: horizon beyond grid");
    const StateLattice& lattice = gamma.lattice();

    JumpPath path;
    path.horizon = horizon;
    path.origin = lattice.origin();

    std::size_t x = path.origin;
    double t = 0.0;
    while (true) {
        const double clock = next_clock();
        const auto tau =
            detail::invert_clock(grid, eta.values.values(), lam.at(x).values(),
                                 gamma.at(x).values(), t, clock);
        if (!tau || *tau > horizon) break;
        const double jump = next_jump();
        const double value_before = lattice.state(x);
        const auto next = lattice.find(value_before + jump);
        if (!next) {
            path.lattice_exit = true;
            path.exit_time = *tau;
            path.exit_jump = jump;
            break;
        }
        path.times.push_back(*tau);
        path.sizes.push_back(jump);
        path.states_after.push_back(*next);
        x = *next;
        t = *tau;
    }
    return path;
}

}  // namespace detail

/// Cox construction: run the integrated intensity
/// eta_s / gamma_x(s) * lambda(s, x) at the current state x against fresh
/// Exp(1) clocks, solving each hitting time exactly within a grid cell.
/// Clock and jump variates come from independent substreams and are drawn
/// lazily in path order.
inline JumpPath cox_simulate(const EtaPath& eta, const GammaFamily& gamma,
                             const IntensitySpec& lam,
                             const JumpDistribution& nu, RngStream rng,
                             double horizon) {
    RngStream clocks = rng.fork(detail::kTagClocks);
    RngStream jumps = rng.fork(detail::kTagJumps);
    return detail::cox_simulate_impl(
        eta, gamma, lam, [&clocks] { return clocks.exponential(); },
        [&jumps, &nu] { return nu.sample(jumps.uniform()); }, horizon);
}

/// Deterministic variant for tests: clocks and jump sizes are supplied.
inline JumpPath cox_simulate_forced(const EtaPath& eta,
                                    const GammaFamily& gamma,
                                    const IntensitySpec& lam,
                                    const JumpDistribution& nu,
                                    const std::vector<double>& clocks,
                                    const std::vector<double>& jumps,
                                    double horizon) {
    (void)nu;
    std::size_t ci = 0, ji = 0;
    return detail::cox_simulate_impl(
        eta, gamma, lam,
        [&] {
            return ci < clocks.size() ? clocks[ci++] : detail::kInf;
        },
        [&] {
            if (ji >= jumps.size())
                throw std::invalid_argument("cox_simulate_forced: jumps exhausted");
            return jumps[ji++];
        },
        horizon);
}

/// Exact integral of the realized LSI intensity along a path over [a, b].
inline double integrated_intensity(const JumpPath& path, const EtaPath& eta,
                                   const GammaFamily& gamma,
                                   const IntensitySpec& lam, double a,
                                   double b) {
    if (a < 0.0 || b < a)
        throw std::invalid_argument("integrated_intensity: bad interval");
    const TimeGrid& grid = eta.grid();
    double acc = 0.0;
    double left = a;
    // jump times strictly inside (a, b) split the integrand
    auto it = std::upper_bound(path.times.begin(), path.times.end(), a);
    while (left < b) {
        double right = b;
        if (it != path.times.end() && *it < b) right = *it;
        const std::size_t x = path.ordinal_at(left);
        acc += detail::integrate_rate(grid, eta.values.values(),
                                      lam.at(x).values(),
                                      gamma.at(x).values(), left, right);
        left = right;
        if (it != path.times.end() && *it == right) ++it;
    }
    return acc;
}

/// Recover the compensator increments and jump sizes of a realized path:
/// E_k = int_{tau_{k-1}}^{tau_k} (eta / gamma_x) lambda(., x) ds with x the
/// pre-jump state. Under the construction these are iid Exp(1) x nu.
/// Only completed intervals appear (the censored tail has no jump).
inline std::vector<std::pair<double, double>> extract_clocks(
    const JumpPath& path, const EtaPath& eta, const GammaFamily& gamma,
    const IntensitySpec& lam) {
    std::vector<std::pair<double, double>> out;
    out.reserve(path.n_jumps());
    const TimeGrid& grid = eta.grid();
    double prev = 0.0;
    for (std::size_t k = 0; k < path.n_jumps(); ++k) {
        const std::size_t x = path.ordinal_before_jump(k);
        const double inc = detail::integrate_rate(
            grid, eta.values.values(), lam.at(x).values(),
            gamma.at(x).values(), prev, path.times[k]);
        out.emplace_back(inc, path.sizes[k]);
        prev = path.times[k];
    }
    return out;
}

/// Clock budget of completed increment k: the total rate mass available
/// on [tau_{k-1}, T] at the pre-jump state. An increment is observed on a
/// finite window exactly when E_k did not exceed its budget, so
/// distribution tests on completed increments must condition on this.
inline std::vector<double> completed_clock_budgets(const JumpPath& path,
                                                   const EtaPath& eta,
                                                   const GammaFamily& gamma,
                                                   const IntensitySpec& lam) {
    std::vector<double> out;
    out.reserve(path.n_jumps());
    double prev = 0.0;
    for (std::size_t k = 0; k < path.n_jumps(); ++k) {
        const std::size_t x = path.ordinal_before_jump(k);
        out.push_back(detail::integrate_rate(
            eta.grid(), eta.values.values(), lam.at(x).values(),
            gamma.at(x).values(), prev, path.horizon));
        prev = path.times[k];
    }
    return out;
}

}  // namespace lsilab
