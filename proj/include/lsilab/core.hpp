#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "lsilab/rng.hpp"

namespace lsilab {

/// Intensity band 0 < L < U. The derived constants L^2/U and U^2/L bound
/// the effective jump intensity eta/gamma * lambda from below and above,
/// which is what makes jump counts Poisson-sandwiched.
struct Bounds {
    double L = 1.0;
    double U = 2.0;

    Bounds() = default;
    Bounds(double lower, double upper) : L(lower), U(upper) {
        if (!(L > 0.0) || !(U > L))
            throw std::invalid_argument("Bounds: need 0 < L < U");
    }

    double rate_lower() const { return L * L / U; }
    double rate_upper() const { return U * U / L; }
    double midpoint() const { return 0.5 * (L + U); }
    bool contains(double x) const { return x >= L && x <= U; }
};

/// Uniform grid on [0, T] with n_steps cells [t_i, t_{i+1}).
class TimeGrid {
  public:
    TimeGrid() = default;
    TimeGrid(double horizon, std::size_t n_steps)
        : horizon_(horizon), n_steps_(n_steps) {
        if (!(horizon > 0.0) || n_steps < 1)
            throw std::invalid_argument("TimeGrid: need T > 0 and n_steps >= 1");
        step_ = horizon_ / static_cast<double>(n_steps_);
    }

    double horizon() const { return horizon_; }
    std::size_t n_steps() const { return n_steps_; }
    double step() const { return step_; }
    double node(std::size_t i) const { return static_cast<double>(i) * step_; }
    double midpoint(std::size_t i) const {
        return (static_cast<double>(i) + 0.5) * step_;
    }

    /// Cell that contains t under the left-closed convention; t = T maps
    /// to the last cell.
    std::size_t cell_index(double t) const {
        if (t < 0.0 || t > horizon_ * (1.0 + 1e-12))
            throw std::out_of_range("TimeGrid: t outside [0, T]");
        auto i = static_cast<std::size_t>(t / step_);
        return std::min(i, n_steps_ - 1);
    }

    bool operator==(const TimeGrid& o) const {
        return horizon_ == o.horizon_ && n_steps_ == o.n_steps_;
    }

  private:
    double horizon_ = 1.0;
    std::size_t n_steps_ = 1;
    double step_ = 1.0;
};

/// Piecewise-constant function on a TimeGrid, left-continuous: the value
/// on [t_i, t_{i+1}) is values[i]. This is the representation used for
/// leverage functions, intensities and sampled eta paths, and it keeps
/// integrated intensities piecewise linear (hence exactly invertible).
class GridFunction {
  public:
    GridFunction() : grid_(), values_(grid_.n_steps(), 0.0) {}
    GridFunction(TimeGrid grid, std::vector<double> values)
        : grid_(grid), values_(std::move(values)) {
        if (values_.size() != grid_.n_steps())
            throw std::invalid_argument("GridFunction: size mismatch with grid");
    }
    GridFunction(TimeGrid grid, double constant)
        : grid_(grid), values_(grid.n_steps(), constant) {}

    const TimeGrid& grid() const { return grid_; }
    const std::vector<double>& values() const { return values_; }
    std::vector<double>& values() { return values_; }
    double operator[](std::size_t i) const { return values_[i]; }

    double operator()(double t) const { return values_[grid_.cell_index(t)]; }

    /// Exact integral of the step function over [a, b], 0 <= a <= b <= T.
    double integrate(double a, double b) const {
        if (a > b) throw std::invalid_argument("GridFunction: a > b");
        const double h = grid_.step();
        std::size_t ia = grid_.cell_index(a);
        const std::size_t ib = grid_.cell_index(b);
        if (ia == ib) return values_[ia] * (b - a);
        double acc = values_[ia] * (grid_.node(ia + 1) - a);
        for (std::size_t i = ia + 1; i < ib; ++i) acc += values_[i] * h;
        acc += values_[ib] * (b - grid_.node(ib));
        return acc;
    }

    double min_value() const {
        return *std::min_element(values_.begin(), values_.end());
    }
    double max_value() const {
        return *std::max_element(values_.begin(), values_.end());
    }

    bool within(const Bounds& b) const {
        return min_value() >= b.L && max_value() <= b.U;
    }

  private:
    TimeGrid grid_;
    std::vector<double> values_;
};

inline double eval_grid_function(const GridFunction& f, double t) {
    return f(t);
}

/// Discrete jump law nu: finitely many distinct nonzero atoms with
/// probabilities summing to one.
class JumpDistribution {
  public:
    JumpDistribution(std::vector<double> atoms, std::vector<double> probs)
        : atoms_(std::move(atoms)), probs_(std::move(probs)) {
        validate();
        cum_.resize(probs_.size());
        double acc = 0.0;
        for (std::size_t i = 0; i < probs_.size(); ++i) {
            acc += probs_[i];
            cum_[i] = acc;
        }
        cum_.back() = 1.0;
        mean_ = 0.0;
        for (std::size_t i = 0; i < atoms_.size(); ++i)
            mean_ += probs_[i] * atoms_[i];
    }

    static JumpDistribution unit() { return JumpDistribution({1.0}, {1.0}); }

    const std::vector<double>& atoms() const { return atoms_; }
    const std::vector<double>& probs() const { return probs_; }
    std::size_t n_atoms() const { return atoms_.size(); }
    double mean_jump() const { return mean_; }
    bool is_counting() const {
        return atoms_.size() == 1 && atoms_[0] == 1.0;
    }

    double prob_of(double atom) const {
        for (std::size_t i = 0; i < atoms_.size(); ++i)
            if (atoms_[i] == atom) return probs_[i];
        return 0.0;
    }

    /// Inverse-CDF sample from a uniform in [0, 1).
    double sample(double u) const {
        const auto it = std::upper_bound(cum_.begin(), cum_.end(), u);
        const auto i =
            std::min<std::size_t>(static_cast<std::size_t>(it - cum_.begin()),
                                  atoms_.size() - 1);
        return atoms_[i];
    }

  private:
    void validate() const {
        if (atoms_.empty() || atoms_.size() != probs_.size())
            throw std::invalid_argument("JumpDistribution: empty or mismatched");
        double sum = 0.0;
        for (std::size_t i = 0; i < atoms_.size(); ++i) {
            if (atoms_[i] == 0.0)
                throw std::invalid_argument("JumpDistribution: zero atom");
            if (!(probs_[i] > 0.0))
                throw std::invalid_argument("JumpDistribution: nonpositive prob");
            for (std::size_t j = i + 1; j < atoms_.size(); ++j)
                if (atoms_[i] == atoms_[j])
                    throw std::invalid_argument(
                        "JumpDistribution: duplicate atom");
            sum += probs_[i];
        }
        if (std::abs(sum - 1.0) > 1e-12)
            throw std::invalid_argument(
                "JumpDistribution: probs must sum to 1 (got " +
                std::to_string(sum) + ")");
    }

    std::vector<double> atoms_;
    std::vector<double> probs_;
    std::vector<double> cum_;
    double mean_ = 0.0;
};

/// Truncated enumeration of all sums of at most `max_jumps` atoms: the
/// reachable states of the jump process. States are kept sorted; lookup
/// tolerates float dust from summing atoms in different orders.
class StateLattice {
  public:
    StateLattice(std::vector<double> states, std::size_t max_jumps)
        : states_(std::move(states)), max_jumps_(max_jumps) {}

    const std::vector<double>& states() const { return states_; }
    std::size_t size() const { return states_.size(); }
    std::size_t max_jumps() const { return max_jumps_; }
    double state(std::size_t i) const { return states_[i]; }

    std::optional<std::size_t> find(double x) const {
        auto it = std::lower_bound(states_.begin(), states_.end(), x - kTol);
        if (it != states_.end() && std::abs(*it - x) <= kTol)
            return static_cast<std::size_t>(it - states_.begin());
        return std::nullopt;
    }

    std::size_t index_of(double x) const {
        const auto i = find(x);
        if (!i) throw std::out_of_range("StateLattice: state not present");
        return *i;
    }

    std::size_t origin() const { return index_of(0.0); }

    static constexpr double kTol = 1e-12;

  private:
    std::vector<double> states_;
    std::size_t max_jumps_;
};

/// Enumerate {S_k(a) : a in Atom(nu)^k, 0 <= k <= K}, deduplicated and
/// sorted. Exact duplicates collapse for free; near-collisions within
/// 1e-12 (float dust on non-representable atoms) are merged too.
inline StateLattice build_lattice(const JumpDistribution& nu, std::size_t K) {
    if (K < 1) throw std::invalid_argument("build_lattice: K >= 1 required");
    std::vector<double> frontier{0.0};
    std::vector<double> all{0.0};
    for (std::size_t depth = 0; depth < K; ++depth) {
        std::vector<double> next;
        next.reserve(frontier.size() * nu.n_atoms());
        for (double s : frontier)
            for (double a : nu.atoms()) next.push_back(s + a);
        std::sort(next.begin(), next.end());
        next.erase(std::unique(next.begin(), next.end(),
                               [](double x, double y) {
                                   return std::abs(x - y) <= StateLattice::kTol;
                               }),
                   next.end());
        all.insert(all.end(), next.begin(), next.end());
        frontier = std::move(next);
    }
    std::sort(all.begin(), all.end());
    all.erase(std::unique(all.begin(), all.end(),
                          [](double x, double y) {
                              return std::abs(x - y) <= StateLattice::kTol;
                          }),
              all.end());
    return StateLattice(std::move(all), K);
}

/// Smallest K with P(Poisson(rate * T) > K) < tail. Used to size the
/// lattice so that the probability a path needs more than K jumps is
/// certified negligible.
inline std::size_t poisson_truncation_level(double mean, double tail = 1e-6) {
    if (!(mean > 0.0)) throw std::invalid_argument("poisson rule: mean <= 0");
    if (!(tail > 0.0) || tail >= 1.0)
        throw std::invalid_argument("poisson rule: tail in (0,1) required");
    // survival = P(N > K); accumulate pmf until it drops below tail.
    double pmf = std::exp(-mean);
    double cdf = pmf;
    std::size_t k = 0;
    while (1.0 - cdf >= tail) {
        ++k;
        pmf *= mean / static_cast<double>(k);
        cdf += pmf;
        if (k > 100000)
            throw std::runtime_error("poisson rule: did not terminate");
    }
    return k;
}

inline std::size_t recommended_max_jumps(const Bounds& b, double horizon,
                                         double tail = 1e-6) {
    return poisson_truncation_level(b.rate_upper() * horizon, tail);
}

}  // namespace lsilab
