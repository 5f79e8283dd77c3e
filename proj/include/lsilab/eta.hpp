#pragma once

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "lsilab/core.hpp"
#include "lsilab/rng.hpp"

namespace lsilab {

/// One sampled path of the exogenous stochastic factor, piecewise constant
/// on the grid. The value on [t_i, t_{i+1}) only uses randomness realized
/// at or before t_i, which is the discrete stand-in for predictability.
struct EtaPath {
    GridFunction values;
    /// Jump time of the driving Exp(1) clock for the single-jump model
    /// (Example-style eta). NaN for other kinds. Exposed so a verifier can
    /// couple a second construction to the same driver.
    double driver_time = std::numeric_limits<double>::quiet_NaN();

    const TimeGrid& grid() const { return values.grid(); }
    double operator[](std::size_t i) const { return values[i]; }
    double at(double t) const { return values(t); }
};

enum class EtaKind {
    kConstant,
    kRandomConstant,
    kSingleJump,
    kTwoStateMarkov,
    kClampedDiffusion,
};

inline std::string to_string(EtaKind k) {
    switch (k) {
        case EtaKind::kConstant: return "constant";
        case EtaKind::kRandomConstant: return "random-constant";
        case EtaKind::kSingleJump: return "single-jump";
        case EtaKind::kTwoStateMarkov: return "two-state-markov";
        case EtaKind::kClampedDiffusion: return "clamped-diffusion";
    }
    return "?";
}

/// Description of a bounded stochastic factor process. Every sampled path
/// stays inside [L, U] cell by cell.
class EtaModel {
  public:
    static EtaModel constant(double value, Bounds b) {
        EtaModel m(EtaKind::kConstant, b);
        if (!b.contains(value))
            throw std::invalid_argument("eta constant outside [L, U]");
        m.levels_ = {value};
        m.probs_ = {1.0};
        return m;
    }

    static EtaModel random_constant(std::vector<double> values,
                                    std::vector<double> probs, Bounds b) {
        EtaModel m(EtaKind::kRandomConstant, b);
        if (values.empty() || values.size() != probs.size())
            throw std::invalid_argument("eta random-constant: bad law");
        double sum = 0.0;
        for (std::size_t i = 0; i < values.size(); ++i) {
            if (!b.contains(values[i]))
                throw std::invalid_argument("eta level outside [L, U]");
            if (!(probs[i] > 0.0))
                throw std::invalid_argument("eta prob <= 0");
            sum += probs[i];
        }
        if (std::abs(sum - 1.0) > 1e-12)
            throw std::invalid_argument("eta probs must sum to 1");
        m.levels_ = std::move(values);
        m.probs_ = std::move(probs);
        return m;
    }

    /// eta_t = L + (U - L) 1{E1 < t} with E1 ~ Exp(1); with L = 1, U = 2
    /// this is exactly the nonuniqueness example's factor.
    static EtaModel single_jump(Bounds b) {
        return EtaModel(EtaKind::kSingleJump, b);
    }

    static EtaModel two_state_markov(double lo, double hi, double rate_up,
                                     double rate_down, Bounds b) {
        EtaModel m(EtaKind::kTwoStateMarkov, b);
        if (!b.contains(lo) || !b.contains(hi) || !(lo < hi))
            throw std::invalid_argument("eta markov levels invalid");
        if (!(rate_up > 0.0) || !(rate_down > 0.0))
            throw std::invalid_argument("eta markov rates must be positive");
        m.levels_ = {lo, hi};
        m.rate_up_ = rate_up;
        m.rate_down_ = rate_down;
        return m;
    }

    /// Euler-discretized OU driver mapped through a logistic into (L, U).
    static EtaModel clamped_diffusion(double mean_reversion, double vol,
                                      double y0, Bounds b) {
        EtaModel m(EtaKind::kClampedDiffusion, b);
        if (!(mean_reversion >= 0.0) || !(vol > 0.0))
            throw std::invalid_argument("eta diffusion params invalid");
        m.ou_kappa_ = mean_reversion;
        m.ou_sigma_ = vol;
        m.ou_y0_ = y0;
        return m;
    }

    EtaKind kind() const { return kind_; }
    const Bounds& bounds() const { return bounds_; }
    const std::vector<double>& levels() const { return levels_; }
    const std::vector<double>& level_probs() const { return probs_; }

    bool is_deterministic() const { return kind_ == EtaKind::kConstant; }

    /// Finite-law models expose their branches so quadrature oracles can
    /// take the outer expectation as a finite sum.
    bool has_finite_law() const {
        return kind_ == EtaKind::kConstant || kind_ == EtaKind::kRandomConstant;
    }

    double holder_alpha() const {
        return kind_ == EtaKind::kClampedDiffusion ? 0.5 : 1.0;
    }

    EtaPath sample(const TimeGrid& grid, RngStream rng) const {
        const std::size_t n = grid.n_steps();
        std::vector<double> v(n);
        EtaPath path;
        switch (kind_) {
            case EtaKind::kConstant: {
                std::fill(v.begin(), v.end(), levels_[0]);
                break;
            }
            case EtaKind::kRandomConstant: {
                const double u = rng.uniform();
                double acc = 0.0;
                double chosen = levels_.back();
                for (std::size_t i = 0; i < levels_.size(); ++i) {
                    acc += probs_[i];
                    if (u < acc) {
                        chosen = levels_[i];
                        break;
                    }
                }
                std::fill(v.begin(), v.end(), chosen);
                break;
            }
            case EtaKind::kSingleJump: {
                const double e1 = rng.exponential();
                for (std::size_t i = 0; i < n; ++i)
                    v[i] = grid.node(i) >= e1 ? bounds_.U : bounds_.L;
                path.driver_time = e1;
                break;
            }
            case EtaKind::kTwoStateMarkov: {
                const double pi_hi = rate_up_ / (rate_up_ + rate_down_);
                bool high = rng.uniform() < pi_hi;
                double t = 0.0;
                double next_switch =
                    rng.exponential() / (high ? rate_down_ : rate_up_);
                for (std::size_t i = 0; i < n; ++i) {
                    const double node = grid.node(i);
                    while (t + next_switch <= node) {
                        t += next_switch;
                        high = !high;
                        next_switch =
                            rng.exponential() / (high ? rate_down_ : rate_up_);
                    }
                    v[i] = high ? levels_[1] : levels_[0];
                }
                break;
            }
            case EtaKind::kClampedDiffusion: {
                const double h = grid.step();
                const double sh = std::sqrt(h);
                double y = ou_y0_;
                for (std::size_t i = 0; i < n; ++i) {
                    v[i] = bounds_.L +
                           (bounds_.U - bounds_.L) / (1.0 + std::exp(-y));
                    y += -ou_kappa_ * y * h + ou_sigma_ * sh * rng.normal();
                }
                break;
            }
        }
        path.values = GridFunction(grid, std::move(v));
        return path;
    }

  private:
    EtaModel(EtaKind k, Bounds b) : kind_(k), bounds_(b) {}

    EtaKind kind_;
    Bounds bounds_;
    std::vector<double> levels_;
    std::vector<double> probs_;
    double rate_up_ = 1.0;
    double rate_down_ = 1.0;
    double ou_kappa_ = 1.0;
    double ou_sigma_ = 1.0;
    double ou_y0_ = 0.0;
};

inline EtaPath sample_eta(const EtaModel& model, const TimeGrid& grid,
                          RngStream rng) {
    return model.sample(grid, rng);
}

/// Monte Carlo estimate of sup over sampled (s, t) node pairs of
/// E|eta_t - eta_s| / |t - s|^alpha. A sanity diagnostic that a model
/// satisfies the Hoelder-in-mean regularity the general solver assumes.
inline double holder_constant_estimate(const EtaModel& model,
                                       const TimeGrid& grid,
                                       std::size_t pairs, RngStream rng,
                                       std::size_t mc_paths = 512) {
    if (pairs < 100)
        throw std::invalid_argument("holder estimate: need pairs >= 100");
    const double alpha = model.holder_alpha();
    const std::size_t n_nodes = grid.n_steps();

    RngStream pair_rng = rng.fork(1);
    std::vector<std::pair<std::size_t, std::size_t>> probes;
    probes.reserve(pairs);
    for (std::size_t p = 0; p < pairs; ++p) {
        auto i = static_cast<std::size_t>(pair_rng.uniform() * n_nodes);
        auto j = static_cast<std::size_t>(pair_rng.uniform() * n_nodes);
        i = std::min(i, n_nodes - 1);
        j = std::min(j, n_nodes - 1);
        if (i == j) j = (j + 1) % n_nodes;
        probes.emplace_back(i, j);
    }

    std::vector<double> acc(pairs, 0.0);
    RngStream path_base = rng.fork(2);
    for (std::size_t s = 0; s < mc_paths; ++s) {
        const EtaPath path = model.sample(grid, path_base.fork(s));
        for (std::size_t p = 0; p < pairs; ++p)
            acc[p] += std::abs(path[probes[p].first] - path[probes[p].second]);
    }

    double sup = 0.0;
    for (std::size_t p = 0; p < pairs; ++p) {
        const double dt = std::abs(grid.node(probes[p].first) -
                                   grid.node(probes[p].second));
        const double mean = acc[p] / static_cast<double>(mc_paths);
        sup = std::max(sup, mean / std::pow(dt, alpha));
    }
    return sup;
}

}  // namespace lsilab
