#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <memory>
#include <vector>

#include "lsilab/fp_general.hpp"

using namespace lsilab;

namespace {

const Bounds kBand(1.0, 2.0);

std::shared_ptr<const StateLattice> lattice_of(const JumpDistribution& nu,
                                               std::size_t K) {
    return std::make_shared<StateLattice>(build_lattice(nu, K));
}

EtaPath sinusoid_eta(const TimeGrid& g) {
    std::vector<double> v(g.n_steps());
    for (std::size_t j = 0; j < v.size(); ++j)
        v[j] = 1.5 + 0.45 * std::sin(5.0 * g.midpoint(j));
    EtaPath p;
    p.values = GridFunction(g, v);
    return p;
}

}  // namespace

TEST_CASE("frozen word times chain through the prefix states") {
    TimeGrid grid(1.0, 64);
    JumpDistribution nu({1.0, -1.0}, {0.7, 0.3});
    auto lat = lattice_of(nu, 3);
    auto lam = IntensitySpec::constant(lat, grid, 1.0, kBand);
    auto gamma = GammaFamily::constant(lat, grid, 1.5, kBand);
    EtaPath eta;
    eta.values = GridFunction(grid, 1.5);  // rate = 1 everywhere

    const auto fwt = frozen_word_times({1.0, -1.0}, eta, {0.2, 0.3, 0.1},
                                       gamma, lam);
    REQUIRE(fwt.times[0] == 0.0);
    REQUIRE(fwt.times[1] == Catch::Approx(0.2).margin(1e-13));
    REQUIRE(fwt.times[2] == Catch::Approx(0.5).margin(1e-13));
    REQUIRE(fwt.times[3] == Catch::Approx(0.6).margin(1e-13));
}

TEST_CASE("unit jumps: estimator reduces to the counting estimator") {
    TimeGrid grid(1.0, 48);
    const auto nu = JumpDistribution::unit();
    const std::size_t K = 6;
    auto lat = lattice_of(nu, K);
    auto lam = IntensitySpec::constant(lat, grid, 1.1, kBand);
    auto eta_model = EtaModel::random_constant({1.0, 2.0}, {0.5, 0.5}, kBand);

    const auto samples =
        draw_fp_samples(eta_model, grid, 3000, K + 1, RngStream(5, 0));
    auto gamma = GammaFamily::constant(lat, grid, 1.4, kBand);

    SolveOptions opt;
    const auto general = estimate_fg_general_all(samples, lam, nu, gamma, opt,
                                                 1u << 20);

    for (std::size_t m = 0; m <= 2; ++m) {
        std::vector<GridFunction> prior;
        for (std::size_t i = 0; i < m; ++i) prior.push_back(gamma.at(i));
        const auto tau = frozen_level_times(samples, lam, prior, m);
        const auto counting =
            estimate_fg_at(samples, lam.at(m), gamma.at(m), tau, opt);
        for (std::size_t j = 0; j < grid.n_steps(); ++j) {
            REQUIRE(general.mass[m][j] == counting.mass[j]);
            REQUIRE(general.g[m][j] ==
                    Catch::Approx(counting.g[j]).margin(1e-10));
            REQUIRE(general.f[m][j] ==
                    Catch::Approx(counting.f[j]).margin(1e-10));
        }
    }
}

TEST_CASE("sum-zero words of a signed law are enumerated with their weights") {
    // nu = {+1: 0.7, -1: 0.3}, K = 3: the words landing on 0 are the empty
    // word and the two transpositions of (+1, -1), weights 1 and 0.21.
    TimeGrid grid(1.0, 32);
    JumpDistribution nu({1.0, -1.0}, {0.7, 0.3});
    auto lat = lattice_of(nu, 3);
    auto lam = IntensitySpec::constant(lat, grid, 1.0, kBand);
    auto gamma = GammaFamily::constant(lat, grid, 1.5, kBand);

    EtaPath det = sinusoid_eta(grid);
    FpSampleSet samples;
    samples.grid = grid;
    samples.etas.push_back(det);
    samples.clocks.push_back({0.25, 0.10, 0.20, 5.0});

    SolveOptions opt;
    opt.min_mass = 1;
    const auto est =
        estimate_fg_general_all(samples, lam, nu, gamma, opt, 1u << 20);

    const std::size_t zero = lat->index_of(0.0);
    // expected value assembled by hand from the three words
    const auto survival = [&](double from, double to, std::size_t ord) {
        double acc = 0.0;
        for (std::size_t j = 0; j < grid.n_steps(); ++j) {
            const double lo = std::max(from, grid.node(j));
            const double hi = std::min(to, grid.node(j + 1));
            if (hi > lo)
                acc += det[j] * lam.at(ord)[j] / gamma.at(ord)[j] * (hi - lo);
        }
        return std::exp(-acc);
    };
    const auto wt = [&](const std::vector<double>& word, double prob,
                        double t) -> double {
        const auto fwt =
            frozen_word_times(word, det, samples.clocks[0], gamma, lam);
        const double arrive = fwt.times[word.size()];
        if (!(arrive < t)) return 0.0;
        return prob * survival(arrive, t, zero);
    };
    for (std::size_t j : {std::size_t{8}, std::size_t{20}, std::size_t{31}}) {
        const double t = grid.midpoint(j);
        const double expect = wt({}, 1.0, t) + wt({1.0, -1.0}, 0.21, t) +
                              wt({-1.0, 1.0}, 0.21, t);
        REQUIRE(est.g[zero][j] == Catch::Approx(expect).epsilon(1e-10));
        REQUIRE(est.f[zero][j] ==
                Catch::Approx(expect * det[j]).epsilon(1e-10));
    }
}

TEST_CASE("constant factor: f = c g on every state and the solve is exact") {
    TimeGrid grid(1.0, 32);
    JumpDistribution nu({1.0, -1.0}, {0.6, 0.4});
    auto lat = lattice_of(nu, 4);
    auto lam = IntensitySpec::constant(lat, grid, 1.2, kBand);
    auto eta_model = EtaModel::constant(1.7, kBand);

    GeneralFpProblem prob(eta_model, nu, lam, kBand, grid, 2000, 1.0, 3);
    const auto samples = prob.draw_samples();
    auto gamma = GammaFamily::constant(lat, grid, 1.3, kBand);
    SolveOptions opt;
    const auto est = estimate_fg_general_all(samples, lam, nu, gamma, opt,
                                             1u << 20);
    for (std::size_t x = 0; x < lat->size(); ++x)
        for (std::size_t j = 0; j < grid.n_steps(); ++j)
            if (est.g[x][j] > 0.0)
                REQUIRE(est.f[x][j] / est.g[x][j] ==
                        Catch::Approx(1.7).margin(1e-12));

    // undamped iteration lands on the constant immediately
    const auto sol = solve_system(prob, 1e-9, 10);
    for (std::size_t x = 0; x < lat->size(); ++x)
        for (double v : sol.gamma.at(x).values())
            if (sol.traces[x].first_trusted_cell < grid.n_steps())
                REQUIRE(v == Catch::Approx(1.7).margin(1e-12));
}

TEST_CASE("unit jumps through the system solver match the counting solver") {
    TimeGrid grid(1.0, 48);
    const auto nu = JumpDistribution::unit();
    const std::size_t K = 6;
    auto lat = lattice_of(nu, K);
    auto lam = IntensitySpec::constant(lat, grid, 1.0, kBand);
    auto eta_model = EtaModel::random_constant({1.0, 2.0}, {0.5, 0.5}, kBand);

    CountingFpProblem cp(eta_model, lam, kBand, grid, 2000, K, 77);
    const auto counting = solve_all_levels(cp, 1e-8, 300);

    GeneralFpProblem gp(eta_model, nu, lam, kBand, grid, 2000, 0.5, 77);
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
    REQUIRE(worst < 1e-6);
}

TEST_CASE("empty word oracle equals the direct exponential formula") {
    TimeGrid grid(1.0, 128);
    JumpDistribution nu({1.0, -1.0}, {0.7, 0.3});
    auto lat = lattice_of(nu, 3);
    auto lam = IntensitySpec::constant(lat, grid, 1.3, kBand);
    auto gamma = GammaFamily::constant(lat, grid, 1.6, kBand);
    const EtaPath det = sinusoid_eta(grid);

    const std::size_t zero = lat->index_of(0.0);
    for (double t : {0.25, 0.5, 0.9}) {
        const auto v = theta_xi_oracle(zero, {}, gamma, lam, det, t);
        double integral = 0.0;
        const std::size_t cell = grid.cell_index(t);
        for (std::size_t j = 0; j < cell; ++j)
            integral += det[j] * 1.3 / 1.6 * grid.step();
        integral += det[cell] * 1.3 / 1.6 * (t - grid.node(cell));
        const double direct = det.values(t) * std::exp(-integral);
        REQUIRE(v.value == Catch::Approx(direct).epsilon(1e-10));
        REQUIRE(v.theta * v.xi ==
                Catch::Approx(std::exp(-integral)).epsilon(1e-10));
    }
}

TEST_CASE("theta and xi respect the analytic band") {
    TimeGrid grid(1.0, 256);
    JumpDistribution nu({1.0, -1.0}, {0.7, 0.3});
    auto lat = lattice_of(nu, 4);
    auto lam = IntensitySpec::constant(lat, grid, 1.4, kBand);
    auto gamma = GammaFamily::constant(lat, grid, 1.2, kBand);
    const EtaPath det = sinusoid_eta(grid);
    const double T = grid.horizon();
    const double up = kBand.rate_upper(), lo = kBand.rate_lower();

    const std::vector<std::vector<double>> words = {
        {}, {1.0}, {1.0, -1.0}, {1.0, 1.0, -1.0}, {-1.0, 1.0, 1.0, -1.0}};
    for (const auto& w : words) {
        double sum = 0.0;
        for (double a : w) sum += a;
        const std::size_t target = lat->index_of(sum);
        double factorial = 1.0;
        for (std::size_t i = 1; i <= w.size(); ++i)
            factorial *= static_cast<double>(i);
        for (double t : {0.3, 0.6, 0.95}) {
            const auto v = theta_xi_oracle(target, w, gamma, lam, det, t);
            REQUIRE(v.theta >= 1.0);
            REQUIRE(v.theta <= std::exp(up * (T - t)) * (1.0 + 1e-9));
            const double k = static_cast<double>(w.size());
            const double lower = std::pow(lo, k) * std::exp(-up * T) *
                                 std::pow(t, k) / factorial;
            const double upper = std::pow(up, k) * std::exp(-lo * T) *
                                 std::pow(T, k) / factorial;
            REQUIRE(v.xi >= lower * (1.0 - 1e-6));
            REQUIRE(v.xi <= upper * (1.0 + 1e-6));
        }
    }
}

TEST_CASE("monte carlo estimator agrees with the word-sum oracle") {
    TimeGrid grid(1.0, 64);
    JumpDistribution nu({1.0, -1.0}, {0.7, 0.3});
    const std::size_t K = 5;
    auto lat = lattice_of(nu, K);
    auto lam = IntensitySpec::constant(lat, grid, 1.2, kBand);
    auto gamma = GammaFamily::constant(lat, grid, 1.5, kBand);
    const EtaPath det = sinusoid_eta(grid);

    FpSampleSet samples;
    samples.grid = grid;
    RngStream base(31, 0);
    const std::size_t S = 20000;
    for (std::size_t i = 0; i < S; ++i) {
        samples.etas.push_back(det);
        RngStream cl = base.fork(i).fork(detail::kTagClocks);
        std::vector<double> e(K + 1);
        for (double& v : e) v = cl.exponential();
        samples.clocks.push_back(std::move(e));
    }

    SolveOptions opt;
    const auto est = estimate_fg_general_all(samples, lam, nu, gamma, opt,
                                             1u << 20, true);
    const std::vector<std::pair<EtaPath, double>> branches = {{det, 1.0}};
    for (double state : {0.0, 1.0, -1.0, 2.0}) {
        const std::size_t x = lat->index_of(state);
        for (std::size_t j : {std::size_t{30}, std::size_t{60}}) {
            const double t = grid.midpoint(j);
            const auto [f_or, g_or] =
                oracle_fg_general(x, gamma, lam, nu, branches, t, K);
            if (est.mass[x][j] < 200) continue;
            const double mc = est.f[x][j] / est.g[x][j];
            REQUIRE(std::abs(mc - f_or / g_or) < 3.0 * est.se[x][j] + 2e-3);
        }
    }
}

TEST_CASE("system solve matches the oracle fixed point at the probes") {
    const TimeGrid grid(1.0, 64);
    JumpDistribution nu({1.0, -1.0}, {0.7, 0.3});
    const std::size_t K = 5;
    auto lat = lattice_of(nu, K);
    auto lam = IntensitySpec::constant(lat, grid, 1.0, kBand);
    auto eta_model = EtaModel::random_constant({1.0, 2.0}, {0.5, 0.5}, kBand);

    GeneralFpProblem prob(eta_model, nu, lam, kBand, grid, 20000, 0.5, 333);
    const auto sol = solve_system(prob, 1e-7, 200);

    const TimeGrid fine(1.0, 1024);
    auto lam_fine = IntensitySpec::constant(lat, fine, 1.0, kBand);
    EtaPath lo, hi;
    lo.values = GridFunction(fine, 1.0);
    hi.values = GridFunction(fine, 2.0);
    const std::vector<std::pair<EtaPath, double>> branches = {{lo, 0.5},
                                                              {hi, 0.5}};
    const auto oracle = solve_system_oracle(lam_fine, nu, branches, kBand, 0.5,
                                            1e-10, 400, K);

    const double h = grid.step();
    for (double state : {0.0, 1.0, -1.0}) {
        const std::size_t x = lat->index_of(state);
        for (double t : {0.25, 0.5, 0.75}) {
            const std::size_t cell = grid.cell_index(t);
            if (cell < sol.traces[x].first_trusted_cell) continue;
            const double probe = grid.midpoint(cell);
            const double mc = sol.gamma.at(x)(probe);
            const double orv = oracle.at(x)(probe);
            const double drift =
                std::abs(oracle.at(x)(std::min(1.0, probe + h)) -
                         oracle.at(x)(std::max(0.0, probe - h)));
            const double tol = std::max(3.0 * sol.gamma_se[x][cell], drift);
            INFO("state " << state << " t " << t << " mc " << mc << " oracle "
                          << orv << " tol " << tol);
            REQUIRE(std::abs(mc - orv) <= tol);
        }
    }
}

TEST_CASE("multistart restarts agree on a well-behaved problem") {
    TimeGrid grid(1.0, 32);
    JumpDistribution nu({1.0, -1.0}, {0.7, 0.3});
    auto lat = lattice_of(nu, 4);
    auto lam = IntensitySpec::constant(lat, grid, 1.0, kBand);
    auto eta_model = EtaModel::random_constant({1.0, 2.0}, {0.5, 0.5}, kBand);
    GeneralFpProblem prob(eta_model, nu, lam, kBand, grid, 4000, 0.5, 131);
    const auto sol = solve_system_multistart(prob, 1e-7, 300);
    REQUIRE(sol.restart_disagreement < 1e-5);
}

TEST_CASE("word budget overflow is reported") {
    TimeGrid grid(1.0, 16);
    JumpDistribution nu({1.0, -1.0}, {0.5, 0.5});
    auto lat = lattice_of(nu, 8);
    auto lam = IntensitySpec::constant(lat, grid, 2.0, Bounds(0.5, 2.5));
    auto eta_model = EtaModel::constant(2.0, Bounds(0.5, 2.5));
    GeneralFpProblem prob(eta_model, nu, lam, Bounds(0.5, 2.5), grid, 1000,
                          0.5, 7);
    prob.word_budget = 4;
    REQUIRE_THROWS_AS(solve_system(prob, 1e-6, 10), WordBudgetError);
}

TEST_CASE("general solve is reproducible across thread counts") {
    TimeGrid grid(1.0, 32);
    JumpDistribution nu({1.0, -1.0}, {0.7, 0.3});
    auto lat = lattice_of(nu, 4);
    auto lam = IntensitySpec::constant(lat, grid, 1.0, kBand);
    auto eta_model = EtaModel::two_state_markov(1.1, 1.9, 3.0, 3.0, kBand);
    GeneralFpProblem prob(eta_model, nu, lam, kBand, grid, 2000, 0.5, 17);

    const auto a = solve_system(prob, 1e-7, 300);
    SolveOptions opt;
    opt.threads = 3;
    const auto b = solve_system(prob, 1e-7, 300, opt);
    for (std::size_t x = 0; x < lat->size(); ++x)
        REQUIRE(a.gamma.at(x).values() == b.gamma.at(x).values());
}
