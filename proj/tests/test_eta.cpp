#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "lsilab/eta.hpp"
#include "lsilab/stats.hpp"

using namespace lsilab;

namespace {
const Bounds kBand(1.0, 2.0);
const TimeGrid kGrid(1.0, 64);
}  // namespace

TEST_CASE("constant model produces the constant path") {
    auto m = EtaModel::constant(1.5, kBand);
    auto p = m.sample(kGrid, RngStream(1, 0));
    for (std::size_t i = 0; i < kGrid.n_steps(); ++i) REQUIRE(p[i] == 1.5);
    REQUIRE_THROWS_AS(EtaModel::constant(2.5, kBand), std::invalid_argument);
}

TEST_CASE("single-jump path is low before the driver and high after") {
    auto m = EtaModel::single_jump(kBand);
    for (std::uint64_t s = 0; s < 50; ++s) {
        auto p = m.sample(kGrid, RngStream(7, s));
        REQUIRE(std::isfinite(p.driver_time));
        for (std::size_t i = 0; i < kGrid.n_steps(); ++i) {
            const double expect =
                kGrid.node(i) >= p.driver_time ? kBand.U : kBand.L;
            REQUIRE(p[i] == expect);
        }
    }
}

TEST_CASE("single-jump driver is Exp(1)") {
    auto m = EtaModel::single_jump(kBand);
    std::vector<double> drivers;
    RngStream base(11, 0);
    for (std::size_t i = 0; i < 10000; ++i)
        drivers.push_back(m.sample(kGrid, base.fork(i)).driver_time);
    const double d = stats::ks_statistic(drivers, stats::exp1_cdf);
    REQUIRE(d < 0.02);
}

TEST_CASE("random-constant frequencies match the law") {
    auto m = EtaModel::random_constant({1.0, 2.0}, {0.5, 0.5}, kBand);
    RngStream base(3, 0);
    std::size_t n_high = 0;
    const std::size_t n = 10000;
    for (std::size_t i = 0; i < n; ++i) {
        auto p = m.sample(kGrid, base.fork(i));
        REQUIRE((p[0] == 1.0 || p[0] == 2.0));
        for (std::size_t j = 1; j < kGrid.n_steps(); ++j)
            REQUIRE(p[j] == p[0]);
        if (p[0] == 2.0) ++n_high;
    }
    // Bernoulli(1/2): 3 sigma around n/2
    const double se = std::sqrt(0.25 * n);
    REQUIRE(std::abs(static_cast<double>(n_high) - 0.5 * n) < 3.0 * se);
}

TEST_CASE("every model kind respects the band on every cell") {
    std::vector<EtaModel> zoo = {
        EtaModel::constant(1.2, kBand),
        EtaModel::random_constant({1.0, 1.5, 2.0}, {0.2, 0.5, 0.3}, kBand),
        EtaModel::single_jump(kBand),
        EtaModel::two_state_markov(1.1, 1.9, 2.0, 3.0, kBand),
        EtaModel::clamped_diffusion(1.0, 1.5, 0.0, kBand),
    };
    RngStream base(19, 0);
    for (const auto& m : zoo)
        for (std::size_t i = 0; i < 200; ++i) {
            auto p = m.sample(kGrid, base.fork(i * 16 + 1));
            REQUIRE(p.values.min_value() >= kBand.L);
            REQUIRE(p.values.max_value() <= kBand.U);
        }
}

TEST_CASE("two-state markov switches at plausible frequency") {
    auto m = EtaModel::two_state_markov(1.0, 2.0, 4.0, 4.0, kBand);
    RngStream base(23, 0);
    std::size_t switches = 0, cells = 0;
    for (std::size_t i = 0; i < 500; ++i) {
        auto p = m.sample(kGrid, base.fork(i));
        for (std::size_t j = 1; j < kGrid.n_steps(); ++j) {
            ++cells;
            if (p[j] != p[j - 1]) ++switches;
        }
    }
    // switching hazard 4 per unit time, cell width 1/64
    const double expect = 4.0 / 64.0;
    const double freq = static_cast<double>(switches) / cells;
    REQUIRE(freq > 0.5 * expect);
    REQUIRE(freq < 1.5 * expect);
}

TEST_CASE("holder estimate: constant model has zero modulus") {
    auto m = EtaModel::constant(1.5, kBand);
    REQUIRE(holder_constant_estimate(m, kGrid, 200, RngStream(1, 1)) == 0.0);
}

TEST_CASE("holder estimate: single-jump modulus stays near its exact bound") {
    // E|eta_t - eta_s| = (U-L) |e^{-s} - e^{-t}| <= (U-L) |t-s| = |t-s|
    auto m = EtaModel::single_jump(kBand);
    const double c =
        holder_constant_estimate(m, kGrid, 300, RngStream(2, 1), 2000);
    REQUIRE(c <= 1.0 + 0.15);
    REQUIRE(c > 0.5);
}

TEST_CASE("holder estimate: clamped diffusion is stable under refinement") {
    auto m = EtaModel::clamped_diffusion(1.0, 1.5, 0.0, kBand);
    const TimeGrid coarse(1.0, 64), fine(1.0, 128);
    const double c1 =
        holder_constant_estimate(m, coarse, 400, RngStream(5, 1), 4000);
    const double c2 =
        holder_constant_estimate(m, fine, 400, RngStream(5, 1), 4000);
    REQUIRE(std::isfinite(c1));
    REQUIRE(std::abs(c1 - c2) / c1 < 0.10);
    REQUIRE(m.holder_alpha() == 0.5);
}
