#pragma once

#include <algorithm>
#include <cinttypes>
#include <cmath>
#include <limits>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "lsilab/config.hpp"
#include "lsilab/fp_counting.hpp"
#include "lsilab/li_model.hpp"
#include "lsilab/verify.hpp"

namespace lsilab::io {

struct ProvenanceError : std::runtime_error {
    explicit ProvenanceError(const std::string& msg)
        : std::runtime_error(msg) {}
};

/// Shortest round-trippable decimal form; fixed format keeps artifacts
/// byte-identical across runs.
inline std::string fmt(double x) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", x);
    return buf;
}

inline std::string stamp(std::uint64_t hash, std::uint64_t seed) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "# lsi-lab config=%016" PRIx64 " seed=%" PRIu64,
                  hash, seed);
    return buf;
}

inline void check_stamp(const std::string& line, std::uint64_t expected_hash,
                        const std::string& path) {
    std::uint64_t h = 0;
    if (std::sscanf(line.c_str(), "# lsi-lab config=%" SCNx64, &h) != 1)
        throw ProvenanceError(path + ": missing provenance stamp");
    if (h != expected_hash) {
        char buf[64];
        std::snprintf(buf, sizeof(buf), "%016" PRIx64, expected_hash);
        throw ProvenanceError(path +
                              ": artifact was produced under a different "
                              "config (expected config=" +
                              std::string(buf) + ")");
    }
}

inline std::ofstream open_out(const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write '" + path + "'");
    return out;
}

// --- gamma ------------------------------------------------------------------

inline void write_gamma_csv(const std::string& path, const GammaFamily& gamma,
                            std::uint64_t hash, std::uint64_t seed) {
    auto out = open_out(path);
    out << stamp(hash, seed) << "\n";
    out << "state,t,gamma\n";
    const TimeGrid& grid = gamma.grid();
    for (std::size_t x = 0; x < gamma.size(); ++x)
        for (std::size_t j = 0; j < grid.n_steps(); ++j)
            out << fmt(gamma.lattice().state(x)) << ',' << fmt(grid.node(j))
                << ',' << fmt(gamma.at(x).values()[j]) << "\n";
}

inline GammaFamily read_gamma_csv(const std::string& path,
                                  std::uint64_t expected_hash,
                                  std::shared_ptr<const StateLattice> lattice,
                                  const TimeGrid& grid, const Bounds& bounds) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read '" + path + "'");
    std::string line;
    std::getline(in, line);
    check_stamp(line, expected_hash, path);
    std::getline(in, line);  // header

    std::vector<std::vector<double>> values(
        lattice->size(), std::vector<double>(grid.n_steps()));
    std::vector<std::size_t> seen(lattice->size(), 0);
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        double state, t, g;
        if (std::sscanf(line.c_str(), "%lf,%lf,%lf", &state, &t, &g) != 3)
            throw std::runtime_error(path + ": malformed row '" + line + "'");
        const std::size_t x = lattice->index_of(state);
        const std::size_t j = grid.cell_index(t);
        values[x][j] = g;
        ++seen[x];
    }
    for (std::size_t x = 0; x < lattice->size(); ++x)
        if (seen[x] != grid.n_steps())
            throw std::runtime_error(path + ": incomplete leverage table");
    std::vector<GridFunction> table;
    table.reserve(values.size());
    for (auto& v : values) table.emplace_back(grid, std::move(v));
    return GammaFamily(std::move(lattice), std::move(table), bounds);
}

// --- other artifacts --------------------------------------------------------

inline void write_residuals_csv(const std::string& path,
                                const FpSolution& sol, std::uint64_t hash,
                                std::uint64_t seed) {
    auto out = open_out(path);
    out << stamp(hash, seed) << "\n";
    out << "level,iteration,weighted,unweighted\n";
    for (std::size_t m = 0; m < sol.traces.size(); ++m)
        for (std::size_t i = 0; i < sol.traces[m].unweighted.size(); ++i)
            out << m << ',' << i << ',' << fmt(sol.traces[m].weighted[i])
                << ',' << fmt(sol.traces[m].unweighted[i]) << "\n";
}

inline void write_paths_csv(const std::string& path, const PathEnsemble& ens,
                            const StateLattice& lattice, std::uint64_t hash,
                            std::uint64_t seed) {
    auto out = open_out(path);
    out << stamp(hash, seed) << "\n";
    out << "path_id,k,tau,jump,state_after\n";
    for (std::size_t i = 0; i < ens.size(); ++i) {
        const auto& p = ens.paths[i];
        for (std::size_t k = 0; k < p.n_jumps(); ++k)
            out << i << ',' << (k + 1) << ',' << fmt(p.times[k]) << ','
                << fmt(p.sizes[k]) << ','
                << fmt(lattice.state(p.states_after[k])) << "\n";
    }
}

inline void write_marginals_csv(const std::string& path,
                                const MarginalCurve& curve,
                                const StateLattice& lattice,
                                std::uint64_t hash, std::uint64_t seed) {
    auto out = open_out(path);
    out << stamp(hash, seed) << "\n";
    out << "t,state,prob\n";
    for (std::size_t node = 0; node < curve.pmf.size(); ++node)
        for (std::size_t x = 0; x < lattice.size(); ++x)
            out << fmt(curve.grid.node(node)) << ',' << fmt(lattice.state(x))
                << ',' << fmt(curve.pmf[node][x]) << "\n";
}

inline json report_to_json(const TestReport& rep, std::uint64_t hash,
                           std::uint64_t seed) {
    json j;
    j["name"] = rep.name;
    j["statistic"] = rep.statistic;
    j["threshold"] = rep.threshold;
    j["pass"] = rep.pass;
    j["n_samples"] = rep.n_samples;
    j["details"] = rep.details;
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%016" PRIx64, hash);
    j["config"] = buf;
    j["seed"] = seed;
    return j;
}

inline void write_reports_jsonl(const std::string& path,
                                const std::vector<TestReport>& reports,
                                std::uint64_t hash, std::uint64_t seed) {
    auto out = open_out(path);
    for (const auto& rep : reports)
        out << report_to_json(rep, hash, seed).dump() << "\n";
}

inline void write_demo_curves_csv(const std::string& path,
                                  const NonuniquenessResult& demo,
                                  std::uint64_t hash, std::uint64_t seed) {
    auto out = open_out(path);
    out << stamp(hash, seed) << "\n";
    out << "construction,rank,first_arrival\n";
    auto cox = demo.first_arrivals_cox;
    auto poi = demo.first_arrivals_poisson;
    std::sort(cox.begin(), cox.end());
    std::sort(poi.begin(), poi.end());
    for (std::size_t i = 0; i < cox.size(); ++i)
        out << "cox," << i << ',' << fmt(cox[i]) << "\n";
    for (std::size_t i = 0; i < poi.size(); ++i)
        out << "driver-reuse," << i << ',' << fmt(poi[i]) << "\n";
}

inline void write_gamma_se_csv(const std::string& path,
                               const FpSolution& sol, const TimeGrid& grid,
                               const StateLattice& lattice,
                               std::uint64_t hash, std::uint64_t seed) {
    auto out = open_out(path);
    out << stamp(hash, seed) << "\n";
    out << "state,t,se\n";
    for (std::size_t x = 0; x < sol.gamma_se.size(); ++x)
        for (std::size_t j = 0; j < sol.gamma_se[x].size(); ++j)
            out << fmt(lattice.state(x)) << ',' << fmt(grid.node(j)) << ','
                << fmt(std::isfinite(sol.gamma_se[x][j]) ? sol.gamma_se[x][j]
                                                         : -1.0)
                << "\n";
}

inline std::vector<std::vector<double>> read_gamma_se_csv(
    const std::string& path, std::uint64_t expected_hash,
    const StateLattice& lattice, const TimeGrid& grid) {
    std::ifstream in(path);
    if (!in) return {};
    std::string line;
    std::getline(in, line);
    check_stamp(line, expected_hash, path);
    std::getline(in, line);
    std::vector<std::vector<double>> se(
        lattice.size(), std::vector<double>(grid.n_steps(), 0.0));
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        double state, t, v;
        if (std::sscanf(line.c_str(), "%lf,%lf,%lf", &state, &t, &v) != 3)
            throw std::runtime_error(path + ": malformed row");
        se[lattice.index_of(state)][grid.cell_index(t)] =
            v < 0.0 ? std::numeric_limits<double>::infinity() : v;
    }
    return se;
}

inline void write_word_stats_csv(const std::string& path,
                                 const FpSolution& sol, std::uint64_t hash,
                                 std::uint64_t seed) {
    auto out = open_out(path);
    out << stamp(hash, seed) << "\n";
    out << "max_words_per_sample,mean_dropped_word_weight,restart_disagreement\n";
    out << sol.max_words_per_sample << ','
        << fmt(sol.mean_dropped_word_weight) << ','
        << fmt(sol.restart_disagreement) << "\n";
}

/// Empirical state occupancies of the ensemble at the probe times.
inline void write_empirical_pmf_csv(const std::string& path,
                                    const PathEnsemble& ens,
                                    const StateLattice& lattice,
                                    const std::vector<double>& probe_times,
                                    std::uint64_t hash, std::uint64_t seed) {
    auto out = open_out(path);
    out << stamp(hash, seed) << "\n";
    out << "t,state,prob\n";
    for (double t : probe_times) {
        std::vector<double> counts(lattice.size(), 0.0);
        double usable = 0.0;
        for (const auto& p : ens.paths) {
            if (p.lattice_exit && p.exit_time <= t) continue;
            counts[p.ordinal_at(t)] += 1.0;
            usable += 1.0;
        }
        for (std::size_t x = 0; x < lattice.size(); ++x)
            out << fmt(t) << ',' << fmt(lattice.state(x)) << ','
                << fmt(usable > 0.0 ? counts[x] / usable : 0.0) << "\n";
    }
}

/// Human-readable one-liner per report for the summary table.
inline std::string report_line(const TestReport& rep) {
    std::ostringstream os;
    os << (rep.pass ? "PASS " : "FAIL ") << rep.name << "  statistic="
       << rep.statistic << " threshold=" << rep.threshold
       << " n=" << rep.n_samples;
    return os.str();
}

}  // namespace lsilab::io
