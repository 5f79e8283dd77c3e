#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "lsilab/core.hpp"
#include "lsilab/cox.hpp"
#include "lsilab/eta.hpp"
#include "lsilab/fp_counting.hpp"
#include "lsilab/fp_general.hpp"

namespace lsilab {

using json = nlohmann::json;

struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

enum class SolverMode { kCounting, kGeneral };

/// One experiment: model, solver, verification and output settings.
/// Parsed from a single JSON file; everything that shapes the numbers is
/// in here plus the seed, so a config + seed pins the run.
struct ExperimentConfig {
    // model
    Bounds bounds;
    TimeGrid grid;
    json eta_spec;
    json lambda_spec;
    std::vector<double> nu_atoms{1.0};
    std::vector<double> nu_probs{1.0};

    // solver
    SolverMode mode = SolverMode::kCounting;
    double tol = 1e-5;
    std::size_t max_iter = 200;
    double damping = 0.5;
    std::size_t mc_paths = 10000;
    std::size_t max_jumps = 0;  // 0 = auto via the truncation rule
    double truncation_tail = 1e-6;
    std::size_t restarts = 1;

    // verify
    std::size_t n_paths = 100000;
    std::vector<double> probe_times;
    std::vector<std::string> tests{"projection", "clocks", "martingale"};
    double tv_tol = 0.02;
    double p_floor = 0.001;

    // output
    std::string out_dir = "out";
    std::vector<std::string> formats{"csv", "json"};

    std::uint64_t seed = 0;
    std::size_t threads = 1;

    bool wants_format(const std::string& f) const {
        for (const auto& x : formats)
            if (x == f) return true;
        return false;
    }

    JumpDistribution nu() const { return JumpDistribution(nu_atoms, nu_probs); }

    std::size_t effective_max_jumps() const {
        return max_jumps > 0 ? max_jumps
                             : poisson_truncation_level(
                                   bounds.rate_upper() * grid.horizon(),
                                   truncation_tail);
    }

    std::shared_ptr<const StateLattice> build_lattice_ptr() const {
        return std::make_shared<StateLattice>(
            build_lattice(nu(), effective_max_jumps()));
    }

    EtaModel build_eta() const {
        const std::string kind = eta_spec.value("kind", "constant");
        if (kind == "constant")
            return EtaModel::constant(require(eta_spec, "value",
                                              "model.eta.value"),
                                      bounds);
        if (kind == "random-constant")
            return EtaModel::random_constant(
                eta_spec.at("values").get<std::vector<double>>(),
                eta_spec.at("probs").get<std::vector<double>>(), bounds);
        if (kind == "single-jump") return EtaModel::single_jump(bounds);
        if (kind == "two-state-markov")
            return EtaModel::two_state_markov(
                require(eta_spec, "low", "model.eta.low"),
                require(eta_spec, "high", "model.eta.high"),
                require(eta_spec, "rate_up", "model.eta.rate_up"),
                require(eta_spec, "rate_down", "model.eta.rate_down"), bounds);
        if (kind == "clamped-diffusion")
            return EtaModel::clamped_diffusion(
                require(eta_spec, "mean_reversion",
                        "model.eta.mean_reversion"),
                require(eta_spec, "vol", "model.eta.vol"),
                eta_spec.value("y0", 0.0), bounds);
        throw ConfigError("model.eta.kind: unknown kind '" + kind + "'");
    }

    IntensitySpec build_intensity(
        std::shared_ptr<const StateLattice> lattice) const {
        const std::string form = lambda_spec.value("form", "constant");
        const auto clip = [&](double v) {
            return std::min(bounds.U, std::max(bounds.L, v));
        };
        std::vector<GridFunction> table;
        table.reserve(lattice->size());
        if (form == "constant") {
            const double v = require(lambda_spec, "value",
                                     "model.lambda.value");
            for (std::size_t x = 0; x < lattice->size(); ++x)
                table.emplace_back(grid, clip(v));
        } else if (form == "affine") {
            const double base = require(lambda_spec, "base",
                                        "model.lambda.base");
            const double slope = require(lambda_spec, "slope",
                                         "model.lambda.slope");
            for (std::size_t x = 0; x < lattice->size(); ++x)
                table.emplace_back(grid,
                                   clip(base + slope * lattice->state(x)));
        } else if (form == "sinusoid") {
            const double base = require(lambda_spec, "base",
                                        "model.lambda.base");
            const double amp = require(lambda_spec, "amplitude",
                                       "model.lambda.amplitude");
            const double freq = require(lambda_spec, "frequency",
                                        "model.lambda.frequency");
            std::vector<double> v(grid.n_steps());
            for (std::size_t j = 0; j < v.size(); ++j)
                v[j] = clip(base + amp * std::sin(freq * grid.midpoint(j)));
            for (std::size_t x = 0; x < lattice->size(); ++x)
                table.emplace_back(grid, v);
        } else if (form == "table") {
            const auto rows =
                lambda_spec.at("values")
                    .get<std::vector<std::vector<double>>>();
            if (rows.size() != lattice->size())
                throw ConfigError(
                    "model.lambda.values: need one row per lattice state (" +
                    std::to_string(lattice->size()) + ")");
            for (const auto& row : rows) table.emplace_back(grid, row);
        } else {
            throw ConfigError("model.lambda.form: unknown form '" + form +
                              "'");
        }
        return IntensitySpec(std::move(lattice), std::move(table), bounds);
    }

    CountingFpProblem counting_problem() const {
        auto lattice = build_lattice_ptr();
        const std::size_t K = lattice->max_jumps();
        return CountingFpProblem(build_eta(), build_intensity(lattice),
                                 bounds, grid, mc_paths, K, seed);
    }

    GeneralFpProblem general_problem() const {
        auto lattice = build_lattice_ptr();
        return GeneralFpProblem(build_eta(), nu(), build_intensity(lattice),
                                bounds, grid, mc_paths, damping, seed);
    }

    void validate() const {
        if (mode == SolverMode::kCounting && !nu().is_counting())
            throw ConfigError(
                "solver.mode: counting mode requires nu = delta_1");
        for (double t : probe_times)
            if (t < 0.0 || t > grid.horizon())
                throw ConfigError("verify.probe_times: outside [0, T]");
        (void)build_eta();
        (void)build_intensity(build_lattice_ptr());
    }

    static double require(const json& j, const char* key,
                          const std::string& path) {
        if (!j.contains(key)) throw ConfigError(path + ": missing");
        return j.at(key).get<double>();
    }
};

inline ExperimentConfig parse_config(const json& j) {
    ExperimentConfig c;
    try {
        const json& model = j.at("model");
        const json& b = model.at("bounds");
        c.bounds = Bounds(b.at("L").get<double>(), b.at("U").get<double>());
        const json& g = model.at("grid");
        c.grid = TimeGrid(g.at("horizon").get<double>(),
                          g.at("n_steps").get<std::size_t>());
        c.eta_spec = model.at("eta");
        c.lambda_spec = model.at("lambda");
        if (model.contains("nu")) {
            c.nu_atoms = model.at("nu").at("atoms").get<std::vector<double>>();
            c.nu_probs = model.at("nu").at("probs").get<std::vector<double>>();
        }

        const json& s = j.at("solver");
        const std::string mode = s.value("mode", "counting");
        if (mode == "counting")
            c.mode = SolverMode::kCounting;
        else if (mode == "general")
            c.mode = SolverMode::kGeneral;
        else
            throw ConfigError("solver.mode: unknown mode '" + mode + "'");
        c.tol = s.value("tol", 1e-5);
        c.max_iter = s.value("max_iter", std::size_t{200});
        c.damping = s.value("damping", 0.5);
        c.mc_paths = s.value("mc_paths", std::size_t{10000});
        if (s.contains("max_jumps") && s.at("max_jumps").is_number())
            c.max_jumps = s.at("max_jumps").get<std::size_t>();
        c.truncation_tail = s.value("truncation_tail", 1e-6);
        c.restarts = s.value("restarts", std::size_t{1});

        if (j.contains("verify")) {
            const json& v = j.at("verify");
            c.n_paths = v.value("n_paths", std::size_t{100000});
            if (v.contains("probe_times"))
                c.probe_times =
                    v.at("probe_times").get<std::vector<double>>();
            if (v.contains("tests"))
                c.tests = v.at("tests").get<std::vector<std::string>>();
            c.tv_tol = v.value("tv_tol", 0.02);
            c.p_floor = v.value("p_floor", 0.001);
        }
        if (c.probe_times.empty()) c.probe_times = {c.grid.horizon()};

        if (j.contains("output")) {
            c.out_dir = j.at("output").value("directory", "out");
            if (j.at("output").contains("formats"))
                c.formats = j.at("output")
                                .at("formats")
                                .get<std::vector<std::string>>();
        }
        c.seed = j.value("seed", std::uint64_t{0});
        c.threads = j.value("threads", std::size_t{1});
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
    c.validate();
    return c;
}

inline ExperimentConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config: cannot open '" + path + "'");
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config: parse error: ") + e.what());
    }
    return parse_config(j);
}

/// Canonical JSON of the sections that determine the numbers. The hash of
/// this object stamps every artifact, so mismatched inputs are refused.
inline json semantic_json(const ExperimentConfig& c) {
    json j;
    j["model"]["bounds"] = {{"L", c.bounds.L}, {"U", c.bounds.U}};
    j["model"]["grid"] = {{"horizon", c.grid.horizon()},
                          {"n_steps", c.grid.n_steps()}};
    j["model"]["eta"] = c.eta_spec;
    j["model"]["lambda"] = c.lambda_spec;
    j["model"]["nu"] = {{"atoms", c.nu_atoms}, {"probs", c.nu_probs}};
    j["solver"] = {{"mode", c.mode == SolverMode::kCounting ? "counting"
                                                            : "general"},
                   {"tol", c.tol},
                   {"max_iter", c.max_iter},
                   {"damping", c.damping},
                   {"mc_paths", c.mc_paths},
                   {"max_jumps", c.max_jumps},
                   {"truncation_tail", c.truncation_tail},
                   {"restarts", c.restarts}};
    j["seed"] = c.seed;
    return j;
}

inline std::uint64_t config_hash(const ExperimentConfig& c) {
    const std::string dump = semantic_json(c).dump();
    // FNV-1a 64
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char ch : dump) {
        h ^= ch;
        h *= 0x100000001b3ULL;
    }
    return h;
}

/// Full round-trippable form (semantic sections plus verify/output).
inline json to_json(const ExperimentConfig& c) {
    json j = semantic_json(c);
    j["verify"] = {{"n_paths", c.n_paths},
                   {"probe_times", c.probe_times},
                   {"tests", c.tests},
                   {"tv_tol", c.tv_tol},
                   {"p_floor", c.p_floor}};
    j["output"] = {{"directory", c.out_dir}, {"formats", c.formats}};
    j["threads"] = c.threads;
    return j;
}

}  // namespace lsilab
