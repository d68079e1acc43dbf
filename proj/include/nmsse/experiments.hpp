// Copyright 2026 The nmsse Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// experiments.hpp - named experiment runs with CSV outputs and a JSON manifest.
//
// Exit codes: 0 all checks passed, 1 a check failed (or the run failed numerically),
// 2 usage or configuration error.

#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "nmsse/config.hpp"
#include "nmsse/ensemble.hpp"
#include "nmsse/model.hpp"
#include "nmsse/noise.hpp"
#include "nmsse/oracle.hpp"
#include "nmsse/solver.hpp"

namespace nmsse {

inline constexpr const char* kVersion = "1.0.0";

class UsageError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

struct CheckResult {
    std::string name;
    double value = 0.0;
    double threshold = 0.0;
    bool below = true;  // pass when value < threshold (else value > threshold)
    bool pass = false;
};

inline CheckResult check_below(std::string name, double value, double threshold) {
    return {std::move(name), value, threshold, true, value < threshold};
}

inline CheckResult check_above(std::string name, double value, double threshold) {
    return {std::move(name), value, threshold, false, value > threshold};
}

struct ExperimentOutcome {
    int exit_code = 0;
    std::vector<CheckResult> checks;
    std::vector<std::string> files;
    std::string error;
};

inline const std::vector<std::string>& experiment_names() {
    static const std::vector<std::string> names{"validate-noise", "trajectory",        "ensemble",
                                                "oracle",         "markov-limit",      "bargmann-identity"};
    return names;
}

/// Comma-separated output with a header row and 17 significant digits.
class CsvWriter {
public:
    CsvWriter(const std::filesystem::path& path, const std::vector<std::string>& header) : out_(path) {
        if (!out_) throw std::runtime_error("cannot open " + path.string() + " for writing");
        out_.precision(17);
        for (std::size_t k = 0; k < header.size(); ++k) out_ << (k ? "," : "") << header[k];
        out_ << '\n';
        width_ = header.size();
    }

    void row(const std::vector<double>& values) {
        if (values.size() != width_) throw std::logic_error("csv row width does not match the header");
        for (std::size_t k = 0; k < values.size(); ++k) out_ << (k ? "," : "") << values[k];
        out_ << '\n';
    }

private:
    std::ofstream out_;
    std::size_t width_ = 0;
};

namespace detail {

inline std::vector<std::string> density_header(Eigen::Index d, const std::string& prefix) {
    std::vector<std::string> h;
    for (Eigen::Index r = 0; r < d; ++r)
        for (Eigen::Index c = 0; c < d; ++c) {
            const std::string idx = std::to_string(r) + std::to_string(c);
            h.push_back(prefix + idx + "_re");
            h.push_back(prefix + idx + "_im");
        }
    return h;
}

inline void append_density(std::vector<double>& row, const ComplexMatrix& rho) {
    for (Eigen::Index r = 0; r < rho.rows(); ++r)
        for (Eigen::Index c = 0; c < rho.cols(); ++c) {
            row.push_back(rho(r, c).real());
            row.push_back(rho(r, c).imag());
        }
}

/// Smallest divisor-stride giving at most `max_points` grid points.
inline TimeGrid coarse_grid(const TimeGrid& grid, std::size_t max_points) {
    for (std::size_t s = 1; s <= std::max<std::size_t>(grid.steps, 1); ++s)
        if (grid.steps % s == 0 && grid.steps / s + 1 <= max_points) return grid.coarsened(s);
    return grid.coarsened(std::max<std::size_t>(grid.steps, 1));
}

inline TimeGrid horizon_grid(const ExperimentConfig& cfg) {
    if (!cfg.horizon) return cfg.grid;
    return TimeGrid::from_horizon(*cfg.horizon, cfg.grid.dt);
}

inline SpaceLayout require_layout(const ExperimentConfig& cfg, const std::string& experiment) {
    if (cfg.fock_cutoffs.size() != cfg.bath.modes.size() || cfg.bath.modes.empty())
        throw UsageError(experiment + " needs solver.fock_cutoffs with one cutoff per bath mode");
    SpaceLayout layout(static_cast<std::size_t>(cfg.system.dim()), cfg.fock_cutoffs);
    if (layout.total_dim() > kDefaultMaxDimension)
        throw UsageError(experiment + ": truncated total dimension " + std::to_string(layout.total_dim()) +
                         " exceeds the cap " + std::to_string(kDefaultMaxDimension));
    return layout;
}

inline StateVector normalized_initial(const ExperimentConfig& cfg) {
    return cfg.initial_state / cfg.initial_state.norm();
}

inline EnsembleConfig ensemble_config(const ExperimentConfig& cfg, const TimeGrid& grid) {
    EnsembleConfig e;
    e.n_trajectories = cfg.n_trajectories;
    e.master_seed = cfg.master_seed;
    e.closure = cfg.closure;
    e.noise = cfg.noise;
    e.grid = grid;
    e.psi0 = normalized_initial(cfg);
    e.fock_cutoffs = cfg.fock_cutoffs;
    e.workers = cfg.workers;
    e.solver.substeps = cfg.substeps;
    return e;
}

/// Oracle reference density on `grid`: pure vacuum bath at T = 0, sampled thermal mixture at T > 0.
/// The thermal sampler draws from streams (master_seed + 1, k).
inline std::vector<ComplexMatrix> oracle_reference(const ExperimentConfig& cfg, const TimeGrid& grid,
                                                   double& max_leak) {
    const SpaceLayout layout = require_layout(cfg, "oracle");
    const StateVector psi0 = normalized_initial(cfg);
    if (cfg.bath.zero_temperature()) {
        const auto ev = propagate_total(cfg.system, cfg.bath, layout, psi0, grid);
        max_leak = ev.max_fock_leak;
        return reduced_density(ev.states);
    }
    const auto th = thermal_reduced_density(cfg.system, cfg.bath, layout, psi0, grid, cfg.oracle_samples,
                                            cfg.master_seed + 1);
    max_leak = th.evolution.max_fock_leak;
    return th.evolution.rho;
}

inline double max_trace_z(const EnsembleResult& r) {
    double worst = 0.0;
    for (std::size_t j = 0; j < r.trace.size(); ++j) {
        const double dev = std::abs(r.trace[j] - 1.0);
        if (r.trace_stderr[j] > 0.0)
            worst = std::max(worst, dev / r.trace_stderr[j]);
        else if (dev > 1e-12)
            worst = std::numeric_limits<double>::infinity();
    }
    return worst;
}

inline void write_ensemble_csv(const std::filesystem::path& path, const EnsembleResult& r) {
    const auto d = r.rho_mean.front().rows();
    std::vector<std::string> header{"t"};
    for (auto& h : density_header(d, "rho")) header.push_back(h);
    for (Eigen::Index a = 0; a < d; ++a)
        for (Eigen::Index b = 0; b < d; ++b) header.push_back("stderr" + std::to_string(a) + std::to_string(b));
    header.push_back("trace");
    header.push_back("trace_stderr");
    for (const auto& [name, _] : r.trace_distance_to) header.push_back("trace_distance_" + name);
    CsvWriter csv(path, header);
    for (std::size_t j = 0; j < r.times.size(); ++j) {
        std::vector<double> row{r.times[j]};
        append_density(row, r.rho_mean[j]);
        for (Eigen::Index a = 0; a < d; ++a)
            for (Eigen::Index b = 0; b < d; ++b) row.push_back(r.rho_stderr[j](a, b));
        row.push_back(r.trace[j]);
        row.push_back(r.trace_stderr[j]);
        for (const auto& [_, td] : r.trace_distance_to) row.push_back(td[j]);
        csv.row(row);
    }
}

/// The mean trace is conserved only by the exact closures; born_weak_coupling drifts at O(g^2).
inline void add_structural_checks(ExperimentOutcome& out, const EnsembleResult& r, ClosureKind closure) {
    if (closure != ClosureKind::born_weak_coupling) out.checks.push_back(check_below("trace_z", max_trace_z(r), 4.0));
    out.checks.push_back(check_below("hermitian_asymmetry", r.diagnostics.hermitian_asymmetry, kEnsembleAsymmetryLimit));
}

struct RunContext {
    const ExperimentConfig& cfg;
    std::filesystem::path dir;
    bool csv = true;
    ExperimentOutcome& out;

    std::filesystem::path file(const std::string& name) {
        out.files.push_back(name);
        return dir / name;
    }
};

inline void run_validate_noise(RunContext& ctx) {
    const auto& cfg = ctx.cfg;
    if (cfg.noise == NoiseStrategy::mode_sum && !cfg.bath.zero_temperature())
        throw UsageError("validate-noise: mode_sum noise requires temperature 0");
    const TimeGrid grid = coarse_grid(cfg.grid, 101);
    const KernelGrid kernel = tabulate_kernel(cfg.bath, grid);

    auto measure = [&](const BathModel& bath) {
        const auto source = make_noise_source(bath, cfg.noise, grid);
        NoiseStatisticsAccumulator acc(kernel);
        for (std::size_t k = 0; k < cfg.noise_samples; ++k) acc.add(source(RngStream{cfg.master_seed, k}));
        return acc.report();
    };
    const NoiseStatisticsReport rep = measure(cfg.bath);
    BathModel doubled = cfg.bath;
    for (auto& m : doubled.modes) m.g *= 2.0;
    const NoiseStatisticsReport control = measure(doubled);

    if (ctx.csv) {
        CsvWriter csv(ctx.file("noise_statistics.csv"),
                      {"kind", "t1", "t2", "value_re", "value_im", "target_re", "target_im", "stderr", "z"});
        for (const auto& m : rep.means) csv.row({0, m.t, m.t, m.mean.real(), m.mean.imag(), 0, 0, m.standard_error, m.z});
        for (const auto& p : rep.pairs) {
            csv.row({1, p.t1, p.t2, p.covariance.real(), p.covariance.imag(), p.covariance_target.real(),
                     p.covariance_target.imag(), p.covariance_stderr, p.covariance_z});
            csv.row({2, p.t1, p.t2, p.pseudo.real(), p.pseudo.imag(), 0, 0, p.pseudo_stderr, p.pseudo_z});
        }
    }
    ctx.out.checks.push_back(check_below("noise_mean_max_z", rep.max_z_mean, 4.0));
    ctx.out.checks.push_back(check_below("noise_pseudo_covariance_max_z", rep.max_z_pseudo, 4.0));
    ctx.out.checks.push_back(check_below("noise_covariance_max_z", rep.max_z_covariance, 4.0));
    if (!cfg.bath.modes.empty())
        ctx.out.checks.push_back(check_above("negative_control_max_z", control.max_z(), 4.0));
}

inline void run_single_trajectory(RunContext& ctx) {
    const auto& cfg = ctx.cfg;
    const EnsembleConfig ec = ensemble_config(cfg, cfg.grid);
    validate_ensemble_config(cfg.system, cfg.bath, EnsembleConfig{ec});
    const MemoryClosure closure = make_closure(cfg.system, cfg.bath, cfg.closure, cfg.grid, cfg.fock_cutoffs);
    const auto noise = make_noise_source(cfg.bath, cfg.noise, cfg.grid)(RngStream{cfg.master_seed, 0});
    const Trajectory tr = run_trajectory(cfg.system, closure, noise, cfg.grid, ec.psi0, ec.solver);
    if (ctx.csv) {
        std::vector<std::string> header{"t", "noise_re", "noise_im"};
        for (Eigen::Index s = 0; s < cfg.system.dim(); ++s) {
            header.push_back("psi" + std::to_string(s) + "_re");
            header.push_back("psi" + std::to_string(s) + "_im");
        }
        header.push_back("norm_squared");
        CsvWriter csv(ctx.file("trajectory.csv"), header);
        for (std::size_t j = 0; j < tr.states.size(); ++j) {
            std::vector<double> row{tr.states[j].t, noise.values[j].real(), noise.values[j].imag()};
            for (Eigen::Index s = 0; s < cfg.system.dim(); ++s) {
                row.push_back(tr.states[j].psi(s).real());
                row.push_back(tr.states[j].psi(s).imag());
            }
            row.push_back(tr.states[j].psi.squaredNorm());
            csv.row(row);
        }
    }
    ctx.out.checks.push_back(check_below("fock_leak", tr.max_fock_leak, kFockLeakError));
}

inline void run_ensemble_experiment(RunContext& ctx) {
    const auto& cfg = ctx.cfg;
    const TimeGrid grid = horizon_grid(cfg);
    EnsembleResult r = run_ensemble(cfg.system, cfg.bath, ensemble_config(cfg, grid));
    add_structural_checks(ctx.out, r, cfg.closure);
    if (cfg.markov) {
        const StateVector psi0 = normalized_initial(cfg);
        const auto lb = lindblad_solve(cfg.system, cfg.markov->gamma, psi0 * psi0.adjoint(), grid);
        attach_comparison(r, "lindblad", lb);
    } else if (!cfg.fock_cutoffs.empty()) {
        double leak = 0.0;
        const auto ref = oracle_reference(cfg, grid, leak);
        attach_comparison(r, "oracle", ref);
        ctx.out.checks.push_back(check_below("oracle_fock_leak", leak, kFockLeakError));
    }
    for (const auto& [name, td] : r.trace_distance_to)
        ctx.out.checks.push_back(
            check_below("max_trace_distance_" + name, *std::max_element(td.begin(), td.end()), cfg.tolerance));
    if (ctx.csv) write_ensemble_csv(ctx.file("ensemble.csv"), r);
}

inline void run_oracle(RunContext& ctx) {
    const auto& cfg = ctx.cfg;
    double leak = 0.0;
    const auto rho = oracle_reference(cfg, cfg.grid, leak);
    if (ctx.csv) {
        std::vector<std::string> header{"t"};
        for (auto& h : density_header(cfg.system.dim(), "rho")) header.push_back(h);
        header.push_back("trace");
        CsvWriter csv(ctx.file("oracle.csv"), header);
        for (std::size_t j = 0; j < rho.size(); ++j) {
            std::vector<double> row{cfg.grid.time(j)};
            append_density(row, rho[j]);
            row.push_back(rho[j].trace().real());
            csv.row(row);
        }
    }
    ctx.out.checks.push_back(check_below("fock_leak", leak, kFockLeakError));
}

inline void run_markov_limit(RunContext& ctx) {
    const auto& cfg = ctx.cfg;
    if (!cfg.markov) throw UsageError("markov-limit needs a markov comb bath (bath.markov_*)");
    if (cfg.closure != ClosureKind::dephasing_exact)
        throw UsageError("markov-limit needs solver.closure = dephasing_exact");
    const TimeGrid grid = horizon_grid(cfg);
    const double recurrence = recurrence_time(cfg.bath);
    if (grid.t_max() > 0.5 * recurrence)
        throw UsageError("markov-limit: horizon " + std::to_string(grid.t_max()) +
                         " is not inside half the recurrence time " + std::to_string(recurrence));
    EnsembleResult r = run_ensemble(cfg.system, cfg.bath, ensemble_config(cfg, grid));
    const StateVector psi0 = normalized_initial(cfg);
    const auto lb = lindblad_solve(cfg.system, cfg.markov->gamma, psi0 * psi0.adjoint(), grid);
    attach_comparison(r, "lindblad", lb);
    add_structural_checks(ctx.out, r, cfg.closure);
    const auto& td = r.trace_distance_to.at("lindblad");
    ctx.out.checks.push_back(
        check_below("max_trace_distance_lindblad", *std::max_element(td.begin(), td.end()), cfg.tolerance));
    if (ctx.csv) {
        write_ensemble_csv(ctx.file("ensemble.csv"), r);
        std::vector<std::string> header{"t"};
        for (auto& h : density_header(cfg.system.dim(), "lindblad")) header.push_back(h);
        CsvWriter csv(ctx.file("lindblad.csv"), header);
        for (std::size_t j = 0; j < lb.size(); ++j) {
            std::vector<double> row{grid.time(j)};
            append_density(row, lb[j]);
            csv.row(row);
        }
    }
}

inline void run_bargmann_identity(RunContext& ctx) {
    const auto& cfg = ctx.cfg;
    if (cfg.closure != ClosureKind::bargmann_exact)
        throw UsageError("bargmann-identity requires solver.closure = bargmann_exact, got " +
                         std::string(to_string(cfg.closure)));
    if (!cfg.bath.zero_temperature()) throw UsageError("bargmann-identity requires bath.temperature = 0");
    if (cfg.noise != NoiseStrategy::mode_sum) throw UsageError("bargmann-identity requires noise.strategy = mode_sum");
    const SpaceLayout layout = require_layout(cfg, "bargmann-identity");
    const StateVector psi0 = normalized_initial(cfg);
    const auto ev = propagate_total(cfg.system, cfg.bath, layout, psi0, cfg.grid);
    const MemoryClosure closure = closure_bargmann(cfg.system, cfg.bath, layout);
    const ModeSumSampler sampler(cfg.bath, cfg.grid, false);
    const BargmannProjector projector(layout, cfg.bath);
    std::vector<double> per_sample;
    for (std::size_t k = 0; k < cfg.identity_samples; ++k) {
        const NoiseRealization z = sampler.sample(RngStream{cfg.master_seed, k});
        const CoherentSample a{z.coherent_a};
        double worst = 0.0;
        integrate_trajectory(
            cfg.system, closure, z, cfg.grid, psi0,
            [&](std::size_t j, double, const StateVector& psi) {
                worst = std::max(worst, (psi - projector.project(ev.states[j], a, true)).norm());
            },
            SolverOptions{cfg.substeps});
        per_sample.push_back(worst);
    }
    if (ctx.csv) {
        CsvWriter csv(ctx.file("bargmann_identity.csv"), {"sample", "max_norm_difference"});
        for (std::size_t k = 0; k < per_sample.size(); ++k) csv.row({static_cast<double>(k), per_sample[k]});
    }
    ctx.out.checks.push_back(
        check_below("max_norm_difference", *std::max_element(per_sample.begin(), per_sample.end()), 1e-6));
    ctx.out.checks.push_back(check_below("oracle_fock_leak", ev.max_fock_leak, kFockLeakError));
}

inline nlohmann::json manifest(const ExperimentConfig& cfg, const std::string& experiment,
                               const ExperimentOutcome& out, double wall_seconds) {
    nlohmann::json checks = nlohmann::json::array();
    for (const auto& c : out.checks) {
        nlohmann::json v = std::isfinite(c.value) ? nlohmann::json(c.value) : nlohmann::json("inf");
        checks.push_back({{"name", c.name},
                          {"value", v},
                          {"threshold", c.threshold},
                          {"relation", c.below ? "<" : ">"},
                          {"pass", c.pass}});
    }
    return {{"experiment", experiment},
            {"seed", cfg.master_seed},
            {"config", serialize(cfg)},
            {"checks", checks},
            {"timings", {{"wall_seconds", wall_seconds}}},
            {"versions",
             {{"nmsse", kVersion},
              {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                            std::to_string(EIGEN_MINOR_VERSION)}}},
            {"files", out.files},
            {"exit_code", out.exit_code},
            {"error", out.error}};
}

}  // namespace detail

/// Runs one named experiment, writing outputs under `out_dir`.
inline ExperimentOutcome run_experiment(const ExperimentConfig& cfg, const std::string& experiment,
                                        const std::filesystem::path& out_dir, std::ostream& log = std::cerr) {
    ExperimentOutcome out;
    const auto start = std::chrono::steady_clock::now();
    const auto& names = experiment_names();
    if (std::find(names.begin(), names.end(), experiment) == names.end()) {
        out.exit_code = 2;
        out.error = "unknown experiment '" + experiment + "'";
        log << "error: " << out.error << '\n';
        return out;
    }
    const bool csv = std::find(cfg.formats.begin(), cfg.formats.end(), "csv") != cfg.formats.end();
    const bool json = std::find(cfg.formats.begin(), cfg.formats.end(), "json") != cfg.formats.end();
    try {
        if (csv || json) std::filesystem::create_directories(out_dir);
        detail::RunContext ctx{cfg, out_dir, csv, out};
        if (experiment == "validate-noise") detail::run_validate_noise(ctx);
        else if (experiment == "trajectory") detail::run_single_trajectory(ctx);
        else if (experiment == "ensemble") detail::run_ensemble_experiment(ctx);
        else if (experiment == "oracle") detail::run_oracle(ctx);
        else if (experiment == "markov-limit") detail::run_markov_limit(ctx);
        else detail::run_bargmann_identity(ctx);
        out.exit_code = 0;
        for (const auto& c : out.checks)
            if (!c.pass) {
                out.exit_code = 1;
                log << "check failed: " << c.name << " = " << c.value << (c.below ? " (needs < " : " (needs > ")
                    << c.threshold << ")\n";
            }
    } catch (const std::invalid_argument& e) {
        out.exit_code = 2;
        out.error = e.what();
        log << "error: " << e.what() << '\n';
    } catch (const std::exception& e) {
        out.exit_code = 1;
        out.error = e.what();
        out.checks.push_back({"run_completed", 0.0, 1.0, false, false});
        log << "run failed: " << e.what() << '\n';
    }
    const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (json && out.exit_code != 2) {
        out.files.push_back("manifest.json");
        std::ofstream f(out_dir / "manifest.json");
        f << detail::manifest(cfg, experiment, out, wall).dump(2) << '\n';
    }
    return out;
}

}  // namespace nmsse
