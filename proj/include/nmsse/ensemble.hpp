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

// ensemble.hpp - Monte Carlo reconstruction rho(t) = M[|psi(t)><psi(t)|] over noise
// realizations, with per-element standard errors.
//
// Reproducibility: trajectory k always draws from RngStream{master_seed, k}. Trajectory
// indices are split into fixed chunks (independent of the worker count), each chunk is summed
// in index order, and chunk sums are combined by a fixed pairwise tree. Results are therefore
// bit-identical for any number of workers.

#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <exception>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "nmsse/model.hpp"
#include "nmsse/noise.hpp"
#include "nmsse/numerics.hpp"
#include "nmsse/oracle.hpp"
#include "nmsse/solver.hpp"

namespace nmsse {

struct EnsembleConfig {
    std::size_t n_trajectories = 1000;
    std::uint64_t master_seed = 1;
    ClosureKind closure = ClosureKind::dephasing_exact;
    NoiseStrategy noise = NoiseStrategy::mode_sum;
    TimeGrid grid;
    StateVector psi0;
    std::vector<std::size_t> fock_cutoffs;  // bargmann_exact only
    std::size_t workers = 0;                // 0: hardware concurrency
    std::size_t chunk_size = 64;
    SolverOptions solver;
};

struct EnsembleDiagnostics {
    double max_squared_norm = 0.0;     // over trajectories, at the final time
    double median_squared_norm = 0.0;  // at the final time
    double max_fock_leak = 0.0;
    std::size_t fock_leak_warnings = 0;
    double hermitian_asymmetry = 0.0;  // relative, before Hermitization
};

/// Mean density from the first `n` trajectories.
struct PrefixEstimate {
    std::size_t n = 0;
    std::vector<ComplexMatrix> rho_mean;
};

struct EnsembleResult {
    std::vector<double> times;
    std::vector<ComplexMatrix> rho_mean;
    std::vector<RealMatrix> rho_stderr;
    std::vector<double> trace;
    std::vector<double> trace_stderr;
    std::vector<PrefixEstimate> prefixes;  // N/4, N/2, N
    EnsembleDiagnostics diagnostics;
    std::map<std::string, std::vector<double>> trace_distance_to;
    std::size_t n_trajectories = 0;
};

class EnsembleError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Relative asymmetry above which an ensemble mean is rejected.
inline constexpr double kEnsembleAsymmetryLimit = 1e-9;

namespace detail {

/// Running mean and centered second moments of projectors (Welford per chunk, Chan et al. when
/// merging), so an ensemble of identical states has exactly zero spread.
struct ProjectorSums {
    std::vector<ComplexMatrix> mean;
    std::vector<RealMatrix> m2_re;
    std::vector<RealMatrix> m2_im;
    std::vector<double> norm_mean;
    std::vector<double> norm_m2;
    std::size_t count = 0;

    ProjectorSums() = default;
    ProjectorSums(std::size_t n_times, Eigen::Index d)
        : mean(n_times, ComplexMatrix::Zero(d, d)), m2_re(n_times, RealMatrix::Zero(d, d)),
          m2_im(n_times, RealMatrix::Zero(d, d)), norm_mean(n_times, 0.0), norm_m2(n_times, 0.0) {}

    /// Adds sample number `count + 1` at time index j; `count` is advanced by the caller.
    void add(std::size_t j, const StateVector& psi, ComplexMatrix& scratch) {
        const double n = static_cast<double>(count + 1);
        scratch.noalias() = psi * psi.adjoint();
        scratch -= mean[j];
        const RealMatrix dre = scratch.real(), dim = scratch.imag();
        mean[j] += scratch / n;
        scratch.noalias() = psi * psi.adjoint();
        scratch -= mean[j];
        m2_re[j] += dre.cwiseProduct(scratch.real());
        m2_im[j] += dim.cwiseProduct(scratch.imag());
        const double x = psi.squaredNorm();
        const double d0 = x - norm_mean[j];
        norm_mean[j] += d0 / n;
        norm_m2[j] += d0 * (x - norm_mean[j]);
    }

    static ProjectorSums combine(ProjectorSums a, const ProjectorSums& b) {
        if (b.count == 0) return a;
        if (a.count == 0) return b;
        const double na = static_cast<double>(a.count), nb = static_cast<double>(b.count), n = na + nb;
        for (std::size_t j = 0; j < a.mean.size(); ++j) {
            const ComplexMatrix delta = b.mean[j] - a.mean[j];
            a.mean[j] += delta * (nb / n);
            a.m2_re[j] += b.m2_re[j] + delta.real().cwiseAbs2() * (na * nb / n);
            a.m2_im[j] += b.m2_im[j] + delta.imag().cwiseAbs2() * (na * nb / n);
            const double dn = b.norm_mean[j] - a.norm_mean[j];
            a.norm_mean[j] += dn * (nb / n);
            a.norm_m2[j] += b.norm_m2[j] + dn * dn * (na * nb / n);
        }
        a.count += b.count;
        return a;
    }
};

/// Chunk boundaries: multiples of chunk_size plus the prefix cut points.
inline std::vector<std::pair<std::size_t, std::size_t>> chunk_ranges(std::size_t n, std::size_t chunk_size,
                                                                     const std::vector<std::size_t>& cuts) {
    std::vector<std::size_t> bounds;
    for (std::size_t b = 0; b < n; b += chunk_size) bounds.push_back(b);
    for (auto c : cuts)
        if (c > 0 && c < n) bounds.push_back(c);
    bounds.push_back(n);
    std::sort(bounds.begin(), bounds.end());
    bounds.erase(std::unique(bounds.begin(), bounds.end()), bounds.end());
    std::vector<std::pair<std::size_t, std::size_t>> out;
    for (std::size_t i = 0; i + 1 < bounds.size(); ++i) out.emplace_back(bounds[i], bounds[i + 1]);
    return out;
}

inline std::size_t resolve_workers(std::size_t requested) {
    if (requested > 0) return requested;
    return std::max<std::size_t>(1, std::thread::hardware_concurrency());
}

/// Runs `body(chunk_index)` for every chunk on `workers` threads. The first failure by chunk
/// index is rethrown.
template <typename Body>
void parallel_chunks(std::size_t n_chunks, std::size_t workers, Body&& body) {
    std::atomic<std::size_t> next{0};
    std::mutex err_mutex;
    std::optional<std::size_t> err_chunk;
    std::exception_ptr err;
    auto worker = [&] {
        for (;;) {
            const std::size_t c = next.fetch_add(1);
            if (c >= n_chunks) return;
            try {
                body(c);
            } catch (...) {
                std::lock_guard lock(err_mutex);
                if (!err_chunk || c < *err_chunk) {
                    err_chunk = c;
                    err = std::current_exception();
                }
            }
        }
    };
    const std::size_t w = std::min(std::max<std::size_t>(workers, 1), std::max<std::size_t>(n_chunks, 1));
    if (w == 1) {
        worker();
    } else {
        std::vector<std::jthread> pool;
        for (std::size_t i = 0; i < w; ++i) pool.emplace_back(worker);
    }
    if (err) std::rethrow_exception(err);
}

}  // namespace detail

/// Accumulates |psi_k(t_j)><psi_k(t_j)| for k = 0..n-1. `trajectory(k, record)` must call
/// `record(j, psi)` once per grid index j; it may return a (max leak, warnings) pair.
template <typename TrajectoryFn>
EnsembleResult accumulate_projectors(std::size_t n, const TimeGrid& grid, Eigen::Index dim,
                                     std::size_t workers, std::size_t chunk_size, TrajectoryFn&& trajectory) {
    if (n < 2) throw std::invalid_argument("an ensemble needs at least 2 trajectories");
    if (chunk_size == 0) throw std::invalid_argument("chunk size must be positive");
    const std::size_t n_times = grid.size();
    const std::vector<std::size_t> cuts{n / 4, n / 2};
    const auto ranges = detail::chunk_ranges(n, chunk_size, cuts);
    std::vector<detail::ProjectorSums> chunk(ranges.size());
    std::vector<double> final_norms(n, 0.0);
    std::vector<double> leaks(n, 0.0);
    std::vector<std::size_t> warnings(n, 0);

    detail::parallel_chunks(ranges.size(), detail::resolve_workers(workers), [&](std::size_t c) {
        detail::ProjectorSums sums(n_times, dim);
        ComplexMatrix scratch(dim, dim);
        for (std::size_t k = ranges[c].first; k < ranges[c].second; ++k) {
            try {
                auto record = [&](std::size_t j, const StateVector& psi) {
                    sums.add(j, psi, scratch);
                    if (j + 1 == n_times) final_norms[k] = psi.squaredNorm();
                };
                auto [leak, warn] = trajectory(k, record);
                leaks[k] = leak;
                warnings[k] = warn;
            } catch (const std::exception& e) {
                throw EnsembleError("trajectory " + std::to_string(k) + ": " + e.what());
            }
            ++sums.count;
        }
        chunk[c] = std::move(sums);
    });

    auto reduce = [&](std::size_t end_chunk) {
        return pairwise_sum<detail::ProjectorSums>(
            0, end_chunk, [&](std::size_t c) { return chunk[c]; },
            [](detail::ProjectorSums a, const detail::ProjectorSums& b) {
                return detail::ProjectorSums::combine(std::move(a), b);
            });
    };

    EnsembleResult res;
    res.n_trajectories = n;
    res.times = grid.times();
    const detail::ProjectorSums total = reduce(ranges.size());
    const double nn = static_cast<double>(n);
    double asym = 0.0;
    for (std::size_t j = 0; j < n_times; ++j) {
        const ComplexMatrix& mean = total.mean[j];
        const double scale = mean.cwiseAbs().maxCoeff();
        if (scale > 0.0) asym = std::max(asym, max_asymmetry(mean) / scale);
        res.rho_mean.push_back(hermitize(mean));
        res.rho_stderr.push_back(((total.m2_re[j] + total.m2_im[j]) / (nn * (nn - 1.0))).cwiseMax(0.0).cwiseSqrt());
        res.trace.push_back(total.norm_mean[j]);
        res.trace_stderr.push_back(std::sqrt(std::max(0.0, total.norm_m2[j]) / (nn * (nn - 1.0))));
    }
    res.diagnostics.hermitian_asymmetry = asym;
    if (asym > kEnsembleAsymmetryLimit)
        throw EnsembleError("ensemble mean asymmetry " + std::to_string(asym) + " exceeds 1e-9");

    for (auto cut : cuts) {
        std::size_t end_chunk = 0;
        while (end_chunk < ranges.size() && ranges[end_chunk].second <= cut) ++end_chunk;
        if (end_chunk == 0) continue;
        const auto partial = reduce(end_chunk);
        PrefixEstimate p;
        p.n = partial.count;
        for (std::size_t j = 0; j < n_times; ++j)
            p.rho_mean.push_back(hermitize(partial.mean[j]));
        res.prefixes.push_back(std::move(p));
    }
    res.prefixes.push_back({n, res.rho_mean});

    std::vector<double> sorted = final_norms;
    std::sort(sorted.begin(), sorted.end());
    res.diagnostics.max_squared_norm = sorted.back();
    res.diagnostics.median_squared_norm =
        (n % 2) ? sorted[n / 2] : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
    res.diagnostics.max_fock_leak = *std::max_element(leaks.begin(), leaks.end());
    for (auto w : warnings) res.diagnostics.fock_leak_warnings += w;
    return res;
}

/// Checks closure / noise / bath compatibility of an ensemble configuration.
inline void validate_ensemble_config(const SystemModel& sys, const BathModel& bath, const EnsembleConfig& cfg) {
    if (cfg.n_trajectories < 2) throw std::invalid_argument("n_trajectories must be at least 2");
    if (cfg.psi0.size() != sys.dim()) throw DimensionError("initial state dimension does not match the system");
    if (cfg.noise == NoiseStrategy::mode_sum && !bath.zero_temperature())
        throw std::invalid_argument("mode_sum noise requires temperature 0; use thermal_mode_sum");
    if (cfg.closure == ClosureKind::bargmann_exact) {
        if (cfg.noise != NoiseStrategy::mode_sum)
            throw std::invalid_argument("bargmann_exact closure requires mode_sum noise");
        if (cfg.fock_cutoffs.size() != bath.modes.size())
            throw std::invalid_argument("bargmann_exact closure needs one Fock cutoff per bath mode");
    }
    if (cfg.closure == ClosureKind::dephasing_exact && !commutes(sys))
        throw std::invalid_argument("dephasing_exact closure requires [L, H_sys] = 0");
}

inline MemoryClosure make_closure(const SystemModel& sys, const BathModel& bath, ClosureKind kind,
                                  const TimeGrid& grid, const std::vector<std::size_t>& cutoffs) {
    switch (kind) {
        case ClosureKind::dephasing_exact: return closure_dephasing(sys, bath, grid);
        case ClosureKind::born_weak_coupling: return closure_born(sys, bath, grid);
        case ClosureKind::bargmann_exact:
            return closure_bargmann(sys, bath, SpaceLayout(static_cast<std::size_t>(sys.dim()), cutoffs));
    }
    throw std::invalid_argument("unknown closure kind");
}

/// Noise source for an ensemble: maps a stream to a realization on the grid.
inline std::function<NoiseRealization(const RngStream&)> make_noise_source(const BathModel& bath,
                                                                           NoiseStrategy strategy,
                                                                           const TimeGrid& grid) {
    switch (strategy) {
        case NoiseStrategy::mode_sum:
        case NoiseStrategy::thermal_mode_sum: {
            auto sampler = std::make_shared<ModeSumSampler>(bath, grid, strategy == NoiseStrategy::thermal_mode_sum);
            return [sampler](const RngStream& rng) { return sampler->sample(rng); };
        }
        case NoiseStrategy::grid_factorization: {
            auto factor = std::make_shared<GridFactorization>(tabulate_kernel(bath, grid));
            return [factor](const RngStream& rng) { return factor->sample(rng); };
        }
    }
    throw std::invalid_argument("unknown noise strategy");
}

inline EnsembleResult run_ensemble(const SystemModel& sys, const BathModel& bath, const EnsembleConfig& cfg) {
    validate_ensemble_config(sys, bath, cfg);
    const MemoryClosure closure = make_closure(sys, bath, cfg.closure, cfg.grid, cfg.fock_cutoffs);
    const auto noise = make_noise_source(bath, cfg.noise, cfg.grid);
    return accumulate_projectors(cfg.n_trajectories, cfg.grid, sys.dim(), cfg.workers, cfg.chunk_size,
                                 [&](std::size_t k, auto&& record) {
                                     const NoiseRealization z = noise(RngStream{cfg.master_seed, k});
                                     return integrate_trajectory(
                                         sys, closure, z, cfg.grid, cfg.psi0,
                                         [&](std::size_t j, double, const StateVector& psi) { record(j, psi); },
                                         cfg.solver);
                                 });
}

/// Gaussian-measure average of Bargmann projections of oracle states: sample k draws
/// a ~ CN(0, 1) per mode from RngStream{seed, k}, and each state is projected with rotate = true.
inline EnsembleResult bargmann_measure_average(std::span<const TotalState> states, const BathModel& bath,
                                               const TimeGrid& grid, std::size_t n_samples, std::uint64_t seed,
                                               std::size_t workers = 0, std::size_t chunk_size = 64) {
    if (states.size() != grid.size()) throw std::invalid_argument("state list does not match the grid");
    const BargmannProjector projector(states.front().layout, bath);
    const auto d = static_cast<Eigen::Index>(states.front().layout.system_dim);
    return accumulate_projectors(n_samples, grid, d, workers, chunk_size, [&](std::size_t k, auto&& record) {
        auto eng = RngStream{seed, k}.engine();
        CoherentSample a;
        for (std::size_t i = 0; i < bath.modes.size(); ++i) a.amplitudes.push_back(circular_normal(eng));
        for (std::size_t j = 0; j < states.size(); ++j) record(j, projector.project(states[j], a, true));
        return std::pair<double, std::size_t>{0.0, 0};
    });
}

/// Weighted mean of projectors (Hermitized) and element-wise standard error of the mean.
/// Weights default to 1/N; a single trajectory has standard error 0.
inline std::pair<ComplexMatrix, RealMatrix> average_density(std::span<const StateVector> trajectories,
                                                            std::span<const double> weights = {}) {
    if (trajectories.empty()) throw std::invalid_argument("average_density: empty trajectory list");
    if (!weights.empty() && weights.size() != trajectories.size())
        throw std::invalid_argument("average_density: weight count mismatch");
    const auto d = trajectories.front().size();
    const std::size_t n = trajectories.size();
    std::vector<double> w(n, 1.0 / static_cast<double>(n));
    if (!weights.empty()) {
        double total = 0.0;
        for (double x : weights) total += x;
        if (!(total > 0.0)) throw std::invalid_argument("average_density: weights must have positive sum");
        for (std::size_t k = 0; k < n; ++k) w[k] = weights[k] / total;
    }
    ComplexMatrix mean = ComplexMatrix::Zero(d, d);
    for (std::size_t k = 0; k < n; ++k) {
        if (trajectories[k].size() != d) throw DimensionError("average_density: unequal state dimensions");
        mean += w[k] * (trajectories[k] * trajectories[k].adjoint());
    }
    double w2 = 0.0;
    for (double x : w) w2 += x * x;
    RealMatrix se = RealMatrix::Zero(d, d);
    if (n > 1 && w2 < 1.0) {
        RealMatrix var = RealMatrix::Zero(d, d);
        for (std::size_t k = 0; k < n; ++k) {
            const ComplexMatrix dev = trajectories[k] * trajectories[k].adjoint() - mean;
            var += w[k] * dev.cwiseAbs2();
        }
        var /= (1.0 - w2);
        se = (var * w2).cwiseSqrt();
    }
    return {hermitize(mean), se};
}

struct ConvergenceReport {
    std::vector<double> trace_distance;
    double max_trace_distance = 0.0;
    double max_z = 0.0;
    std::vector<std::size_t> prefix_n;
    std::vector<double> prefix_distance;  // time-averaged trace distance per prefix
    double slope = 0.0;                   // fit of log(distance) vs log(N)
};

/// Compares an ensemble to a reference series: per-time trace distance, largest element z-score,
/// and the N^{-1/2} scaling fit over the stored prefixes.
inline ConvergenceReport convergence_report(const EnsembleResult& result, std::span<const ComplexMatrix> target) {
    if (target.size() != result.rho_mean.size())
        throw std::invalid_argument("convergence report: target has " + std::to_string(target.size()) +
                                    " times, ensemble has " + std::to_string(result.rho_mean.size()));
    ConvergenceReport rep;
    for (std::size_t j = 0; j < target.size(); ++j) {
        const double td = trace_distance(result.rho_mean[j], target[j]);
        rep.trace_distance.push_back(td);
        rep.max_trace_distance = std::max(rep.max_trace_distance, td);
        const auto& m = result.rho_mean[j];
        for (Eigen::Index r = 0; r < m.rows(); ++r)
            for (Eigen::Index c = 0; c < m.cols(); ++c)
                rep.max_z = std::max(rep.max_z, detail::z_score(m(r, c) - target[j](r, c), result.rho_stderr[j](r, c),
                                                                std::abs(target[j](r, c))));
    }
    std::vector<double> lx, ly;
    for (const auto& p : result.prefixes) {
        double avg = 0.0;
        for (std::size_t j = 0; j < target.size(); ++j) avg += trace_distance(p.rho_mean[j], target[j]);
        avg /= static_cast<double>(target.size());
        rep.prefix_n.push_back(p.n);
        rep.prefix_distance.push_back(avg);
        if (avg > 0.0) {
            lx.push_back(std::log(static_cast<double>(p.n)));
            ly.push_back(std::log(avg));
        }
    }
    if (lx.size() >= 2) {
        double mx = 0.0, my = 0.0;
        for (std::size_t i = 0; i < lx.size(); ++i) {
            mx += lx[i];
            my += ly[i];
        }
        mx /= static_cast<double>(lx.size());
        my /= static_cast<double>(lx.size());
        double sxy = 0.0, sxx = 0.0;
        for (std::size_t i = 0; i < lx.size(); ++i) {
            sxy += (lx[i] - mx) * (ly[i] - my);
            sxx += (lx[i] - mx) * (lx[i] - mx);
        }
        rep.slope = sxx > 0.0 ? sxy / sxx : 0.0;
    }
    return rep;
}

/// Stores the per-time trace distance to `target` under `name` in the result.
inline void attach_comparison(EnsembleResult& result, const std::string& name, std::span<const ComplexMatrix> target) {
    if (target.size() != result.rho_mean.size()) throw std::invalid_argument("comparison target grid mismatch");
    std::vector<double> td;
    for (std::size_t j = 0; j < target.size(); ++j) td.push_back(trace_distance(result.rho_mean[j], target[j]));
    result.trace_distance_to[name] = std::move(td);
}

}  // namespace nmsse
