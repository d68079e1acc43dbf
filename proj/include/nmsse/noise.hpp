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

// noise.hpp - colored circular complex Gaussian processes Z(t) with
//   E[Z(t)] = 0,  E[Z(t) Z(s)] = 0,  E[Z(t) Z*(s)] = conj(alpha(t, s)).
//
// Three synthesis routes:
//   mode_sum          T = 0 only. Z(t) = sum_i kappa_i a_i^* e^{+i omega_i t}, a_i ~ CN(0, 1).
//                     The sampled a_i are kept so the Fock-space closure can evaluate
//                     the matching Bargmann state.
//   thermal_mode_sum  Z(t) = sum_i [sqrt(g_i (n_i+1)) a_i^* e^{+i omega_i t}
//                                  + sqrt(g_i n_i) b_i^* e^{-i omega_i t}].
//   grid_factorization
//                     Z = F xi with F F^dagger = conj(alpha) on the grid; works for any
//                     tabulated kernel.
//
// Realizations carry values on the grid and on half-step midpoints so a fixed-step RK4
// integrator can read every stage time without re-evaluating the mode sum.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <ostream>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "nmsse/model.hpp"
#include "nmsse/numerics.hpp"

namespace nmsse {

/// Reproducible random stream identified by (seed, index).
struct RngStream {
    std::uint64_t seed = 0;
    std::uint64_t index = 0;

    std::mt19937_64 engine() const {
        std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                          static_cast<std::uint32_t>(index),
                          static_cast<std::uint32_t>(index >> 32), 0x6e6d7373u};
        return std::mt19937_64(seq);
    }
};

/// Standard circular complex normal: E|z|^2 = 1, variance 1/2 per quadrature.
template <typename Engine>
Complex circular_normal(Engine& eng) {
    std::normal_distribution<double> n(0.0, std::sqrt(0.5));
    const double re = n(eng);
    const double im = n(eng);
    return {re, im};
}

enum class NoiseStrategy { mode_sum, thermal_mode_sum, grid_factorization };

inline std::string_view to_string(NoiseStrategy s) {
    switch (s) {
        case NoiseStrategy::mode_sum: return "mode_sum";
        case NoiseStrategy::thermal_mode_sum: return "thermal_mode_sum";
        case NoiseStrategy::grid_factorization: return "grid_factorization";
    }
    return "unknown";
}

inline NoiseStrategy noise_strategy_from_string(std::string_view s) {
    if (s == "mode_sum") return NoiseStrategy::mode_sum;
    if (s == "thermal_mode_sum") return NoiseStrategy::thermal_mode_sum;
    if (s == "grid_factorization") return NoiseStrategy::grid_factorization;
    throw std::invalid_argument("unknown noise strategy '" + std::string(s) + "'");
}

/// Z(t) += amplitude * exp(i * frequency * t)
struct SpectralComponent {
    Complex amplitude;
    double frequency = 0.0;
};

struct NoiseRealization {
    TimeGrid grid;
    std::vector<Complex> values;     // Z(t_j), j = 0..steps
    std::vector<Complex> midpoints;  // Z(t_j + dt/2), j = 0..steps-1
    NoiseStrategy strategy = NoiseStrategy::mode_sum;
    std::vector<Complex> coherent_a;  // mode-sum provenance
    std::vector<Complex> coherent_b;  // thermal branch amplitudes
    std::vector<SpectralComponent> components;

    bool has_mode_sum_provenance() const noexcept {
        return strategy == NoiseStrategy::mode_sum && coherent_a.size() == components.size();
    }

    /// Z at arbitrary t in [0, t_max]. Grid points and midpoints are table lookups; other times
    /// use the exact mode sum when available and linear interpolation otherwise.
    Complex at(double t) const {
        const double half = 0.5 * grid.dt;
        const double h = t / half;
        const double k = std::round(h);
        if (std::abs(h - k) < 1e-9 && k >= 0.0 && k <= 2.0 * static_cast<double>(grid.steps)) {
            const auto ki = static_cast<std::size_t>(k);
            if (ki % 2 == 0) return values[ki / 2];
            if (ki / 2 < midpoints.size()) return midpoints[ki / 2];
        }
        if (!components.empty()) {
            Complex z{0.0, 0.0};
            for (const auto& c : components) z += c.amplitude * std::exp(Complex(0.0, c.frequency * t));
            return z;
        }
        const double x = std::clamp(t / grid.dt, 0.0, static_cast<double>(grid.steps));
        const auto j = std::min(static_cast<std::size_t>(x), grid.steps == 0 ? 0 : grid.steps - 1);
        if (grid.steps == 0) return values.front();
        const double w = x - static_cast<double>(j);
        return (1.0 - w) * values[j] + w * values[j + 1];
    }
};

/// Samples mode-sum realizations on a fixed grid; the phasor table is shared across samples.
class ModeSumSampler {
public:
    ModeSumSampler(const BathModel& bath, const TimeGrid& grid, bool thermal)
        : grid_(grid), thermal_(thermal), n_modes_(bath.modes.size()) {
        bath.validate();
        if (!thermal && !bath.zero_temperature())
            throw std::invalid_argument(
                "mode_sum noise needs a zero-temperature bath; use thermal_mode_sum");
        for (const auto& m : bath.modes) {
            const double nbar = mean_occupation(m, bath.temperature);
            weights_.push_back(std::sqrt(m.g * (nbar + 1.0)));
            frequencies_.push_back(m.omega);
        }
        if (thermal_) {
            for (const auto& m : bath.modes) {
                const double nbar = mean_occupation(m, bath.temperature);
                weights_.push_back(std::sqrt(m.g * nbar));
                frequencies_.push_back(-m.omega);
            }
        }
        const auto n_half = static_cast<Eigen::Index>(2 * grid_.steps + 1);
        phasors_.resize(static_cast<Eigen::Index>(frequencies_.size()), n_half);
        for (Eigen::Index c = 0; c < phasors_.rows(); ++c)
            for (Eigen::Index m = 0; m < n_half; ++m)
                phasors_(c, m) = std::exp(
                    Complex(0.0, frequencies_[static_cast<std::size_t>(c)] * 0.5 * grid_.dt *
                                     static_cast<double>(m)));
    }

    const TimeGrid& grid() const noexcept { return grid_; }
    std::size_t n_modes() const noexcept { return n_modes_; }

    NoiseRealization sample(const RngStream& rng) const {
        auto eng = rng.engine();
        std::vector<Complex> a(n_modes_), b;
        for (auto& x : a) x = circular_normal(eng);
        if (thermal_) {
            b.resize(n_modes_);
            for (auto& x : b) x = circular_normal(eng);
        }
        return from_amplitudes(a, b);
    }

    /// Deterministic realization for given coherent amplitudes (b ignored unless thermal).
    NoiseRealization from_amplitudes(std::span<const Complex> a, std::span<const Complex> b = {}) const {
        if (a.size() != n_modes_) throw std::invalid_argument("mode-sum: wrong number of amplitudes a");
        if (thermal_ && b.size() != n_modes_)
            throw std::invalid_argument("thermal mode-sum: wrong number of amplitudes b");
        NoiseRealization r;
        r.grid = grid_;
        r.strategy = thermal_ ? NoiseStrategy::thermal_mode_sum : NoiseStrategy::mode_sum;
        r.coherent_a.assign(a.begin(), a.end());
        if (thermal_) r.coherent_b.assign(b.begin(), b.end());

        Eigen::VectorXcd amp(static_cast<Eigen::Index>(weights_.size()));
        for (std::size_t i = 0; i < n_modes_; ++i) amp(static_cast<Eigen::Index>(i)) = weights_[i] * std::conj(a[i]);
        if (thermal_)
            for (std::size_t i = 0; i < n_modes_; ++i)
                amp(static_cast<Eigen::Index>(n_modes_ + i)) = weights_[n_modes_ + i] * std::conj(b[i]);
        for (Eigen::Index c = 0; c < amp.size(); ++c)
            r.components.push_back({amp(c), frequencies_[static_cast<std::size_t>(c)]});

        const Eigen::VectorXcd half = phasors_.transpose() * amp;
        r.values.resize(grid_.size());
        r.midpoints.resize(grid_.steps);
        for (std::size_t m = 0; m < static_cast<std::size_t>(half.size()); ++m) {
            if (m % 2 == 0)
                r.values[m / 2] = half(static_cast<Eigen::Index>(m));
            else
                r.midpoints[m / 2] = half(static_cast<Eigen::Index>(m));
        }
        return r;
    }

private:
    TimeGrid grid_;
    bool thermal_;
    std::size_t n_modes_;
    std::vector<double> weights_;
    std::vector<double> frequencies_;
    ComplexMatrix phasors_;  // components x half-grid points
};

inline NoiseRealization sample_mode_sum_T0(const BathModel& bath, const TimeGrid& grid,
                                           const RngStream& rng) {
    return ModeSumSampler(bath, grid, false).sample(rng);
}

inline NoiseRealization sample_thermal_mode_sum(const BathModel& bath, const TimeGrid& grid,
                                                const RngStream& rng) {
    return ModeSumSampler(bath, grid, true).sample(rng);
}

/// Z = F xi with F F^dagger = C = conj(alpha) on the grid. Only eigen-directions above
/// 1e-12 * lambda_max are kept, so discrete-mode kernels give a low-rank factor.
class GridFactorization {
public:
    explicit GridFactorization(const KernelGrid& kernel) : grid_(kernel.grid) {
        const auto n = static_cast<Eigen::Index>(kernel.grid.size());
        if (kernel.values.rows() != n || kernel.values.cols() != n)
            throw KernelError("kernel grid size does not match its time grid");
        if (!is_hermitian(kernel.values))
            throw KernelError("kernel violates alpha(t,s) = conj(alpha(s,t))");
        Eigen::SelfAdjointEigenSolver<ComplexMatrix> es(hermitize(kernel.covariance()));
        const auto& ev = es.eigenvalues();
        const double lmax = std::max(ev.maxCoeff(), 0.0);
        const double lmin = ev.minCoeff();
        if (lmin < -kKernelPsdClip * lmax && lmin < -1e-300)
            throw KernelError("kernel covariance is not positive semidefinite (min eigenvalue " +
                              std::to_string(lmin) + ")");
        std::vector<Eigen::Index> kept;
        for (Eigen::Index k = 0; k < ev.size(); ++k)
            if (ev(k) > kKernelPsdClip * lmax && ev(k) > 0.0) kept.push_back(k);
        factor_.resize(n, static_cast<Eigen::Index>(kept.size()));
        for (std::size_t c = 0; c < kept.size(); ++c)
            factor_.col(static_cast<Eigen::Index>(c)) =
                es.eigenvectors().col(kept[c]) * std::sqrt(ev(kept[c]));
    }

    std::size_t rank() const noexcept { return static_cast<std::size_t>(factor_.cols()); }
    const ComplexMatrix& factor() const noexcept { return factor_; }

    NoiseRealization sample(const RngStream& rng) const {
        auto eng = rng.engine();
        Eigen::VectorXcd xi(factor_.cols());
        for (Eigen::Index k = 0; k < xi.size(); ++k) xi(k) = circular_normal(eng);
        const Eigen::VectorXcd z = factor_ * xi;
        NoiseRealization r;
        r.grid = grid_;
        r.strategy = NoiseStrategy::grid_factorization;
        r.values.assign(z.data(), z.data() + z.size());
        r.midpoints.resize(grid_.steps);
        for (std::size_t j = 0; j < grid_.steps; ++j) r.midpoints[j] = 0.5 * (r.values[j] + r.values[j + 1]);
        return r;
    }

private:
    TimeGrid grid_;
    ComplexMatrix factor_;
};

inline NoiseRealization sample_grid_factorization(const KernelGrid& kernel, const RngStream& rng) {
    return GridFactorization(kernel).sample(rng);
}

/// One probe-pair line of a statistics report.
struct NoisePairStatistics {
    double t1 = 0.0;
    double t2 = 0.0;
    Complex covariance;         // M[Z(t1) Z*(t2)]
    Complex covariance_target;  // conj(alpha(t1, t2))
    double covariance_stderr = 0.0;
    double covariance_z = 0.0;
    Complex pseudo;             // M[Z(t1) Z(t2)]
    double pseudo_stderr = 0.0;
    double pseudo_z = 0.0;
};

struct NoiseProbeMean {
    double t = 0.0;
    Complex mean;
    double standard_error = 0.0;
    double z = 0.0;
};

struct NoiseStatisticsReport {
    std::size_t n_samples = 0;
    std::vector<NoiseProbeMean> means;
    std::vector<NoisePairStatistics> pairs;
    double max_z_mean = 0.0;
    double max_z_pseudo = 0.0;
    double max_z_covariance = 0.0;

    double max_z() const { return std::max({max_z_mean, max_z_pseudo, max_z_covariance}); }
    bool passes(double threshold = 4.0) const { return max_z() < threshold; }
};

namespace detail {
/// Running sums for the mean of a complex quantity and its standard error.
struct ComplexMoments {
    double re = 0.0, im = 0.0, re2 = 0.0, im2 = 0.0;

    void add(Complex x) {
        re += x.real();
        im += x.imag();
        re2 += x.real() * x.real();
        im2 += x.imag() * x.imag();
    }

    Complex mean(std::size_t n) const { return {re / static_cast<double>(n), im / static_cast<double>(n)}; }

    /// Real and imaginary standard errors combined in quadrature.
    double standard_error(std::size_t n) const {
        if (n < 2) return 0.0;
        const double nn = static_cast<double>(n);
        const double mr = re / nn, mi = im / nn;
        const double vr = std::max(0.0, (re2 - nn * mr * mr) / (nn - 1.0));
        const double vi = std::max(0.0, (im2 - nn * mi * mi) / (nn - 1.0));
        return std::sqrt((vr + vi) / nn);
    }
};

inline double z_score(Complex deviation, double standard_error, double target_scale) {
    const double dev = std::abs(deviation);
    const double floor = 1e-12 * std::max(1.0, target_scale);
    if (standard_error > floor) return dev / standard_error;
    return dev <= floor ? 0.0 : std::numeric_limits<double>::infinity();
}
}  // namespace detail

/// Streams realizations and compares empirical first/second moments at up to `max_probes`
/// grid points against the targets 0, 0 and conj(alpha).
class NoiseStatisticsAccumulator {
public:
    explicit NoiseStatisticsAccumulator(KernelGrid kernel, std::size_t max_probes = 20)
        : kernel_(std::move(kernel)) {
        const std::size_t n = kernel_.grid.size();
        const std::size_t p = std::min(n, std::max<std::size_t>(max_probes, 1));
        for (std::size_t k = 0; k < p; ++k)
            probes_.push_back(p == 1 ? 0 : static_cast<std::size_t>(std::llround(
                                               static_cast<double>(k) * static_cast<double>(n - 1) /
                                               static_cast<double>(p - 1))));
        means_.resize(p);
        cov_.resize(p * p);
        pseudo_.resize(p * p);
    }

    const std::vector<std::size_t>& probe_indices() const noexcept { return probes_; }

    void add(const NoiseRealization& z) {
        if (!(z.grid == kernel_.grid) || z.values.size() != kernel_.grid.size())
            throw std::invalid_argument("noise realization grid does not match the kernel grid");
        const std::size_t p = probes_.size();
        for (std::size_t j = 0; j < p; ++j) {
            const Complex zj = z.values[probes_[j]];
            means_[j].add(zj);
            for (std::size_t k = 0; k < p; ++k) {
                const Complex zk = z.values[probes_[k]];
                cov_[j * p + k].add(zj * std::conj(zk));
                pseudo_[j * p + k].add(zj * zk);
            }
        }
        ++n_;
    }

    std::size_t count() const noexcept { return n_; }

    NoiseStatisticsReport report() const {
        if (n_ < 100) throw std::invalid_argument("noise statistics need at least 100 samples");
        NoiseStatisticsReport rep;
        rep.n_samples = n_;
        const std::size_t p = probes_.size();
        for (std::size_t j = 0; j < p; ++j) {
            NoiseProbeMean m;
            m.t = kernel_.grid.time(probes_[j]);
            m.mean = means_[j].mean(n_);
            m.standard_error = means_[j].standard_error(n_);
            m.z = detail::z_score(m.mean, m.standard_error, 0.0);
            rep.max_z_mean = std::max(rep.max_z_mean, m.z);
            rep.means.push_back(m);
        }
        for (std::size_t j = 0; j < p; ++j) {
            for (std::size_t k = 0; k < p; ++k) {
                NoisePairStatistics s;
                s.t1 = kernel_.grid.time(probes_[j]);
                s.t2 = kernel_.grid.time(probes_[k]);
                const auto& c = cov_[j * p + k];
                const auto& q = pseudo_[j * p + k];
                s.covariance = c.mean(n_);
                s.covariance_target = std::conj(kernel_.values(static_cast<Eigen::Index>(probes_[j]),
                                                               static_cast<Eigen::Index>(probes_[k])));
                s.covariance_stderr = c.standard_error(n_);
                s.covariance_z = detail::z_score(s.covariance - s.covariance_target, s.covariance_stderr,
                                                 std::abs(s.covariance_target));
                s.pseudo = q.mean(n_);
                s.pseudo_stderr = q.standard_error(n_);
                s.pseudo_z = detail::z_score(s.pseudo, s.pseudo_stderr, 0.0);
                rep.max_z_covariance = std::max(rep.max_z_covariance, s.covariance_z);
                rep.max_z_pseudo = std::max(rep.max_z_pseudo, s.pseudo_z);
                rep.pairs.push_back(s);
            }
        }
        return rep;
    }

private:
    KernelGrid kernel_;
    std::vector<std::size_t> probes_;
    std::vector<detail::ComplexMoments> means_;
    std::vector<detail::ComplexMoments> cov_;
    std::vector<detail::ComplexMoments> pseudo_;
    std::size_t n_ = 0;
};

inline NoiseStatisticsReport validate_statistics(std::span<const NoiseRealization> samples,
                                                 const KernelGrid& kernel) {
    NoiseStatisticsAccumulator acc(kernel);
    for (const auto& z : samples) acc.add(z);
    return acc.report();
}

}  // namespace nmsse
