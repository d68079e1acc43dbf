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

// oracle.hpp - exact references for the stochastic unravelling.
//
//  * unitary propagation of system (x) truncated bath under H_tot
//  * reduced density by partial trace
//  * projection of a total state onto unnormalized Bargmann coherent states
//  * Glauber-Sudarshan sampling of the thermal bath state
//  * RK4 Lindblad integrator for the white-noise limit
//
// Nothing here depends on solver.hpp; the two sides are compared in tests.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "nmsse/model.hpp"
#include "nmsse/noise.hpp"
#include "nmsse/numerics.hpp"

namespace nmsse {

struct TotalState {
    SpaceLayout layout;
    StateVector psi;
    double t = 0.0;
};

struct CoherentSample {
    std::vector<Complex> amplitudes;
};

enum class PropagationMethod { exact_diagonalization, rk4 };

struct TotalEvolution {
    std::vector<TotalState> states;
    double max_fock_leak = 0.0;
    std::size_t fock_leak_warnings = 0;
};

inline StateVector fock_vacuum(const SpaceLayout& layout) {
    StateVector v = StateVector::Zero(static_cast<Eigen::Index>(layout.env_dim()));
    v(0) = 1.0;
    return v;
}

namespace detail {
inline void track_leak(double leak, double t, double& worst, std::size_t& warnings) {
    worst = std::max(worst, leak);
    if (leak > kFockLeakError)
        throw FockLeakError("oracle: top Fock level population " + std::to_string(leak) + " at t = " +
                            std::to_string(t) + " exceeds 1e-3; raise the cutoff");
    if (leak > kFockLeakWarn) ++warnings;
}
}  // namespace detail

/// Unitary propagation under H_tot. Exact diagonalization is the default; RK4 with the grid step
/// is available for comparison.
class TotalPropagator {
public:
    TotalPropagator(const SystemModel& sys, const BathModel& bath, const SpaceLayout& layout,
                    PropagationMethod method = PropagationMethod::exact_diagonalization)
        : layout_(layout), method_(method), hamiltonian_(build_total_hamiltonian(sys, bath, layout)),
          top_levels_(top_fock_level_indices(layout)) {
        if (method_ == PropagationMethod::exact_diagonalization) {
            Eigen::SelfAdjointEigenSolver<ComplexMatrix> es(hermitize(hamiltonian_));
            eigenvectors_ = es.eigenvectors();
            eigenvalues_ = es.eigenvalues();
        }
    }

    const ComplexMatrix& hamiltonian() const noexcept { return hamiltonian_; }
    const ComplexMatrix& eigenvectors() const noexcept { return eigenvectors_; }
    const Eigen::VectorXd& eigenvalues() const noexcept { return eigenvalues_; }
    const SpaceLayout& layout() const noexcept { return layout_; }
    const std::vector<std::vector<Eigen::Index>>& top_levels() const noexcept { return top_levels_; }

    TotalEvolution propagate(const StateVector& psi_tot0, const TimeGrid& grid) const {
        if (psi_tot0.size() != hamiltonian_.rows())
            throw DimensionError("initial total state does not match the layout");
        TotalEvolution out;
        out.states.reserve(grid.size());
        auto record = [&](std::size_t j, const StateVector& psi) {
            detail::track_leak(top_fock_population(psi, top_levels_), grid.time(j), out.max_fock_leak,
                               out.fock_leak_warnings);
            out.states.push_back({layout_, psi, grid.time(j)});
        };
        if (method_ == PropagationMethod::exact_diagonalization) {
            const Eigen::VectorXcd c = eigenvectors_.adjoint() * psi_tot0;
            Eigen::VectorXcd rotated(c.size());
            for (std::size_t j = 0; j < grid.size(); ++j) {
                const double t = grid.time(j);
                for (Eigen::Index k = 0; k < c.size(); ++k)
                    rotated(k) = std::exp(Complex(0.0, -eigenvalues_(k) * t)) * c(k);
                record(j, eigenvectors_ * rotated);
            }
            return out;
        }
        const ComplexMatrix gen = -kI * hamiltonian_;
        StateVector psi = psi_tot0, k1, k2, k3, k4;
        const double h = grid.dt;
        record(0, psi);
        for (std::size_t j = 0; j < grid.steps; ++j) {
            k1.noalias() = gen * psi;
            k2.noalias() = gen * (psi + 0.5 * h * k1);
            k3.noalias() = gen * (psi + 0.5 * h * k2);
            k4.noalias() = gen * (psi + h * k3);
            psi += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
            record(j + 1, psi);
        }
        return out;
    }

private:
    SpaceLayout layout_;
    PropagationMethod method_;
    ComplexMatrix hamiltonian_;
    ComplexMatrix eigenvectors_;
    Eigen::VectorXd eigenvalues_;
    std::vector<std::vector<Eigen::Index>> top_levels_;
};

/// Propagates psi0_sys (x) bath_state (vacuum if not given).
inline TotalEvolution propagate_total(const SystemModel& sys, const BathModel& bath, const SpaceLayout& layout,
                                      const StateVector& psi0_sys, const TimeGrid& grid,
                                      const std::optional<StateVector>& bath_state = std::nullopt,
                                      PropagationMethod method = PropagationMethod::exact_diagonalization) {
    if (psi0_sys.size() != sys.dim()) throw DimensionError("initial system state dimension mismatch");
    const StateVector env = bath_state ? *bath_state : fock_vacuum(layout);
    if (env.size() != static_cast<Eigen::Index>(layout.env_dim()))
        throw DimensionError("initial bath state dimension mismatch");
    return TotalPropagator(sys, bath, layout, method).propagate(tensor_product(psi0_sys, env), grid);
}

inline std::vector<ComplexMatrix> reduced_density(std::span<const TotalState> states) {
    std::vector<ComplexMatrix> out;
    out.reserve(states.size());
    for (const auto& s : states) out.push_back(partial_trace_env(s.psi, s.layout));
    return out;
}

/// Projection of total states onto unnormalized Bargmann coherent states <a| of the bath:
/// sum_n Psi(sys, n) prod_i conj(abar_i)^{n_i} / sqrt(n_i!), with abar_i = a_i, or a_i e^{-i w_i t}
/// when `rotate` (bath interaction picture). Occupation tables are built once per layout.
class BargmannProjector {
public:
    BargmannProjector(const SpaceLayout& layout, const BathModel& bath) : layout_(layout) {
        if (bath.modes.size() != layout.n_modes())
            throw DimensionError("bargmann projection: layout and bath mode counts differ");
        for (const auto& m : bath.modes) frequencies_.push_back(m.omega);
        const std::size_t e = layout.env_dim();
        occupations_.reserve(e * layout.n_modes());
        for (std::size_t env = 0; env < e; ++env)
            for (auto n : layout.occupations(env)) occupations_.push_back(n);
        std::size_t top = 0;
        for (auto c : layout.mode_cutoffs) top = std::max(top, c);
        inv_sqrt_factorial_.assign(top + 1, 1.0);
        for (std::size_t n = 1; n <= top; ++n)
            inv_sqrt_factorial_[n] = inv_sqrt_factorial_[n - 1] / std::sqrt(static_cast<double>(n));
    }

    StateVector project(const TotalState& state, const CoherentSample& a, bool rotate = true) const {
        const std::size_t m = layout_.n_modes();
        if (a.amplitudes.size() != m) throw DimensionError("bargmann projection: amplitude count mismatch");
        if (!(state.layout == layout_)) throw DimensionError("bargmann projection: layout mismatch");
        // powers[i][n] = conj(abar_i)^n / sqrt(n!)
        std::vector<std::vector<Complex>> powers(m);
        for (std::size_t i = 0; i < m; ++i) {
            Complex ai = a.amplitudes[i];
            if (rotate) ai *= std::exp(Complex(0.0, -frequencies_[i] * state.t));
            const Complex label = std::conj(ai);
            const std::size_t cutoff = layout_.mode_cutoffs[i];
            powers[i].resize(cutoff + 1);
            Complex p{1.0, 0.0};
            for (std::size_t n = 0; n <= cutoff; ++n) {
                powers[i][n] = p * inv_sqrt_factorial_[n];
                p *= label;
            }
        }
        const std::size_t e = layout_.env_dim();
        StateVector out = StateVector::Zero(static_cast<Eigen::Index>(layout_.system_dim));
        for (std::size_t env = 0; env < e; ++env) {
            Complex overlap{1.0, 0.0};
            for (std::size_t i = 0; i < m; ++i) overlap *= powers[i][occupations_[env * m + i]];
            for (std::size_t s = 0; s < layout_.system_dim; ++s)
                out(static_cast<Eigen::Index>(s)) += state.psi(static_cast<Eigen::Index>(s * e + env)) * overlap;
        }
        return out;
    }

private:
    SpaceLayout layout_;
    std::vector<double> frequencies_;
    std::vector<std::size_t> occupations_;
    std::vector<double> inv_sqrt_factorial_;
};

inline StateVector bargmann_project(const TotalState& state, const BathModel& bath, const CoherentSample& a,
                                    bool rotate = true) {
    return BargmannProjector(state.layout, bath).project(state, a, rotate);
}

/// Normalized coherent state |b> truncated to Fock levels 0..cutoff.
inline StateVector truncated_coherent_state(Complex b, std::size_t cutoff) {
    StateVector v(static_cast<Eigen::Index>(cutoff + 1));
    Complex c{1.0, 0.0};
    v(0) = c;
    for (std::size_t n = 1; n <= cutoff; ++n) {
        c *= b / std::sqrt(static_cast<double>(n));
        v(static_cast<Eigen::Index>(n)) = c;
    }
    return v / v.norm();
}

struct ThermalInitialSample {
    CoherentSample amplitudes;
    StateVector bath_state;
    std::size_t resamples = 0;
};

/// Draws b_i with E|b_i|^2 = n_i and returns the product of truncated coherent states.
/// Draws with |b_i|^2 > cutoff_i / 2 are rejected and redrawn.
inline ThermalInitialSample sample_thermal_initial(const BathModel& bath, const SpaceLayout& layout,
                                                   const RngStream& rng) {
    if (layout.n_modes() != bath.modes.size()) throw DimensionError("layout and bath mode counts differ");
    auto eng = rng.engine();
    ThermalInitialSample out;
    StateVector state = StateVector::Ones(1);
    for (std::size_t i = 0; i < bath.modes.size(); ++i) {
        const double nbar = mean_occupation(bath.modes[i], bath.temperature);
        const double limit = 0.5 * static_cast<double>(layout.mode_cutoffs[i]);
        Complex b = std::sqrt(nbar) * circular_normal(eng);
        std::size_t tries = 0;
        while (std::norm(b) > limit) {
            if (++tries > 10000)
                throw std::runtime_error("thermal sampling: cutoff too small for the mode occupation");
            ++out.resamples;
            b = std::sqrt(nbar) * circular_normal(eng);
        }
        out.amplitudes.amplitudes.push_back(b);
        state = tensor_product(state, truncated_coherent_state(b, layout.mode_cutoffs[i]));
    }
    out.bath_state = std::move(state);
    return out;
}

/// Reduced system density for an equal-weight mixture of initial bath states,
/// rho(t) = (1/N) sum_b Tr_env |Psi_b(t)><Psi_b(t)|, evaluated in the H_tot eigenbasis:
/// with R = mean c_b c_b^dagger (c_b = V^dagger Psi_b(0)) and u_k(t) = e^{-i E_k t},
/// rho_{ss'}(t) = u^T (R o T^{ss'}) conj(u),  T^{ss'}_{kl} = sum_e V_{(s,e),k} conj(V_{(s',e),l}).
struct MixtureEvolution {
    std::vector<ComplexMatrix> rho;
    double max_fock_leak = 0.0;
    std::size_t fock_leak_warnings = 0;
};

inline MixtureEvolution mixture_reduced_density(const TotalPropagator& prop, const StateVector& psi0_sys,
                                                std::span<const StateVector> bath_states, const TimeGrid& grid) {
    if (prop.eigenvectors().size() == 0)
        throw std::invalid_argument("mixture oracle needs an exact-diagonalization propagator");
    if (bath_states.empty()) throw std::invalid_argument("mixture oracle needs at least one bath state");
    const auto& layout = prop.layout();
    const auto& v = prop.eigenvectors();
    const auto dim = v.rows();
    const auto d = static_cast<Eigen::Index>(layout.system_dim);
    const auto e = static_cast<Eigen::Index>(layout.env_dim());

    ComplexMatrix r = ComplexMatrix::Zero(dim, dim);
    constexpr std::size_t kBlock = 512;
    for (std::size_t first = 0; first < bath_states.size(); first += kBlock) {
        const std::size_t count = std::min(kBlock, bath_states.size() - first);
        ComplexMatrix init(dim, static_cast<Eigen::Index>(count));
        for (std::size_t b = 0; b < count; ++b) {
            if (bath_states[first + b].size() != e) throw DimensionError("bath state dimension mismatch");
            init.col(static_cast<Eigen::Index>(b)) = tensor_product(psi0_sys, bath_states[first + b]);
        }
        const ComplexMatrix c = v.adjoint() * init;
        r.noalias() += c * c.adjoint();
    }
    r /= static_cast<double>(bath_states.size());

    // Weighted overlap matrices: one per upper-triangular system pair, one per mode for leakage.
    std::vector<std::pair<Eigen::Index, Eigen::Index>> pairs;
    std::vector<ComplexMatrix> weights;
    for (Eigen::Index s = 0; s < d; ++s)
        for (Eigen::Index sp = s; sp < d; ++sp) {
            const ComplexMatrix t = v.middleRows(s * e, e).transpose() * v.middleRows(sp * e, e).conjugate();
            weights.push_back(r.cwiseProduct(t));
            pairs.emplace_back(s, sp);
        }
    for (const auto& idx : prop.top_levels()) {
        ComplexMatrix rows(static_cast<Eigen::Index>(idx.size()), dim);
        for (std::size_t k = 0; k < idx.size(); ++k) rows.row(static_cast<Eigen::Index>(k)) = v.row(idx[k]);
        const ComplexMatrix t = rows.transpose() * rows.conjugate();
        weights.push_back(r.cwiseProduct(t));
    }

    MixtureEvolution out;
    out.rho.reserve(grid.size());
    Eigen::VectorXcd u(dim), x(dim);
    for (std::size_t j = 0; j < grid.size(); ++j) {
        const double time = grid.time(j);
        for (Eigen::Index k = 0; k < dim; ++k) u(k) = std::exp(Complex(0.0, -prop.eigenvalues()(k) * time));
        ComplexMatrix rho(d, d);
        for (std::size_t p = 0; p < pairs.size(); ++p) {
            x.noalias() = weights[p] * u.conjugate();
            const Complex val = u.transpose() * x;
            rho(pairs[p].first, pairs[p].second) = val;
            rho(pairs[p].second, pairs[p].first) = std::conj(val);
        }
        for (Eigen::Index s = 0; s < d; ++s) rho(s, s) = rho(s, s).real();
        const double trace = rho.trace().real();
        for (std::size_t m = pairs.size(); m < weights.size(); ++m) {
            x.noalias() = weights[m] * u.conjugate();
            const Complex top = u.transpose() * x;
            detail::track_leak(trace > 0.0 ? top.real() / trace : 0.0, time, out.max_fock_leak,
                               out.fock_leak_warnings);
        }
        out.rho.push_back(std::move(rho));
    }
    return out;
}

/// Finite-temperature reference: average over `n_samples` thermal coherent initial bath states
/// drawn from streams (seed, 0..n_samples-1).
struct ThermalOracleResult {
    MixtureEvolution evolution;
    std::size_t resamples = 0;
};

inline ThermalOracleResult thermal_reduced_density(const SystemModel& sys, const BathModel& bath,
                                                   const SpaceLayout& layout, const StateVector& psi0_sys,
                                                   const TimeGrid& grid, std::size_t n_samples,
                                                   std::uint64_t seed) {
    const TotalPropagator prop(sys, bath, layout);
    std::vector<StateVector> states;
    states.reserve(n_samples);
    ThermalOracleResult out;
    for (std::size_t k = 0; k < n_samples; ++k) {
        auto sample = sample_thermal_initial(bath, layout, RngStream{seed, k});
        out.resamples += sample.resamples;
        states.push_back(std::move(sample.bath_state));
    }
    out.evolution = mixture_reduced_density(prop, psi0_sys, states, grid);
    return out;
}

/// d rho/dt = -i [H, rho] + gamma (L rho L - 1/2 {L^2, rho}) for Hermitian L, by RK4.
inline std::vector<ComplexMatrix> lindblad_solve(const SystemModel& sys, double gamma, const ComplexMatrix& rho0,
                                                 const TimeGrid& grid) {
    if (!(gamma > 0.0)) throw std::invalid_argument("lindblad_solve: gamma must be positive");
    if (rho0.rows() != sys.dim() || rho0.cols() != sys.dim())
        throw DimensionError("lindblad_solve: rho0 dimension mismatch");
    const ComplexMatrix& h = sys.hamiltonian;
    const ComplexMatrix& l = sys.coupling;
    const ComplexMatrix l2 = l * l;
    auto rhs = [&](const ComplexMatrix& rho) -> ComplexMatrix {
        return -kI * (h * rho - rho * h) + gamma * (l * rho * l - 0.5 * (l2 * rho + rho * l2));
    };
    std::vector<ComplexMatrix> out;
    out.reserve(grid.size());
    ComplexMatrix rho = rho0;
    out.push_back(rho);
    const double dt = grid.dt;
    for (std::size_t j = 0; j < grid.steps; ++j) {
        const ComplexMatrix k1 = rhs(rho);
        const ComplexMatrix k2 = rhs(rho + 0.5 * dt * k1);
        const ComplexMatrix k3 = rhs(rho + 0.5 * dt * k2);
        const ComplexMatrix k4 = rhs(rho + dt * k3);
        rho += (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        out.push_back(rho);
    }
    return out;
}

}  // namespace nmsse
