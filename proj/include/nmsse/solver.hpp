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

// solver.hpp - fixed-step RK4 integration of the linear non-Markovian stochastic
// Schroedinger equation
//
//   d psi/dt = -i H psi + i L Z(t) psi + i L int_0^t alpha(t,s) (delta psi(t) / delta Z(s)) ds
//
// for one noise realization. The functional derivative is supplied by a MemoryClosure:
//
//   dephasing_exact     [L, H] = 0: delta psi(t)/delta Z(s) = i L psi(t), memory term -L^2 A(t) psi
//   born_weak_coupling  delta psi(t)/delta Z(s) ~ i L(s-t) psi(t), memory term -L D(t) psi,
//                       D(t) = int_0^t alpha(t,s) e^{-iH(t-s)} L e^{iH(t-s)} ds
//   bargmann_exact      the state is kept as a polynomial in the coherent labels a^* (Fock
//                       coefficients); a^* and d/da^* act as raising/lowering maps, so noise and
//                       memory term are both exact up to the Fock cutoff.
//
// Trajectory states are not normalized.

#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "nmsse/model.hpp"
#include "nmsse/noise.hpp"
#include "nmsse/numerics.hpp"

namespace nmsse {

enum class ClosureKind { dephasing_exact, born_weak_coupling, bargmann_exact };

inline std::string_view to_string(ClosureKind k) {
    switch (k) {
        case ClosureKind::dephasing_exact: return "dephasing_exact";
        case ClosureKind::born_weak_coupling: return "born_weak_coupling";
        case ClosureKind::bargmann_exact: return "bargmann_exact";
    }
    return "unknown";
}

inline ClosureKind closure_kind_from_string(std::string_view s) {
    if (s == "dephasing_exact") return ClosureKind::dephasing_exact;
    if (s == "born_weak_coupling") return ClosureKind::born_weak_coupling;
    if (s == "bargmann_exact") return ClosureKind::bargmann_exact;
    throw std::invalid_argument("unknown closure '" + std::string(s) + "'");
}

class SolverError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Relative commutator bound for the dephasing closure.
inline constexpr double kCommutatorTolerance = 1e-12;

inline bool commutes(const SystemModel& sys, double rel_tol = kCommutatorTolerance) {
    const double scale = sys.coupling.norm() * sys.hamiltonian.norm();
    return commutator_norm(sys.coupling, sys.hamiltonian) <= rel_tol * scale;
}

/// Closure acting in the system space: memory term M(t) psi with M(t) = -L D(t).
/// D(t) is tabulated on the half-step grid; `exact_d` evaluates it off-grid.
struct SystemSpaceClosure {
    ComplexMatrix coupling;
    TimeGrid grid;
    std::vector<ComplexMatrix> d_half;       // D at t = m * dt / 2
    std::vector<ComplexMatrix> memory_half;  // -L D at the same points
    std::function<ComplexMatrix(double)> exact_d;

    ComplexMatrix d_at(double t) const {
        const double h = t / (0.5 * grid.dt);
        const double k = std::round(h);
        if (std::abs(h - k) < 1e-9 && k >= 0.0 && k < static_cast<double>(d_half.size()))
            return d_half[static_cast<std::size_t>(k)];
        return exact_d(t);
    }

    /// Writes -L D(t) into `out` without allocating on the tabulated path.
    void memory_at(double t, ComplexMatrix& out) const {
        const double h = t / (0.5 * grid.dt);
        const double k = std::round(h);
        if (std::abs(h - k) < 1e-9 && k >= 0.0 && k < static_cast<double>(memory_half.size())) {
            out = memory_half[static_cast<std::size_t>(k)];
            return;
        }
        out.noalias() = -coupling * exact_d(t);
    }
};

/// Fock-space closure: Bargmann coefficients psi(sys, n_1, n_2, ...) evolved in the bath
/// interaction picture.
struct BargmannClosure {
    SpaceLayout layout;
    std::vector<double> frequencies;
    ComplexMatrix hamiltonian;             // H_sys (x) 1
    std::vector<ComplexMatrix> raising;    // kappa_i L (x) a_i^dagger   (multiplication by a_i^*)
    std::vector<ComplexMatrix> lowering;   // kappa_i L (x) a_i          (d / d a_i^*)
    std::vector<std::vector<Eigen::Index>> top_level;  // flat indices with n_i = cutoff_i

    /// Bargmann evaluation sum_n psi(sys, n) prod_i (a_i^*)^{n_i} / sqrt(n_i!).
    StateVector evaluate(const StateVector& fock, std::span<const Complex> a) const {
        const auto d = static_cast<Eigen::Index>(layout.system_dim);
        const auto e = static_cast<Eigen::Index>(layout.env_dim());
        const Eigen::VectorXcd w = monomial_weights(a);
        StateVector out(d);
        for (Eigen::Index s = 0; s < d; ++s) out(s) = fock.segment(s * e, e).cwiseProduct(w).sum();
        return out;
    }

    /// w_e = prod_i (a_i^*)^{n_i} / sqrt(n_i!) for every environment index e.
    Eigen::VectorXcd monomial_weights(std::span<const Complex> a) const {
        if (a.size() != layout.n_modes())
            throw SolverError("Bargmann evaluation needs one coherent amplitude per mode");
        const auto e = static_cast<Eigen::Index>(layout.env_dim());
        Eigen::VectorXcd w(e);
        for (Eigen::Index idx = 0; idx < e; ++idx) {
            const auto occ = layout.occupations(static_cast<std::size_t>(idx));
            Complex v{1.0, 0.0};
            for (std::size_t i = 0; i < occ.size(); ++i) {
                const Complex ac = std::conj(a[i]);
                for (std::size_t k = 1; k <= occ[i]; ++k) v *= ac / std::sqrt(static_cast<double>(k));
            }
            w(idx) = v;
        }
        return w;
    }

    /// out = [-i H + i sum_i (e^{i w_i t} raising_i + e^{-i w_i t} lowering_i)] x
    void apply_generator(double t, const StateVector& x, StateVector& out, StateVector& scratch) const {
        out.noalias() = hamiltonian * x;
        out *= -kI;
        for (std::size_t i = 0; i < frequencies.size(); ++i) {
            scratch.noalias() = raising[i] * x;
            out += (kI * std::exp(Complex(0.0, frequencies[i] * t))) * scratch;
            scratch.noalias() = lowering[i] * x;
            out += (kI * std::exp(Complex(0.0, -frequencies[i] * t))) * scratch;
        }
    }

    double top_level_population(const StateVector& fock) const { return top_fock_population(fock, top_level); }
};

class MemoryClosure {
public:
    MemoryClosure(ClosureKind kind, SystemSpaceClosure c) : kind_(kind), impl_(std::move(c)) {}
    explicit MemoryClosure(BargmannClosure c) : kind_(ClosureKind::bargmann_exact), impl_(std::move(c)) {}

    ClosureKind kind() const noexcept { return kind_; }

    bool is_fock_space() const noexcept { return std::holds_alternative<BargmannClosure>(impl_); }
    const SystemSpaceClosure& system_space() const { return std::get<SystemSpaceClosure>(impl_); }
    const BargmannClosure& bargmann() const { return std::get<BargmannClosure>(impl_); }

    /// D(t) for system-space closures (A(t) L for dephasing).
    ComplexMatrix memory_matrix(double t) const { return system_space().d_at(t); }

private:
    ClosureKind kind_;
    std::variant<SystemSpaceClosure, BargmannClosure> impl_;
};

namespace detail {

inline SystemSpaceClosure tabulate_system_closure(const ComplexMatrix& coupling, const TimeGrid& grid,
                                                  std::function<ComplexMatrix(double)> exact_d) {
    SystemSpaceClosure c;
    c.coupling = coupling;
    c.grid = grid;
    c.exact_d = std::move(exact_d);
    const std::size_t n_half = 2 * grid.steps + 1;
    c.d_half.reserve(n_half);
    c.memory_half.reserve(n_half);
    for (std::size_t m = 0; m < n_half; ++m) {
        c.d_half.push_back(c.exact_d(0.5 * grid.dt * static_cast<double>(m)));
        c.memory_half.push_back(-coupling * c.d_half.back());
    }
    return c;
}

/// Linear interpolation of node values on a uniform grid.
inline std::function<ComplexMatrix(double)> interpolate_nodes(std::vector<ComplexMatrix> nodes,
                                                              const TimeGrid& grid) {
    return [nodes = std::move(nodes), grid](double t) -> ComplexMatrix {
        if (grid.steps == 0) return nodes.front();
        const double x = std::clamp(t / grid.dt, 0.0, static_cast<double>(grid.steps));
        const auto j = std::min(static_cast<std::size_t>(x), grid.steps - 1);
        const double w = x - static_cast<double>(j);
        return (1.0 - w) * nodes[j] + w * nodes[j + 1];
    };
}

/// Trapezoid weight of node k in integral_0^{t_j}.
inline double trapezoid_weight(std::size_t k, std::size_t j, double dt) {
    if (j == 0) return 0.0;
    return (k == 0 || k == j) ? 0.5 * dt : dt;
}

inline void require_commuting(const SystemModel& sys) {
    if (!commutes(sys))
        throw std::invalid_argument("dephasing closure needs [L, H_sys] = 0 (commutator norm " +
                                    std::to_string(commutator_norm(sys.coupling, sys.hamiltonian)) +
                                    ")");
}

}  // namespace detail

/// Exact closure for [L, H_sys] = 0 with A(t) in closed form.
inline MemoryClosure closure_dephasing(const SystemModel& sys, const BathModel& bath, const TimeGrid& grid) {
    detail::require_commuting(sys);
    ComplexMatrix l = sys.coupling;
    return MemoryClosure(ClosureKind::dephasing_exact,
                         detail::tabulate_system_closure(
                             sys.coupling, grid,
                             [bath, l](double t) -> ComplexMatrix { return kernel_integral(bath, t) * l; }));
}

/// Dephasing closure for a tabulated kernel: A(t_j) by trapezoid quadrature.
inline MemoryClosure closure_dephasing(const SystemModel& sys, const KernelGrid& kernel) {
    detail::require_commuting(sys);
    const TimeGrid& grid = kernel.grid;
    std::vector<ComplexMatrix> nodes;
    for (std::size_t j = 0; j < grid.size(); ++j) {
        Complex a{0.0, 0.0};
        for (std::size_t k = 0; k <= j; ++k)
            a += detail::trapezoid_weight(k, j, grid.dt) *
                 kernel.values(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(k));
        nodes.push_back(a * sys.coupling);
    }
    return MemoryClosure(ClosureKind::dephasing_exact,
                         detail::tabulate_system_closure(sys.coupling, grid,
                                                         detail::interpolate_nodes(std::move(nodes), grid)));
}

/// Born closure for a discrete-mode bath. D(t) is integrated exactly in the H_sys eigenbasis:
/// D_mn(t) = L_mn sum_i g_i [(n_i+1) I(omega_i + E_m - E_n, t) + n_i I(E_m - E_n - omega_i, t)],
/// I(nu, t) = int_0^t e^{-i nu tau} d tau.
inline MemoryClosure closure_born(const SystemModel& sys, const BathModel& bath, const TimeGrid& grid) {
    Eigen::SelfAdjointEigenSolver<ComplexMatrix> es(hermitize(sys.hamiltonian));
    const ComplexMatrix v = es.eigenvectors();
    const Eigen::VectorXd e = es.eigenvalues();
    const ComplexMatrix l_eig = v.adjoint() * sys.coupling * v;
    std::vector<double> nbar;
    for (const auto& m : bath.modes) nbar.push_back(mean_occupation(m, bath.temperature));
    auto exact = [v, e, l_eig, bath, nbar](double t) -> ComplexMatrix {
        const auto d = e.size();
        ComplexMatrix de = ComplexMatrix::Zero(d, d);
        for (Eigen::Index m = 0; m < d; ++m) {
            for (Eigen::Index n = 0; n < d; ++n) {
                if (l_eig(m, n) == Complex(0.0, 0.0)) continue;
                const double gap = e(m) - e(n);
                Complex s{0.0, 0.0};
                for (std::size_t i = 0; i < bath.modes.size(); ++i) {
                    const auto& mode = bath.modes[i];
                    s += mode.g * ((nbar[i] + 1.0) * detail::phase_integral(mode.omega + gap, t) +
                                   nbar[i] * detail::phase_integral(gap - mode.omega, t));
                }
                de(m, n) = l_eig(m, n) * s;
            }
        }
        return v * de * v.adjoint();
    };
    return MemoryClosure(ClosureKind::born_weak_coupling,
                         detail::tabulate_system_closure(sys.coupling, grid, exact));
}

/// Born closure for a tabulated kernel: D(t_j) = sum_k w_k alpha(t_j, t_k) L(t_k - t_j) with
/// trapezoid weights; linear interpolation between nodes.
inline MemoryClosure closure_born(const SystemModel& sys, const KernelGrid& kernel) {
    const TimeGrid& grid = kernel.grid;
    Eigen::SelfAdjointEigenSolver<ComplexMatrix> es(hermitize(sys.hamiltonian));
    const ComplexMatrix v = es.eigenvectors();
    const Eigen::VectorXd e = es.eigenvalues();
    const ComplexMatrix l_eig = v.adjoint() * sys.coupling * v;
    const auto d = e.size();
    // L(-tau) in the eigenbasis: L_mn e^{-i (E_m - E_n) tau}, tau = lag index * dt.
    std::vector<ComplexMatrix> rotated(grid.size());
    for (std::size_t lag = 0; lag < grid.size(); ++lag) {
        const double tau = grid.time(lag);
        ComplexMatrix r(d, d);
        for (Eigen::Index m = 0; m < d; ++m)
            for (Eigen::Index n = 0; n < d; ++n)
                r(m, n) = l_eig(m, n) * std::exp(Complex(0.0, -(e(m) - e(n)) * tau));
        rotated[lag] = r;
    }
    std::vector<ComplexMatrix> nodes;
    for (std::size_t j = 0; j < grid.size(); ++j) {
        ComplexMatrix de = ComplexMatrix::Zero(d, d);
        for (std::size_t k = 0; k <= j; ++k)
            de += (detail::trapezoid_weight(k, j, grid.dt) *
                   kernel.values(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(k))) *
                  rotated[j - k];
        nodes.push_back(v * de * v.adjoint());
    }
    return MemoryClosure(ClosureKind::born_weak_coupling,
                         detail::tabulate_system_closure(sys.coupling, grid,
                                                         detail::interpolate_nodes(std::move(nodes), grid)));
}

/// Exact Fock-space closure for a zero-temperature discrete bath.
inline MemoryClosure closure_bargmann(const SystemModel& sys, const BathModel& bath, const SpaceLayout& layout) {
    if (!bath.zero_temperature())
        throw std::invalid_argument("bargmann_exact closure needs a zero-temperature bath");
    if (layout.n_modes() != bath.modes.size())
        throw DimensionError("bargmann closure: layout and bath mode counts differ");
    if (static_cast<Eigen::Index>(layout.system_dim) != sys.dim())
        throw DimensionError("bargmann closure: layout system dimension mismatch");
    BargmannClosure c;
    c.layout = layout;
    const auto e = static_cast<Eigen::Index>(layout.env_dim());
    c.hamiltonian = Eigen::kroneckerProduct(sys.hamiltonian, ComplexMatrix::Identity(e, e)).eval();
    for (std::size_t i = 0; i < bath.modes.size(); ++i) {
        const ComplexMatrix a = annihilation(layout.mode_cutoffs[i]);
        const double kappa = bath.modes[i].kappa();
        c.frequencies.push_back(bath.modes[i].omega);
        c.lowering.push_back(kappa * embed_mode_operator(layout, sys.coupling, i, a));
        c.raising.push_back(kappa * embed_mode_operator(layout, sys.coupling, i, a.adjoint()));
    }
    c.top_level = top_fock_level_indices(layout);
    return MemoryClosure(std::move(c));
}

struct TrajectoryState {
    double t = 0.0;
    StateVector psi;
};

struct Trajectory {
    std::vector<TrajectoryState> states;
    double max_fock_leak = 0.0;
    std::size_t fock_leak_warnings = 0;
};

struct SolverOptions {
    /// RK4 substeps per grid interval.
    std::size_t substeps = 1;
};

namespace detail {

template <typename Generator, typename Observer>
void rk4_integrate(StateVector psi, const TimeGrid& grid, std::size_t substeps, Generator&& apply,
                   Observer&& observe) {
    const auto n = psi.size();
    StateVector k1(n), k2(n), k3(n), k4(n), tmp(n);
    const double h = grid.dt / static_cast<double>(substeps);
    observe(std::size_t{0}, psi);
    for (std::size_t j = 0; j < grid.steps; ++j) {
        for (std::size_t s = 0; s < substeps; ++s) {
            const double t = grid.time(j) + h * static_cast<double>(s);
            apply(t, psi, k1);
            tmp = psi + (0.5 * h) * k1;
            apply(t + 0.5 * h, tmp, k2);
            tmp = psi + (0.5 * h) * k2;
            apply(t + 0.5 * h, tmp, k3);
            tmp = psi + h * k3;
            apply(t + h, tmp, k4);
            psi += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        }
        if (!psi.allFinite())
            throw SolverError("non-finite state at t = " + std::to_string(grid.time(j + 1)) +
                              " (step too large or kernel too strong)");
        observe(j + 1, psi);
    }
}

}  // namespace detail

/// Integrates one realization and calls `observe(j, t_j, psi_j)` at every grid point with the
/// exposed system-space state. Returns (max top-level Fock population, number of warnings).
template <typename Observer>
std::pair<double, std::size_t> integrate_trajectory(const SystemModel& sys, const MemoryClosure& closure,
                                                    const NoiseRealization& noise, const TimeGrid& grid,
                                                    const StateVector& psi0, Observer&& observe,
                                                    const SolverOptions& options = {}) {
    if (psi0.size() != sys.dim()) throw DimensionError("initial state dimension does not match the system");
    if (options.substeps == 0) throw std::invalid_argument("substeps must be positive");
    if (!(noise.grid == grid)) throw SolverError("noise realization grid does not match the solver grid");

    if (!closure.is_fock_space()) {
        const auto& c = closure.system_space();
        if (!(c.grid == grid)) throw SolverError("closure was tabulated on a different grid");
        const ComplexMatrix minus_i_h = -kI * sys.hamiltonian;
        const ComplexMatrix i_l = kI * sys.coupling;
        ComplexMatrix gen(sys.dim(), sys.dim());
        auto apply = [&](double t, const StateVector& x, StateVector& out) {
            c.memory_at(t, gen);
            gen += minus_i_h;
            gen += noise.at(t) * i_l;
            out.noalias() = gen * x;
        };
        detail::rk4_integrate(psi0, grid, options.substeps, apply,
                              [&](std::size_t j, const StateVector& psi) { observe(j, grid.time(j), psi); });
        return {0.0, 0};
    }

    if (closure.kind() != ClosureKind::bargmann_exact || !noise.has_mode_sum_provenance())
        throw SolverError("bargmann_exact closure needs mode_sum noise carrying its coherent amplitudes");
    const auto& c = closure.bargmann();
    if (noise.coherent_a.size() != c.layout.n_modes())
        throw SolverError("noise provenance has the wrong number of coherent amplitudes");

    const auto e = static_cast<Eigen::Index>(c.layout.env_dim());
    StateVector vacuum = StateVector::Zero(e);
    vacuum(0) = 1.0;
    const StateVector fock0 = tensor_product(psi0, vacuum);
    const Eigen::VectorXcd weights = c.monomial_weights(noise.coherent_a);
    const auto d = sys.dim();
    StateVector exposed(d);
    double worst = 0.0;
    std::size_t warnings = 0;

    StateVector scratch(fock0.size());
    auto apply = [&](double t, const StateVector& x, StateVector& out) { c.apply_generator(t, x, out, scratch); };
    detail::rk4_integrate(fock0, grid, options.substeps, apply, [&](std::size_t j, const StateVector& fock) {
        const double leak = c.top_level_population(fock);
        worst = std::max(worst, leak);
        if (leak > kFockLeakError)
            throw FockLeakError("top Fock level population " + std::to_string(leak) + " at t = " +
                                std::to_string(grid.time(j)) + " exceeds 1e-3; raise the cutoff");
        if (leak > kFockLeakWarn) ++warnings;
        for (Eigen::Index s = 0; s < d; ++s) exposed(s) = fock.segment(s * e, e).cwiseProduct(weights).sum();
        observe(j, grid.time(j), exposed);
    });
    return {worst, warnings};
}

inline Trajectory run_trajectory(const SystemModel& sys, const MemoryClosure& closure,
                                 const NoiseRealization& noise, const TimeGrid& grid, const StateVector& psi0,
                                 const SolverOptions& options = {}) {
    Trajectory out;
    out.states.reserve(grid.size());
    auto [leak, warnings] = integrate_trajectory(
        sys, closure, noise, grid, psi0,
        [&](std::size_t, double t, const StateVector& psi) { out.states.push_back({t, psi}); }, options);
    out.max_fock_leak = leak;
    out.fock_leak_warnings = warnings;
    return out;
}

/// Fock-coefficient trajectory of the bargmann closure (independent of the coherent sample).
inline std::vector<StateVector> run_fock_trajectory(const SystemModel& sys, const MemoryClosure& closure,
                                                    const TimeGrid& grid, const StateVector& psi0,
                                                    const SolverOptions& options = {}) {
    const auto& c = closure.bargmann();
    const auto e = static_cast<Eigen::Index>(c.layout.env_dim());
    StateVector vacuum = StateVector::Zero(e);
    vacuum(0) = 1.0;
    std::vector<StateVector> out;
    StateVector scratch(sys.dim() * e);
    auto apply = [&](double t, const StateVector& x, StateVector& o) { c.apply_generator(t, x, o, scratch); };
    detail::rk4_integrate(tensor_product(psi0, vacuum), grid, options.substeps, apply,
                          [&](std::size_t, const StateVector& f) { out.push_back(f); });
    return out;
}

}  // namespace nmsse
