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

// model.hpp - system + harmonic bath with linear coupling, its force correlation
// kernel alpha(t, s), and the truncated total Hamiltonian used by the oracle.
//
// The bath enters only through g_i = chi_i^2 / (2 m_i omega_i) and omega_i; the
// coupling operator L is any Hermitian system operator (position q in the classic
// Caldeira-Leggett / Feynman-Vernon model).

#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

#include "nmsse/numerics.hpp"

namespace nmsse {

/// Uniform grid t_j = j * dt, j = 0..steps.
struct TimeGrid {
    double dt = 0.01;
    std::size_t steps = 0;

    TimeGrid() = default;
    TimeGrid(double step, std::size_t n) : dt(step), steps(n) {
        if (!(dt > 0.0) || !std::isfinite(dt)) throw std::invalid_argument("grid dt must be positive");
    }

    /// Builds a grid covering [0, t_max]; dt must divide t_max.
    static TimeGrid from_horizon(double t_max, double dt) {
        if (!(dt > 0.0)) throw std::invalid_argument("grid dt must be positive");
        if (!(t_max >= 0.0)) throw std::invalid_argument("grid t_max must be nonnegative");
        const double ratio = t_max / dt;
        const double n = std::round(ratio);
        if (std::abs(ratio - n) > 1e-9 * std::max(1.0, ratio))
            throw std::invalid_argument("grid dt does not divide t_max");
        return TimeGrid(dt, static_cast<std::size_t>(n));
    }

    std::size_t size() const noexcept { return steps + 1; }
    double t_max() const noexcept { return dt * static_cast<double>(steps); }
    double time(std::size_t j) const noexcept { return dt * static_cast<double>(j); }

    std::vector<double> times() const {
        std::vector<double> t(size());
        for (std::size_t j = 0; j < t.size(); ++j) t[j] = time(j);
        return t;
    }

    /// Every `stride`-th point of this grid.
    TimeGrid coarsened(std::size_t stride) const {
        if (stride == 0 || steps % stride != 0)
            throw std::invalid_argument("coarsening stride must divide the step count");
        return TimeGrid(dt * static_cast<double>(stride), steps / stride);
    }

    bool operator==(const TimeGrid&) const = default;
};

struct SystemModel {
    ComplexMatrix hamiltonian;
    ComplexMatrix coupling;

    SystemModel() = default;
    SystemModel(ComplexMatrix h, ComplexMatrix l) : hamiltonian(std::move(h)), coupling(std::move(l)) {
        validate();
    }

    Eigen::Index dim() const noexcept { return hamiltonian.rows(); }

    void validate() const {
        require_hermitian(hamiltonian, "hamiltonian");
        require_hermitian(coupling, "coupling");
        if (hamiltonian.rows() == 0) throw DimensionError("system dimension must be positive");
        if (coupling.rows() != hamiltonian.rows())
            throw DimensionError("hamiltonian and coupling dimensions differ");
    }
};

/// One bath oscillator: effective coupling g = chi^2/(2 m omega) and frequency omega.
struct BathMode {
    double g = 0.0;
    double omega = 1.0;

    double kappa() const { return std::sqrt(g); }
    bool operator==(const BathMode&) const = default;
};

struct BathModel {
    std::vector<BathMode> modes;
    double temperature = 0.0;

    BathModel() = default;
    BathModel(std::vector<BathMode> m, double t) : modes(std::move(m)), temperature(t) { validate(); }

    void validate() const {
        if (!(temperature >= 0.0) || !std::isfinite(temperature))
            throw std::invalid_argument("bath temperature must be a finite nonnegative number");
        for (std::size_t i = 0; i < modes.size(); ++i) {
            if (!(modes[i].g > 0.0) || !std::isfinite(modes[i].g))
                throw std::invalid_argument("bath mode " + std::to_string(i) + ": g must be positive");
            if (!(modes[i].omega > 0.0) || !std::isfinite(modes[i].omega))
                throw std::invalid_argument("bath mode " + std::to_string(i) +
                                            ": omega must be positive");
        }
    }

    bool zero_temperature() const noexcept { return temperature == 0.0; }
    bool operator==(const BathModel&) const = default;
};

/// Bose-Einstein occupation 1/(e^{omega/T} - 1); exactly 0 at T = 0.
inline double mean_occupation(double omega, double temperature) {
    if (temperature <= 0.0) return 0.0;
    const double x = omega / temperature;
    if (x > 700.0) return 0.0;
    return 1.0 / std::expm1(x);
}

inline double mean_occupation(const BathMode& mode, double temperature) {
    return mean_occupation(mode.omega, temperature);
}

/// alpha(t, s) = sum_i g_i [coth(omega_i / 2T) cos(omega_i (t-s)) - i sin(omega_i (t-s))].
inline Complex kernel_alpha(const BathModel& bath, double t, double s) {
    const double tau = t - s;
    Complex sum{0.0, 0.0};
    for (const auto& m : bath.modes) {
        // coth(omega / 2T) == 2 nbar + 1, which is exactly 1 at T = 0.
        const double coth = 2.0 * mean_occupation(m, bath.temperature) + 1.0;
        sum += m.g * Complex(coth * std::cos(m.omega * tau), -std::sin(m.omega * tau));
    }
    return sum;
}

namespace detail {
// integral_0^t e^{-i nu tau} d tau, well-behaved as nu -> 0.
inline Complex phase_integral(double nu, double t) {
    const double x = nu * t;
    if (std::abs(x) < 1e-4) {
        // Taylor series of (1 - e^{-ix}) / (i nu) = t * (1 - ix/2 - x^2/6 + i x^3/24 ...)
        return t * Complex(1.0 - x * x / 6.0, -x / 2.0 + x * x * x / 24.0);
    }
    return (1.0 - std::exp(Complex(0.0, -x))) / Complex(0.0, nu);
}

// integral_0^t (integral_0^u e^{-i nu tau} d tau) du
inline Complex phase_double_integral(double nu, double t) {
    const double x = nu * t;
    if (std::abs(x) < 1e-3) {
        // t^2 (1/2 - i x/6 - x^2/24 + i x^3/120)
        return t * t * Complex(0.5 - x * x / 24.0, -x / 6.0 + x * x * x / 120.0);
    }
    return (t - phase_integral(nu, t)) / Complex(0.0, nu);
}
}  // namespace detail

/// A(t) = integral_0^t alpha(t, s) ds in closed form.
inline Complex kernel_integral(const BathModel& bath, double t) {
    Complex sum{0.0, 0.0};
    for (const auto& m : bath.modes) {
        const double nbar = mean_occupation(m, bath.temperature);
        sum += m.g * ((nbar + 1.0) * detail::phase_integral(m.omega, t) +
                      nbar * detail::phase_integral(-m.omega, t));
    }
    return sum;
}

/// B(t) = integral_0^t A(u) du in closed form.
inline Complex kernel_double_integral(const BathModel& bath, double t) {
    Complex sum{0.0, 0.0};
    for (const auto& m : bath.modes) {
        const double nbar = mean_occupation(m, bath.temperature);
        sum += m.g * ((nbar + 1.0) * detail::phase_double_integral(m.omega, t) +
                      nbar * detail::phase_double_integral(-m.omega, t));
    }
    return sum;
}

/// Tabulated kernel, values(j, k) = alpha(t_j, t_k).
struct KernelGrid {
    TimeGrid grid;
    ComplexMatrix values;

    /// C(j, k) = conj(alpha(t_j, t_k)) = E[Z(t_j) Z*(t_k)].
    ComplexMatrix covariance() const { return values.conjugate(); }
};

inline constexpr double kKernelPsdClip = 1e-12;

class KernelError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Checks alpha(t,s) = conj(alpha(s,t)) and that conj(alpha) is PSD up to the clip tolerance.
inline void validate_kernel_grid(const KernelGrid& kernel) {
    const auto n = static_cast<Eigen::Index>(kernel.grid.size());
    if (kernel.values.rows() != n || kernel.values.cols() != n)
        throw KernelError("kernel grid size does not match its time grid");
    if (!kernel.values.allFinite()) throw KernelError("kernel grid has non-finite entries");
    if (!is_hermitian(kernel.values))
        throw KernelError("kernel violates alpha(t,s) = conj(alpha(s,t)) (asymmetry " +
                          std::to_string(max_asymmetry(kernel.values)) + ")");
    Eigen::SelfAdjointEigenSolver<ComplexMatrix> es(hermitize(kernel.covariance()),
                                                    Eigen::EigenvaluesOnly);
    const auto& ev = es.eigenvalues();
    const double lmax = ev.size() ? ev.maxCoeff() : 0.0;
    const double lmin = ev.size() ? ev.minCoeff() : 0.0;
    if (lmin < -kKernelPsdClip * std::max(lmax, 0.0) && lmin < -1e-300)
        throw KernelError("kernel covariance is not positive semidefinite (min eigenvalue " +
                          std::to_string(lmin) + ", max " + std::to_string(lmax) + ")");
}

inline KernelGrid tabulate_kernel(const BathModel& bath, const TimeGrid& grid) {
    const auto n = static_cast<Eigen::Index>(grid.size());
    KernelGrid k{grid, ComplexMatrix(n, n)};
    // Stationary kernel: tabulate by lag once.
    std::vector<Complex> by_lag(grid.size());
    for (std::size_t m = 0; m < grid.size(); ++m) by_lag[m] = kernel_alpha(bath, grid.time(m), 0.0);
    for (Eigen::Index j = 0; j < n; ++j)
        for (Eigen::Index l = 0; l < n; ++l)
            k.values(j, l) = (j >= l) ? by_lag[static_cast<std::size_t>(j - l)]
                                      : std::conj(by_lag[static_cast<std::size_t>(l - j)]);
    validate_kernel_grid(k);
    return k;
}

/// H_tot = H_sys (x) 1 - sum_i kappa_i L (x) (a_i + a_i^dagger) + sum_i omega_i 1 (x) a_i^dagger a_i,
/// zero-point energies dropped.
inline ComplexMatrix build_total_hamiltonian(const SystemModel& sys, const BathModel& bath,
                                             const SpaceLayout& layout,
                                             std::size_t max_dim = kDefaultMaxDimension) {
    if (layout.n_modes() != bath.modes.size())
        throw DimensionError("layout has " + std::to_string(layout.n_modes()) + " modes, bath has " +
                             std::to_string(bath.modes.size()));
    if (static_cast<Eigen::Index>(layout.system_dim) != sys.dim())
        throw DimensionError("layout system dimension does not match the system model");
    if (layout.total_dim() > max_dim)
        throw DimensionError("total dimension " + std::to_string(layout.total_dim()) +
                             " exceeds limit " + std::to_string(max_dim));

    const auto d = sys.dim();
    const auto e = static_cast<Eigen::Index>(layout.env_dim());
    ComplexMatrix h = Eigen::kroneckerProduct(sys.hamiltonian, ComplexMatrix::Identity(e, e)).eval();
    const ComplexMatrix id_sys = ComplexMatrix::Identity(d, d);
    for (std::size_t i = 0; i < bath.modes.size(); ++i) {
        const ComplexMatrix a = annihilation(layout.mode_cutoffs[i]);
        const ComplexMatrix x = a + a.adjoint();
        const ComplexMatrix number = a.adjoint() * a;
        h -= bath.modes[i].kappa() * embed_mode_operator(layout, sys.coupling, i, x);
        h += bath.modes[i].omega * embed_mode_operator(layout, id_sys, i, number);
    }
    return h;
}

/// Dense T = 0 frequency comb whose kernel approaches (gamma/2) delta(t-s) + i*(Lamb shift part):
/// omega_k = (k - 1/2) d_omega, g_k = gamma d_omega / pi, k = 1..n_modes, d_omega = omega_max / n.
/// Re A(t) then sits on a flat gamma/2 plateau for 1/omega_max << t < 2 pi / d_omega.
inline BathModel markov_reference_bath(double gamma, std::size_t n_modes, double omega_max) {
    if (!(gamma > 0.0)) throw std::invalid_argument("markov bath: gamma must be positive");
    if (n_modes == 0) throw std::invalid_argument("markov bath: need at least one mode");
    if (!(omega_max > 0.0)) throw std::invalid_argument("markov bath: omega_max must be positive");
    const double d_omega = omega_max / static_cast<double>(n_modes);
    std::vector<BathMode> modes(n_modes);
    for (std::size_t k = 0; k < n_modes; ++k) {
        modes[k].omega = (static_cast<double>(k) + 0.5) * d_omega;
        modes[k].g = gamma * d_omega / std::numbers::pi;
    }
    return BathModel(std::move(modes), 0.0);
}

/// Shortest revival time of the kernel modulus |alpha(tau)|: 2 pi over the smallest gap between
/// distinct frequencies, or 2 pi / omega for a single frequency. Infinite for an empty bath.
inline double recurrence_time(const BathModel& bath) {
    if (bath.modes.empty()) return std::numeric_limits<double>::infinity();
    std::vector<double> w;
    for (const auto& m : bath.modes) w.push_back(m.omega);
    std::sort(w.begin(), w.end());
    double smallest = std::numeric_limits<double>::infinity();
    for (std::size_t i = 1; i < w.size(); ++i) {
        const double gap = w[i] - w[i - 1];
        if (gap > 1e-12 * w[i]) smallest = std::min(smallest, gap);
    }
    if (std::isinf(smallest)) smallest = w.front();
    return 2.0 * std::numbers::pi / smallest;
}

}  // namespace nmsse
