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

#include <gtest/gtest.h>

#include <numbers>
#include <unsupported/Eigen/MatrixFunctions>

#include "nmsse/oracle.hpp"

using namespace nmsse;
using std::numbers::pi;

namespace {

ComplexMatrix sigma_z() {
    ComplexMatrix m = ComplexMatrix::Zero(2, 2);
    m(0, 0) = 1.0;
    m(1, 1) = -1.0;
    return m;
}

ComplexMatrix sigma_x() {
    ComplexMatrix m = ComplexMatrix::Zero(2, 2);
    m(0, 1) = m(1, 0) = 1.0;
    return m;
}

StateVector plus_state() {
    StateVector v(2);
    v << 1.0 / std::sqrt(2.0), 1.0 / std::sqrt(2.0);
    return v;
}

SystemModel pure_dephasing() { return SystemModel(ComplexMatrix::Zero(2, 2), sigma_z()); }
SystemModel rabi_model() { return SystemModel(ComplexMatrix(0.5 * sigma_z() + 0.5 * sigma_x()), sigma_z()); }

double boson_decay(double g, double omega, double nbar, double t) {
    return 4.0 * g / (omega * omega) * (1.0 - std::cos(omega * t)) * (2.0 * nbar + 1.0);
}

std::pair<std::vector<double>, std::vector<double>> gauss_hermite(int n) {
    Eigen::MatrixXd j = Eigen::MatrixXd::Zero(n, n);
    for (int k = 1; k < n; ++k) j(k, k - 1) = j(k - 1, k) = std::sqrt(k / 2.0);
    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(j);
    std::vector<double> x(n), w(n);
    for (int k = 0; k < n; ++k) {
        x[k] = es.eigenvalues()(k);
        w[k] = std::sqrt(pi) * es.eigenvectors()(0, k) * es.eigenvectors()(0, k);
    }
    return {x, w};
}

}  // namespace

TEST(Oracle, ZeroCouplingIsFreeSystemEvolution) {
    const SystemModel sys(ComplexMatrix(0.5 * sigma_z() + 0.2 * sigma_x()), ComplexMatrix::Zero(2, 2));
    const BathModel bath({{0.3, 1.0}}, 0.0);
    const TimeGrid grid(0.1, 50);
    const auto ev = propagate_total(sys, bath, SpaceLayout(2, {4}), plus_state(), grid);
    const auto rho = reduced_density(ev.states);
    for (std::size_t j = 0; j < grid.size(); j += 10) {
        const StateVector psi = ComplexMatrix(-kI * grid.time(j) * sys.hamiltonian).exp() * plus_state();
        EXPECT_LT((rho[j] - psi * psi.adjoint()).norm(), 1e-12);
    }
}

TEST(Oracle, IndependentBosonCoherence) {
    const double g = 0.1, omega = 1.0;
    const BathModel bath({{g, omega}}, 0.0);
    const TimeGrid grid = TimeGrid::from_horizon(2.0 * pi, 2.0 * pi / 400.0);
    const auto ev = propagate_total(pure_dephasing(), bath, SpaceLayout(2, {14}), plus_state(), grid);
    const auto rho = reduced_density(ev.states);
    for (std::size_t j = 0; j < grid.size(); j += 20) {
        const double t = grid.time(j);
        EXPECT_NEAR(std::abs(rho[j](0, 1)), 0.5 * std::exp(-boson_decay(g, omega, 0.0, t)), 1e-8) << t;
        EXPECT_NEAR(rho[j](0, 0).real(), 0.5, 1e-12);
    }
    EXPECT_NEAR(std::abs(rho.back()(0, 1)), 0.5, 1e-8);  // revival at 2 pi / omega
}

TEST(Oracle, ConservesNormAndEnergy) {
    const SystemModel sys = rabi_model();
    const BathModel bath({{0.1, 1.0}, {0.05, 1.7}}, 0.0);
    const SpaceLayout layout(2, {6, 5});
    const TimeGrid grid(0.05, 200);
    const TotalPropagator prop(sys, bath, layout);
    const auto ev = prop.propagate(tensor_product(plus_state(), fock_vacuum(layout)), grid);
    const ComplexMatrix& h = prop.hamiltonian();
    const double e0 = (ev.states[0].psi.adjoint() * h * ev.states[0].psi)(0).real();
    for (const auto& s : ev.states) {
        EXPECT_NEAR(s.psi.squaredNorm(), 1.0, 1e-8);
        EXPECT_NEAR((s.psi.adjoint() * h * s.psi)(0).real(), e0, 1e-8);
    }
}

TEST(Oracle, ReducedDensityIsAPhysicalState) {
    const SystemModel sys = rabi_model();
    const BathModel bath({{0.2, 1.0}}, 0.0);
    const TimeGrid grid(0.1, 100);
    const auto ev = propagate_total(sys, bath, SpaceLayout(2, {10}), plus_state(), grid);
    const auto rho = reduced_density(ev.states);
    EXPECT_NEAR((rho[0] * rho[0]).trace().real(), 1.0, 1e-12);
    for (const auto& r : rho) {
        EXPECT_NEAR(r.trace().real(), 1.0, 1e-10);
        EXPECT_LT(max_asymmetry(r), 1e-14);
        const Eigen::SelfAdjointEigenSolver<ComplexMatrix> es(r);
        EXPECT_GT(es.eigenvalues().minCoeff(), -1e-12);
        EXPECT_LE((r * r).trace().real(), 1.0 + 1e-12);
    }
    EXPECT_LT((rho.back() * rho.back()).trace().real(), 0.999);
}

TEST(Oracle, ExactDiagonalizationMatchesRk4) {
    const SystemModel sys = rabi_model();
    const BathModel bath({{0.2, 1.0}}, 0.0);
    const SpaceLayout layout(2, {8});
    const TimeGrid grid(0.002, 2500);
    const auto a = propagate_total(sys, bath, layout, plus_state(), grid);
    const auto b = propagate_total(sys, bath, layout, plus_state(), grid, std::nullopt, PropagationMethod::rk4);
    for (std::size_t j = 0; j < grid.size(); j += 250) EXPECT_LT((a.states[j].psi - b.states[j].psi).norm(), 1e-7);
}

TEST(Oracle, SmallCutoffRaisesFockLeak) {
    const BathModel bath({{2.0, 1.0}}, 0.0);
    EXPECT_THROW(propagate_total(pure_dephasing(), bath, SpaceLayout(2, {2}), plus_state(), TimeGrid(0.1, 40)),
                 FockLeakError);
    EXPECT_THROW(propagate_total(pure_dephasing(), bath, SpaceLayout(2, {2, 2}), plus_state(), TimeGrid(0.1, 4)),
                 DimensionError);
    EXPECT_THROW(propagate_total(pure_dephasing(), bath, SpaceLayout(2, {4}), StateVector::Ones(3), TimeGrid(0.1, 4)),
                 DimensionError);
}

TEST(BargmannProjection, VacuumAndSingleQuantum) {
    const SpaceLayout layout(2, {3});
    const BathModel bath({{0.1, 1.5}}, 0.0);
    const Complex a(0.3, -0.8);
    TotalState vac{layout, tensor_product(plus_state(), fock_vacuum(layout)), 0.7};
    EXPECT_LT((bargmann_project(vac, bath, CoherentSample{{a}}, true) - plus_state()).norm(), 1e-15);

    StateVector one = StateVector::Zero(4);
    one(1) = 1.0;
    TotalState single{layout, tensor_product(plus_state(), one), 0.7};
    EXPECT_LT((bargmann_project(single, bath, CoherentSample{{a}}, false) - std::conj(a) * plus_state()).norm(), 1e-15);
    const Complex rotated = std::conj(a * std::exp(Complex(0.0, -1.5 * 0.7)));
    EXPECT_LT((bargmann_project(single, bath, CoherentSample{{a}}, true) - rotated * plus_state()).norm(), 1e-15);
}

TEST(BargmannProjection, GaussianMeasureResolvesIdentity) {
    // int d^2a/pi e^{-|a|^2} psi(a) psi(a)^dagger = Tr_env |Psi><Psi|, exact for polynomial psi
    const SystemModel sys = rabi_model();
    const BathModel bath({{0.2, 1.0}}, 0.0);
    const SpaceLayout layout(2, {8});
    const auto ev = propagate_total(sys, bath, layout, plus_state(), TimeGrid(0.5, 6));
    const BargmannProjector projector(layout, bath);
    const auto [x, w] = gauss_hermite(16);
    for (const auto& state : ev.states) {
        ComplexMatrix rho = ComplexMatrix::Zero(2, 2);
        for (std::size_t i = 0; i < x.size(); ++i)
            for (std::size_t k = 0; k < x.size(); ++k) {
                const StateVector p = projector.project(state, CoherentSample{{Complex(x[i], x[k])}}, true);
                rho += (w[i] * w[k] / pi) * p * p.adjoint();
            }
        EXPECT_LT((rho - partial_trace_env(state.psi, layout)).norm(), 1e-12);
    }
}

TEST(ThermalSampling, ZeroTemperatureIsVacuum) {
    const BathModel bath({{0.1, 1.0}, {0.1, 2.0}}, 0.0);
    const SpaceLayout layout(2, {4, 3});
    const auto s = sample_thermal_initial(bath, layout, RngStream{5, 1});
    EXPECT_LT((s.bath_state - fock_vacuum(layout)).norm(), 1e-15);
    EXPECT_EQ(s.resamples, 0u);
}

TEST(ThermalSampling, OccupationIsGeometric) {
    const double omega = 1.0, temperature = 0.8;
    const BathModel bath({{0.1, omega}}, temperature);
    const double nbar = 1.0 / std::expm1(omega / temperature);
    const SpaceLayout layout(2, {30});
    const std::size_t n = 40000;
    Eigen::VectorXd p = Eigen::VectorXd::Zero(31), p2 = Eigen::VectorXd::Zero(31);
    for (std::size_t k = 0; k < n; ++k) {
        const auto s = sample_thermal_initial(bath, layout, RngStream{8, k});
        const Eigen::VectorXd q = s.bath_state.cwiseAbs2();
        p += q;
        p2 += q.cwiseProduct(q);
    }
    p /= double(n);
    p2 /= double(n);
    double mean = 0.0;
    for (int m = 0; m <= 30; ++m) {
        mean += m * p(m);
        const double expected = std::pow(nbar, m) / std::pow(1.0 + nbar, m + 1);
        const double se = std::sqrt(std::max(p2(m) - p(m) * p(m), 0.0) / double(n));
        if (expected > 1e-4) EXPECT_LT(std::abs(p(m) - expected), 5.0 * se + 1e-12) << "n=" << m;
    }
    EXPECT_NEAR(mean, nbar, 0.02);
}

TEST(ThermalOracle, ZeroTemperatureMatchesPureOracle) {
    const SystemModel sys = rabi_model();
    const BathModel bath({{0.2, 1.0}}, 0.0);
    const SpaceLayout layout(2, {8});
    const TimeGrid grid(0.1, 50);
    const auto mix = thermal_reduced_density(sys, bath, layout, plus_state(), grid, 3, 1);
    const auto pure = reduced_density(propagate_total(sys, bath, layout, plus_state(), grid).states);
    for (std::size_t j = 0; j < grid.size(); ++j) EXPECT_LT((mix.evolution.rho[j] - pure[j]).norm(), 1e-10);
}

TEST(ThermalOracle, MixtureFormulaMatchesDirectAverage) {
    const SystemModel sys = rabi_model();
    const BathModel bath({{0.1, 1.0}}, 0.7);
    const SpaceLayout layout(2, {10});
    const TimeGrid grid(0.2, 20);
    const auto mix = thermal_reduced_density(sys, bath, layout, plus_state(), grid, 25, 4);
    std::vector<ComplexMatrix> direct(grid.size(), ComplexMatrix::Zero(2, 2));
    for (std::size_t k = 0; k < 25; ++k) {
        const auto s = sample_thermal_initial(bath, layout, RngStream{4, k});
        const auto rho = reduced_density(propagate_total(sys, bath, layout, plus_state(), grid, s.bath_state).states);
        for (std::size_t j = 0; j < grid.size(); ++j) direct[j] += rho[j] / 25.0;
    }
    for (std::size_t j = 0; j < grid.size(); ++j) EXPECT_LT((mix.evolution.rho[j] - direct[j]).norm(), 1e-10);
}

TEST(ThermalOracle, FiniteTemperatureIndependentBoson) {
    const double g = 0.05, omega = 1.0, temperature = 1.0;
    const BathModel bath({{g, omega}}, temperature);
    const double nbar = 1.0 / std::expm1(omega / temperature);
    const TimeGrid grid = TimeGrid::from_horizon(2.0 * pi, 2.0 * pi / 40.0);
    const auto mix = thermal_reduced_density(pure_dephasing(), bath, SpaceLayout(2, {20}), plus_state(), grid, 20000, 6);
    for (std::size_t j = 0; j < grid.size(); j += 4) {
        const double t = grid.time(j);
        EXPECT_NEAR(mix.evolution.rho[j](0, 1).real(), 0.5 * std::exp(-boson_decay(g, omega, nbar, t)), 0.015) << t;
    }
}

TEST(Lindblad, DephasingClosedForm) {
    const double w0 = 1.3, gamma = 0.4;
    const SystemModel sys(ComplexMatrix(0.5 * w0 * sigma_z()), sigma_z());
    ComplexMatrix rho0(2, 2);
    rho0 << 0.7, Complex(0.2, 0.3), Complex(0.2, -0.3), 0.3;
    const TimeGrid grid(0.01, 500);
    const auto rho = lindblad_solve(sys, gamma, rho0, grid);
    for (std::size_t j = 0; j < grid.size(); j += 25) {
        const double t = grid.time(j);
        EXPECT_LT(std::abs(rho[j](0, 1) - rho0(0, 1) * std::exp(Complex(-2.0 * gamma * t, -w0 * t))), 1e-9);
        EXPECT_NEAR(rho[j](0, 0).real(), 0.7, 1e-12);
        EXPECT_NEAR(rho[j].trace().real(), 1.0, 1e-9);
    }
}

TEST(Lindblad, RejectsBadInput) {
    EXPECT_THROW(lindblad_solve(pure_dephasing(), 0.0, ComplexMatrix::Identity(2, 2), TimeGrid(0.1, 2)),
                 std::invalid_argument);
    EXPECT_THROW(lindblad_solve(pure_dephasing(), 0.1, ComplexMatrix::Identity(3, 3), TimeGrid(0.1, 2)),
                 DimensionError);
}
