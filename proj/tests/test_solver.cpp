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
#include "nmsse/solver.hpp"

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

SystemModel dephasing_model() { return SystemModel(0.5 * sigma_z(), sigma_z()); }
SystemModel rabi_model() { return SystemModel(ComplexMatrix(0.5 * sigma_z() + 0.5 * sigma_x()), sigma_z()); }

ComplexMatrix propagator(const ComplexMatrix& h, double t) { return ComplexMatrix(-kI * t * h).exp(); }

template <typename F>
ComplexMatrix simpson_matrix(F&& f, double a, double b, int n) {
    const double h = (b - a) / n;
    ComplexMatrix s = f(a) + f(b);
    for (int k = 1; k < n; ++k) s += (k % 2 ? 4.0 : 2.0) * f(a + k * h);
    return s * (h / 3.0);
}

/// Golub-Welsch nodes and weights for the weight e^{-x^2}.
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

TEST(Solver, FreeEvolutionIsUnitary) {
    const SystemModel sys = rabi_model();
    const BathModel bath;
    const TimeGrid grid(0.01, 1000);
    const auto closure = closure_born(sys, bath, grid);
    const auto z = sample_mode_sum_T0(bath, grid, RngStream{1, 0});
    const auto tr = run_trajectory(sys, closure, z, grid, plus_state());
    ASSERT_EQ(tr.states.size(), grid.size());
    for (std::size_t j = 0; j < grid.size(); j += 100) {
        EXPECT_NEAR(tr.states[j].psi.squaredNorm(), 1.0, 1e-8);
        EXPECT_LT((tr.states[j].psi - propagator(sys.hamiltonian, grid.time(j)) * plus_state()).norm(), 1e-8);
    }
}

TEST(Solver, DephasingComponentsFollowClosedFormExponential) {
    const SystemModel sys = dephasing_model();
    const BathModel bath({{0.25, 1.0}, {0.1, 2.3}}, 0.0);
    const TimeGrid grid(0.005, 2000);
    const auto closure = closure_dephasing(sys, bath, grid);
    const auto z = sample_mode_sum_T0(bath, grid, RngStream{3, 9});
    const auto tr = run_trajectory(sys, closure, z, grid, plus_state());
    for (std::size_t j = 0; j < grid.size(); j += 50) {
        const double t = grid.time(j);
        // integral of Z from the stored amplitudes: sum kappa a* (e^{i w t} - 1) / (i w)
        Complex int_z{0.0, 0.0};
        for (std::size_t i = 0; i < bath.modes.size(); ++i)
            int_z += bath.modes[i].kappa() * std::conj(z.coherent_a[i]) *
                     (std::exp(Complex(0.0, bath.modes[i].omega * t)) - 1.0) / Complex(0.0, bath.modes[i].omega);
        const Complex b = kernel_double_integral(bath, t);
        for (int k = 0; k < 2; ++k) {
            const double l = sys.coupling(k, k).real();
            const double energy = sys.hamiltonian(k, k).real();
            const Complex expected =
                plus_state()(k) * std::exp(Complex(0.0, -energy * t) + kI * l * int_z - l * l * b);
            EXPECT_LT(std::abs(tr.states[j].psi(k) - expected), 1e-8) << "t=" << t << " k=" << k;
        }
    }
}

TEST(Solver, Rk4SelfConvergenceFourthOrder) {
    const SystemModel sys = rabi_model();
    const BathModel bath = BathModel({{0.2, 1.0}}, 0.0);
    const std::vector<Complex> a{Complex(0.8, -0.6)};
    auto final_state = [&](double dt) {
        const TimeGrid grid = TimeGrid::from_horizon(4.0, dt);
        const auto closure = closure_born(sys, bath, grid);
        const auto z = ModeSumSampler(bath, grid, false).from_amplitudes(a);
        return run_trajectory(sys, closure, z, grid, plus_state()).states.back().psi;
    };
    const StateVector p1 = final_state(0.2), p2 = final_state(0.1), p3 = final_state(0.05);
    const double ratio = (p1 - p2).norm() / (p2 - p3).norm();
    EXPECT_GE(ratio, 12.0);
    EXPECT_LE(ratio, 20.0);
}

TEST(Solver, SubstepsConvergeToFineGrid) {
    const SystemModel sys = rabi_model();
    const BathModel bath = BathModel({{0.2, 1.0}}, 0.0);
    const std::vector<Complex> a{Complex(0.3, 0.4)};
    const TimeGrid coarse = TimeGrid::from_horizon(2.0, 0.1);
    const TimeGrid fine = TimeGrid::from_horizon(2.0, 0.025);
    const auto zc = ModeSumSampler(bath, coarse, false).from_amplitudes(a);
    const auto zf = ModeSumSampler(bath, fine, false).from_amplitudes(a);
    const auto sub = run_trajectory(sys, closure_born(sys, bath, coarse), zc, coarse, plus_state(), {4});
    const auto ref = run_trajectory(sys, closure_born(sys, bath, fine), zf, fine, plus_state());
    EXPECT_LT((sub.states.back().psi - ref.states.back().psi).norm(), 1e-12);
}

TEST(Solver, LinearInInitialState) {
    const SystemModel sys = rabi_model();
    const BathModel bath = BathModel({{0.2, 1.0}, {0.05, 0.4}}, 0.0);
    const TimeGrid grid(0.01, 500);
    const auto closure = closure_born(sys, bath, grid);
    const auto z = sample_mode_sum_T0(bath, grid, RngStream{2, 2});
    StateVector e0 = StateVector::Zero(2), e1 = StateVector::Zero(2);
    e0(0) = 1.0;
    e1(1) = 1.0;
    const Complex alpha(0.3, -1.2), beta(-0.7, 0.1);
    const auto r0 = run_trajectory(sys, closure, z, grid, e0);
    const auto r1 = run_trajectory(sys, closure, z, grid, e1);
    const auto rc = run_trajectory(sys, closure, z, grid, StateVector(alpha * e0 + beta * e1));
    for (std::size_t j = 0; j < grid.size(); j += 50)
        EXPECT_LT((rc.states[j].psi - (alpha * r0.states[j].psi + beta * r1.states[j].psi)).norm(), 1e-9);
}

TEST(DephasingClosure, KernelIntegralAtPi) {
    const SystemModel sys = dephasing_model();
    const BathModel bath({{1.0, 1.0}}, 0.0);
    const TimeGrid grid(pi / 100.0, 100);
    const auto closure = closure_dephasing(sys, bath, grid);
    EXPECT_LT((closure.memory_matrix(pi) - Complex(0.0, -2.0) * sys.coupling).norm(), 1e-12);
    EXPECT_EQ(closure.memory_matrix(0.0).norm(), 0.0);
    // trapezoid quadrature on the tabulated kernel, error O(dt^2)
    const auto quad = closure_dephasing(sys, tabulate_kernel(bath, grid));
    EXPECT_LT((quad.memory_matrix(pi) - closure.memory_matrix(pi)).norm(), 1e-3);
}

TEST(DephasingClosure, ZeroKernelHasNoMemory) {
    const SystemModel sys = dephasing_model();
    const auto closure = closure_dephasing(sys, BathModel{}, TimeGrid(0.1, 20));
    for (double t : {0.0, 0.5, 1.3, 2.0}) EXPECT_EQ(closure.memory_matrix(t).norm(), 0.0);
}

TEST(DephasingClosure, RejectsNonCommutingModel) {
    EXPECT_THROW(closure_dephasing(rabi_model(), BathModel({{0.1, 1.0}}, 0.0), TimeGrid(0.1, 10)),
                 std::invalid_argument);
}

TEST(DephasingClosure, MarkovCombPlateau) {
    const double gamma = 0.4;
    const auto closure = closure_dephasing(dephasing_model(), markov_reference_bath(gamma, 64, 32.0), TimeGrid(0.01, 400));
    for (double t : {1.0, 2.0, 4.0}) EXPECT_NEAR(closure.memory_matrix(t)(0, 0).real(), gamma / 2.0, 0.1 * gamma / 2.0);
}

TEST(BornClosure, CommutingCaseEqualsDephasing) {
    const SystemModel sys = dephasing_model();
    const BathModel bath({{0.2, 0.6}, {0.1, 1.7}}, 0.9);
    const TimeGrid grid(0.01, 500);
    const auto born = closure_born(sys, bath, grid);
    const auto deph = closure_dephasing(sys, bath, grid);
    for (double t : {0.0, 0.005, 0.37, 2.5, 5.0}) EXPECT_LT((born.memory_matrix(t) - deph.memory_matrix(t)).norm(), 1e-8);
    const KernelGrid k = tabulate_kernel(bath, grid);
    const auto born_q = closure_born(sys, k);
    const auto deph_q = closure_dephasing(sys, k);
    for (double t : {0.0, 0.37, 2.5, 5.0}) EXPECT_LT((born_q.memory_matrix(t) - deph_q.memory_matrix(t)).norm(), 1e-8);
}

TEST(BornClosure, ClosedFormMatchesQuadratureOfRotatedCoupling) {
    const SystemModel sys = rabi_model();
    const BathModel bath({{0.2, 0.6}, {0.1, 1.7}}, 0.4);
    const TimeGrid grid(0.01, 400);
    const auto born = closure_born(sys, bath, grid);
    for (double t : {0.5, 1.7, 4.0}) {
        const ComplexMatrix quad = simpson_matrix(
            [&](double tau) -> ComplexMatrix {
                const ComplexMatrix u = propagator(sys.hamiltonian, tau);
                return kernel_alpha(bath, tau, 0.0) * (u * sys.coupling * u.adjoint());
            },
            0.0, t, 400);
        EXPECT_LT((born.memory_matrix(t) - quad).norm(), 1e-9) << "t=" << t;
    }
    EXPECT_EQ(born.memory_matrix(0.0).norm(), 0.0);
    const auto born_q = closure_born(sys, tabulate_kernel(bath, grid));
    EXPECT_LT((born_q.memory_matrix(4.0) - born.memory_matrix(4.0)).norm(), 1e-4);
}

TEST(BornClosure, EnsembleErrorScalesAsFourthPowerOfCoupling) {
    // Exact ensemble average over a ~ CN(0, 1) by tensor Gauss-Hermite quadrature, compared with
    // the unitary oracle, with g = eps^2 * g0.
    const SystemModel sys = rabi_model();
    const TimeGrid grid = TimeGrid::from_horizon(5.0, 0.01);
    const auto [nodes, weights] = gauss_hermite(24);
    std::vector<double> errors;
    const std::vector<double> eps{0.1, 0.2, 0.4};
    for (double e : eps) {
        const BathModel bath({{e * e * 1.0, 1.0}}, 0.0);
        const auto born = closure_born(sys, bath, grid);
        const ModeSumSampler sampler(bath, grid, false);
        std::vector<ComplexMatrix> rho(grid.size(), ComplexMatrix::Zero(2, 2));
        for (std::size_t i = 0; i < nodes.size(); ++i)
            for (std::size_t k = 0; k < nodes.size(); ++k) {
                const std::vector<Complex> a{Complex(nodes[i], nodes[k])};
                const double w = weights[i] * weights[k] / pi;
                const auto tr = run_trajectory(sys, born, sampler.from_amplitudes(a), grid, plus_state());
                for (std::size_t j = 0; j < grid.size(); ++j)
                    rho[j] += w * tr.states[j].psi * tr.states[j].psi.adjoint();
            }
        const auto oracle = propagate_total(sys, bath, SpaceLayout(2, {10}), plus_state(), grid);
        const auto exact = reduced_density(oracle.states);
        double worst = 0.0;
        for (std::size_t j = 0; j < grid.size(); ++j) worst = std::max(worst, trace_distance(rho[j], exact[j]));
        errors.push_back(worst);
    }
    const double slope = std::log(errors[2] / errors[0]) / std::log(eps[2] / eps[0]);
    RecordProperty("slope", std::to_string(slope));
    EXPECT_NEAR(slope, 4.0, 0.5) << errors[0] << " " << errors[1] << " " << errors[2];
}

TEST(BargmannClosure, ZeroCouplingGivesFreeEvolution) {
    const SystemModel sys(ComplexMatrix(0.5 * sigma_z() + 0.3 * sigma_x()), ComplexMatrix::Zero(2, 2));
    const BathModel bath({{0.2, 1.0}}, 0.0);
    const TimeGrid grid(0.01, 300);
    const auto closure = closure_bargmann(sys, bath, SpaceLayout(2, {5}));
    for (std::uint64_t k = 0; k < 3; ++k) {
        const auto z = sample_mode_sum_T0(bath, grid, RngStream{4, k});
        const auto tr = run_trajectory(sys, closure, z, grid, plus_state());
        EXPECT_LT((tr.states.back().psi - propagator(sys.hamiltonian, grid.t_max()) * plus_state()).norm(), 1e-9);
    }
}

TEST(BargmannClosure, ZeroAmplitudeExposesVacuumComponent) {
    const SystemModel sys = rabi_model();
    const BathModel bath({{0.2, 1.0}}, 0.0);
    const TimeGrid grid(0.01, 200);
    const SpaceLayout layout(2, {6});
    const auto closure = closure_bargmann(sys, bath, layout);
    const std::vector<Complex> zero{Complex(0.0, 0.0)};
    const auto z = ModeSumSampler(bath, grid, false).from_amplitudes(zero);
    const auto tr = run_trajectory(sys, closure, z, grid, plus_state());
    const auto fock = run_fock_trajectory(sys, closure, grid, plus_state());
    const auto e = static_cast<Eigen::Index>(layout.env_dim());
    for (std::size_t j = 0; j < grid.size(); j += 20)
        for (Eigen::Index s = 0; s < 2; ++s) EXPECT_LT(std::abs(tr.states[j].psi(s) - fock[j](s * e)), 1e-15);
}

TEST(BargmannClosure, ExposedStateIsAnalyticInConjugateAmplitude) {
    const SystemModel sys = rabi_model();
    const BathModel bath({{0.2, 1.0}, {0.1, 1.6}}, 0.0);
    const SpaceLayout layout(2, {5, 4});
    const auto closure = closure_bargmann(sys, bath, layout);
    const auto fock = run_fock_trajectory(sys, closure, TimeGrid(0.01, 150), plus_state()).back();
    const auto& c = closure.bargmann();
    const std::vector<Complex> a{Complex(0.4, -0.3), Complex(-0.2, 0.5)};
    const double h = 1e-4;
    for (std::size_t i = 0; i < 2; ++i) {
        // d/d a_i^*: shift a_i^* by +-h (a_i by +-h for real h) and by +-ih (a_i by -+ih)
        auto shifted = [&](Complex delta_conj) {
            auto b = a;
            b[i] += std::conj(delta_conj);
            return c.evaluate(fock, b);
        };
        const StateVector fd = (shifted(h) - shifted(-h)) / (2.0 * h);
        const StateVector fd_imag = (shifted(Complex(0, h)) - shifted(Complex(0, -h))) / Complex(0.0, 2.0 * h);
        const ComplexMatrix lower =
            embed_mode_operator(layout, ComplexMatrix::Identity(2, 2), i, annihilation(layout.mode_cutoffs[i]));
        const StateVector analytic = c.evaluate(lower * fock, a);
        EXPECT_LT((fd - analytic).norm(), 1e-5 * analytic.norm());
        EXPECT_LT((fd_imag - analytic).norm(), 1e-5 * analytic.norm());  // Cauchy-Riemann
    }
}

TEST(BargmannClosure, MatchesRotatedProjectionOfOracle) {
    const SystemModel sys = rabi_model();
    const BathModel bath({{0.25, 1.0}}, 0.0);
    const TimeGrid grid = TimeGrid::from_horizon(10.0, 0.01);
    const SpaceLayout layout(2, {12});
    const auto oracle = propagate_total(sys, bath, layout, plus_state(), grid);
    const auto closure = closure_bargmann(sys, bath, layout);
    const BargmannProjector projector(layout, bath);
    const ModeSumSampler sampler(bath, grid, false);
    for (std::uint64_t k = 0; k < 5; ++k) {
        const auto z = sampler.sample(RngStream{30, k});
        const CoherentSample a{z.coherent_a};
        double worst = 0.0;
        integrate_trajectory(sys, closure, z, grid, plus_state(), [&](std::size_t j, double, const StateVector& psi) {
            worst = std::max(worst, (psi - projector.project(oracle.states[j], a, true)).norm());
        });
        EXPECT_LT(worst, 1e-6);
    }
}

TEST(BargmannClosure, RequiresModeSumProvenance) {
    const SystemModel sys = dephasing_model();
    const BathModel bath({{0.2, 1.0}}, 0.0);
    const TimeGrid grid(0.1, 20);
    const auto closure = closure_bargmann(sys, bath, SpaceLayout(2, {4}));
    const auto gf = sample_grid_factorization(tabulate_kernel(bath, grid), RngStream{1, 0});
    EXPECT_THROW(run_trajectory(sys, closure, gf, grid, plus_state()), SolverError);
    const auto th = sample_thermal_mode_sum(bath, grid, RngStream{1, 0});
    EXPECT_THROW(run_trajectory(sys, closure, th, grid, plus_state()), SolverError);
    EXPECT_THROW(closure_bargmann(sys, BathModel({{0.2, 1.0}}, 0.3), SpaceLayout(2, {4})), std::invalid_argument);
}

TEST(BargmannClosure, FockLeakAboveToleranceThrows) {
    const SystemModel sys = dephasing_model();
    const BathModel bath({{4.0, 1.0}}, 0.0);
    const TimeGrid grid(0.01, 300);
    const auto closure = closure_bargmann(sys, bath, SpaceLayout(2, {2}));
    const auto z = sample_mode_sum_T0(bath, grid, RngStream{1, 0});
    EXPECT_THROW(run_trajectory(sys, closure, z, grid, plus_state()), FockLeakError);
}

TEST(Solver, GridMismatchAndNonFiniteAreErrors) {
    const SystemModel sys = dephasing_model();
    const BathModel bath({{0.2, 1.0}}, 0.0);
    const TimeGrid grid(0.1, 20);
    const auto closure = closure_dephasing(sys, bath, grid);
    const auto z_other = sample_mode_sum_T0(bath, TimeGrid(0.1, 21), RngStream{1, 0});
    EXPECT_THROW(run_trajectory(sys, closure, z_other, grid, plus_state()), SolverError);
    EXPECT_THROW(run_trajectory(sys, closure, sample_mode_sum_T0(bath, grid, RngStream{1, 0}), TimeGrid(0.1, 20),
                                StateVector::Ones(3)),
                 DimensionError);

    const SystemModel stiff(ComplexMatrix(1e3 * sigma_z()), sigma_z());
    const BathModel strong({{400.0, 1.0}}, 0.0);
    const TimeGrid big(1.0, 400);
    const auto c2 = closure_dephasing(stiff, strong, big);
    EXPECT_THROW(run_trajectory(stiff, c2, sample_mode_sum_T0(strong, big, RngStream{1, 0}), big, plus_state()),
                 SolverError);
}

TEST(ClosureKind, StringRoundTrip) {
    for (auto k : {ClosureKind::dephasing_exact, ClosureKind::born_weak_coupling, ClosureKind::bargmann_exact})
        EXPECT_EQ(closure_kind_from_string(to_string(k)), k);
    EXPECT_THROW(closure_kind_from_string("markov"), std::invalid_argument);
}
