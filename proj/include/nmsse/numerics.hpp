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

// numerics.hpp - dense complex linear algebra and Hilbert-space layout helpers.
//
// Units: hbar = k_B = 1 everywhere in the library.

#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <functional>
#include <numeric>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <unsupported/Eigen/KroneckerProduct>

namespace nmsse {

using Complex = std::complex<double>;
using ComplexMatrix = Eigen::MatrixXcd;
using StateVector = Eigen::VectorXcd;
using RealMatrix = Eigen::MatrixXd;

inline constexpr Complex kI{0.0, 1.0};

/// Largest total Hilbert-space dimension any builder will accept.
inline constexpr std::size_t kDefaultMaxDimension = 16384;

/// Relative tolerance for Hermiticity checks (max-abs asymmetry / max-abs entry).
inline constexpr double kHermitianTolerance = 1e-9;

class DimensionError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

class HermiticityError : public std::invalid_argument {
public:
    HermiticityError(const std::string& name, double asymmetry)
        : std::invalid_argument(name + " is not Hermitian (max asymmetry " +
                                std::to_string(asymmetry) + ")"),
          asymmetry_(asymmetry) {}
    double asymmetry() const noexcept { return asymmetry_; }

private:
    double asymmetry_;
};

inline bool all_finite(const ComplexMatrix& m) {
    return m.allFinite();
}

inline void require_finite(const ComplexMatrix& m, const std::string& name) {
    if (!m.allFinite()) throw std::invalid_argument(name + " contains NaN or Inf entries");
}

/// max |M - M^dagger| over entries; zero for non-square input is meaningless so we throw.
inline double max_asymmetry(const ComplexMatrix& m) {
    if (m.rows() != m.cols()) throw DimensionError("asymmetry of a non-square matrix");
    if (m.size() == 0) return 0.0;
    return (m - m.adjoint()).cwiseAbs().maxCoeff();
}

inline bool is_hermitian(const ComplexMatrix& m, double rel_tol = kHermitianTolerance) {
    if (m.rows() != m.cols()) return false;
    if (m.size() == 0) return true;
    const double scale = m.cwiseAbs().maxCoeff();
    return max_asymmetry(m) <= rel_tol * scale;
}

inline void require_hermitian(const ComplexMatrix& m, const std::string& name,
                              double rel_tol = kHermitianTolerance) {
    if (m.rows() != m.cols())
        throw DimensionError(name + " must be square, got " + std::to_string(m.rows()) + "x" +
                             std::to_string(m.cols()));
    require_finite(m, name);
    if (!is_hermitian(m, rel_tol)) throw HermiticityError(name, max_asymmetry(m));
}

/// (M + M^dagger) / 2
inline ComplexMatrix hermitize(const ComplexMatrix& m) {
    return 0.5 * (m + m.adjoint());
}

/// Kronecker product A (x) B. The left factor is the slowest-varying index.
inline ComplexMatrix tensor_product(const ComplexMatrix& a, const ComplexMatrix& b,
                                    std::size_t max_dim = kDefaultMaxDimension) {
    const auto rows = static_cast<std::size_t>(a.rows()) * static_cast<std::size_t>(b.rows());
    const auto cols = static_cast<std::size_t>(a.cols()) * static_cast<std::size_t>(b.cols());
    if (rows > max_dim || cols > max_dim)
        throw DimensionError("tensor product dimension " + std::to_string(std::max(rows, cols)) +
                             " exceeds limit " + std::to_string(max_dim));
    return Eigen::kroneckerProduct(a, b).eval();
}

inline StateVector tensor_product(const StateVector& a, const StateVector& b) {
    StateVector out(a.size() * b.size());
    for (Eigen::Index i = 0; i < a.size(); ++i) out.segment(i * b.size(), b.size()) = a(i) * b;
    return out;
}

/// Truncated system (x) bath-modes space. The system index varies slowest, then modes in
/// declaration order; each mode keeps Fock levels 0..cutoff.
struct SpaceLayout {
    std::size_t system_dim = 1;
    std::vector<std::size_t> mode_cutoffs;

    SpaceLayout() = default;
    SpaceLayout(std::size_t sys_dim, std::vector<std::size_t> cutoffs,
                std::size_t max_dim = kDefaultMaxDimension)
        : system_dim(sys_dim), mode_cutoffs(std::move(cutoffs)) {
        if (system_dim == 0) throw DimensionError("system dimension must be positive");
        for (auto c : mode_cutoffs)
            if (c == 0) throw DimensionError("Fock cutoffs must be positive");
        std::size_t total = system_dim;
        for (auto c : mode_cutoffs) {
            total *= (c + 1);
            if (total > max_dim)
                throw DimensionError("total dimension exceeds limit " + std::to_string(max_dim) +
                                     " (reduce Fock cutoffs)");
        }
    }

    std::size_t n_modes() const noexcept { return mode_cutoffs.size(); }

    std::size_t env_dim() const noexcept {
        std::size_t e = 1;
        for (auto c : mode_cutoffs) e *= (c + 1);
        return e;
    }

    std::size_t total_dim() const noexcept { return system_dim * env_dim(); }

    /// Occupation numbers of an environment index (mode 0 slowest).
    std::vector<std::size_t> occupations(std::size_t env_index) const {
        std::vector<std::size_t> n(mode_cutoffs.size());
        for (std::size_t i = mode_cutoffs.size(); i-- > 0;) {
            const std::size_t levels = mode_cutoffs[i] + 1;
            n[i] = env_index % levels;
            env_index /= levels;
        }
        return n;
    }

    std::size_t env_index(const std::vector<std::size_t>& occ) const {
        if (occ.size() != mode_cutoffs.size()) throw DimensionError("occupation vector size mismatch");
        std::size_t idx = 0;
        for (std::size_t i = 0; i < occ.size(); ++i) {
            if (occ[i] > mode_cutoffs[i]) throw DimensionError("occupation above cutoff");
            idx = idx * (mode_cutoffs[i] + 1) + occ[i];
        }
        return idx;
    }

    bool operator==(const SpaceLayout&) const = default;
};

/// Truncated annihilation operator on Fock levels 0..cutoff.
inline ComplexMatrix annihilation(std::size_t cutoff) {
    const auto n = static_cast<Eigen::Index>(cutoff + 1);
    ComplexMatrix a = ComplexMatrix::Zero(n, n);
    for (Eigen::Index k = 1; k < n; ++k) a(k - 1, k) = std::sqrt(static_cast<double>(k));
    return a;
}

/// Embeds a single-mode operator for mode `mode` into the full system (x) bath space,
/// with `sys_op` acting on the system factor.
inline ComplexMatrix embed_mode_operator(const SpaceLayout& layout, const ComplexMatrix& sys_op,
                                         std::size_t mode, const ComplexMatrix& mode_op) {
    ComplexMatrix out = sys_op;
    for (std::size_t i = 0; i < layout.n_modes(); ++i) {
        const auto levels = static_cast<Eigen::Index>(layout.mode_cutoffs[i] + 1);
        const ComplexMatrix factor =
            (i == mode) ? mode_op : ComplexMatrix::Identity(levels, levels).eval();
        out = Eigen::kroneckerProduct(out, factor).eval();
    }
    return out;
}

/// Traces out every bath mode of an operator on the layout's total space.
inline ComplexMatrix partial_trace_env(const ComplexMatrix& m, const SpaceLayout& layout) {
    const auto total = static_cast<Eigen::Index>(layout.total_dim());
    if (m.rows() != total || m.cols() != total)
        throw DimensionError("partial trace: matrix is " + std::to_string(m.rows()) + "x" +
                             std::to_string(m.cols()) + ", layout expects " +
                             std::to_string(total));
    const auto d = static_cast<Eigen::Index>(layout.system_dim);
    const auto e = static_cast<Eigen::Index>(layout.env_dim());
    ComplexMatrix out(d, d);
    for (Eigen::Index s = 0; s < d; ++s)
        for (Eigen::Index sp = 0; sp < d; ++sp)
            out(s, sp) = m.block(s * e, sp * e, e, e).trace();
    return out;
}

/// Reduced density of a pure total state, without forming the full projector.
inline ComplexMatrix partial_trace_env(const StateVector& psi, const SpaceLayout& layout) {
    const auto total = static_cast<Eigen::Index>(layout.total_dim());
    if (psi.size() != total) throw DimensionError("partial trace: state dimension mismatch");
    const auto d = static_cast<Eigen::Index>(layout.system_dim);
    const auto e = static_cast<Eigen::Index>(layout.env_dim());
    // Rows of `blocks` are system indices, columns environment indices.
    const Eigen::Map<const Eigen::Matrix<Complex, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>
        blocks(psi.data(), d, e);
    return blocks * blocks.adjoint();
}

/// 1/2 * sum |eig(A - B)|; eigenvalues below 1e-14 in magnitude are clipped to zero.
inline double trace_distance(const ComplexMatrix& a, const ComplexMatrix& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols() || a.rows() != a.cols())
        throw DimensionError("trace distance needs square matrices of equal size");
    require_hermitian(a, "trace_distance lhs");
    require_hermitian(b, "trace_distance rhs");
    const ComplexMatrix diff = hermitize(a - b);
    Eigen::SelfAdjointEigenSolver<ComplexMatrix> es(diff, Eigen::EigenvaluesOnly);
    double sum = 0.0;
    for (Eigen::Index k = 0; k < es.eigenvalues().size(); ++k) {
        const double lambda = std::abs(es.eigenvalues()(k));
        if (lambda >= 1e-14) sum += lambda;
    }
    return 0.5 * sum;
}

/// Top-Fock-level population: warn above the first, fail above the second.
inline constexpr double kFockLeakWarn = 1e-6;
inline constexpr double kFockLeakError = 1e-3;

class FockLeakError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// For every mode, the flat total-space indices whose occupation of that mode sits at the cutoff.
inline std::vector<std::vector<Eigen::Index>> top_fock_level_indices(const SpaceLayout& layout) {
    std::vector<std::vector<Eigen::Index>> out(layout.n_modes());
    const std::size_t e = layout.env_dim();
    for (std::size_t env = 0; env < e; ++env) {
        const auto occ = layout.occupations(env);
        for (std::size_t i = 0; i < occ.size(); ++i)
            if (occ[i] == layout.mode_cutoffs[i])
                for (std::size_t s = 0; s < layout.system_dim; ++s)
                    out[i].push_back(static_cast<Eigen::Index>(s * e + env));
    }
    return out;
}

/// Largest fraction of |psi|^2 found in any mode's top Fock level.
inline double top_fock_population(const StateVector& psi,
                                  const std::vector<std::vector<Eigen::Index>>& top_levels) {
    const double total = psi.squaredNorm();
    if (total <= 0.0) return 0.0;
    double worst = 0.0;
    for (const auto& idx : top_levels) {
        double p = 0.0;
        for (auto k : idx) p += std::norm(psi(k));
        worst = std::max(worst, p / total);
    }
    return worst;
}

/// Frobenius norm of [A, B].
inline double commutator_norm(const ComplexMatrix& a, const ComplexMatrix& b) {
    return (a * b - b * a).norm();
}

/// Pairwise (tree) summation over [0, n) with fixed association order, independent of how
/// the terms were produced. `term(i)` must return a value; `add(x, y)` combines two partial sums.
template <typename T, typename Term, typename Add>
T pairwise_sum(std::size_t begin, std::size_t end, const Term& term, const Add& add) {
    if (end - begin == 1) return term(begin);
    const std::size_t mid = begin + (end - begin) / 2;
    return add(pairwise_sum<T>(begin, mid, term, add), pairwise_sum<T>(mid, end, term, add));
}

}  // namespace nmsse
