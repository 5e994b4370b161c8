#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <sstream>

#include <Eigen/Cholesky>
#include <Eigen/Core>
#include <Eigen/Eigenvalues>

#include "fuseinit/error.hpp"

namespace fuseinit {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Controls the symmetric solve used for C_a0 and the conv Gram matrices.
///
/// A plain Cholesky factorization is tried first. It counts as failed when the
/// factorization breaks down or its reciprocal condition estimate falls below
/// `min_rcond`. On failure a ridge of eps * (trace / dim) is added, with eps
/// running from `ridge_start` to `ridge_stop` in decades. If that still fails,
/// a spectral pseudo-inverse with relative cutoff `pinv_cutoff` is used, unless
/// `allow_pseudo_inverse` is false, in which case the solve throws.
struct SolvePolicy {
    double min_rcond = 1e-12;
    double ridge_start = 1e-8;
    double ridge_stop = 1e-4;
    double pinv_cutoff = 1e-10;
    bool allow_pseudo_inverse = true;
};

struct SolveReport {
    /// Absolute value added to the diagonal (0 when no ridge was needed).
    double ridge_used = 0.0;
    /// 1 / rcond of the factorization that was finally used.
    double condition_estimate = 1.0;
    bool pseudo_inverse = false;
};

inline bool all_finite(const Matrix& m) { return m.allFinite(); }

inline Matrix symmetrize(const Matrix& m) { return 0.5 * (m + m.transpose()); }

/// Solves A X = B for symmetric positive semidefinite A.
inline Matrix solve_symmetric(const Matrix& a, const Matrix& b, SolveReport& report,
                              const SolvePolicy& policy = {}) {
    const Eigen::Index n = a.rows();
    if (a.cols() != n || b.rows() != n) {
        throw DataError("solve_symmetric: dimension mismatch");
    }
    if (!a.allFinite() || !b.allFinite()) {
        throw NumericalError("solve_symmetric: non-finite matrix entries");
    }
    report = SolveReport{};
    if (n == 0) return Matrix::Zero(0, b.cols());

    auto try_cholesky = [&](const Matrix& m, Matrix& out) {
        Eigen::LLT<Matrix> llt(m);
        if (llt.info() != Eigen::Success) return false;
        const double rcond = llt.rcond();
        if (!(rcond >= policy.min_rcond)) return false;
        out = llt.solve(b);
        report.condition_estimate = 1.0 / rcond;
        return out.allFinite();
    };

    Matrix x;
    if (try_cholesky(a, x)) return x;

    const double scale = a.trace() / static_cast<double>(n);
    if (scale > 0.0) {
        for (double eps = policy.ridge_start; eps <= policy.ridge_stop * (1.0 + 1e-9); eps *= 10.0) {
            const double lambda = eps * scale;
            Matrix shifted = a;
            shifted.diagonal().array() += lambda;
            if (try_cholesky(shifted, x)) {
                report.ridge_used = lambda;
                return x;
            }
        }
    }

    if (!policy.allow_pseudo_inverse) {
        std::ostringstream os;
        os << "singular moment matrix (dim " << n << ", condition estimate "
           << report.condition_estimate << ")";
        throw NumericalError(os.str());
    }

    Eigen::SelfAdjointEigenSolver<Matrix> eig(symmetrize(a));
    if (eig.info() != Eigen::Success) {
        throw NumericalError("solve_symmetric: eigendecomposition failed");
    }
    const Vector& lambda = eig.eigenvalues();
    const double lmax = std::max(lambda.maxCoeff(), 0.0);
    const double cutoff = policy.pinv_cutoff * lmax;
    Vector inv = Vector::Zero(n);
    double lmin_kept = lmax;
    for (Eigen::Index i = 0; i < n; ++i) {
        if (lambda[i] > cutoff && lambda[i] > 0.0) {
            inv[i] = 1.0 / lambda[i];
            lmin_kept = std::min(lmin_kept, lambda[i]);
        }
    }
    const Matrix& q = eig.eigenvectors();
    x = q * inv.asDiagonal() * (q.transpose() * b);
    report.pseudo_inverse = true;
    report.condition_estimate =
        lmax > 0.0 ? lmax / lmin_kept : std::numeric_limits<double>::infinity();
    return x;
}

inline double min_eigenvalue(const Matrix& m) {
    if (m.rows() == 0) return 0.0;
    Eigen::SelfAdjointEigenSolver<Matrix> eig(symmetrize(m), Eigen::EigenvaluesOnly);
    return eig.eigenvalues().minCoeff();
}

inline std::size_t ceil_div(std::size_t a, std::size_t b) { return (a + b - 1) / b; }

}  // namespace fuseinit
