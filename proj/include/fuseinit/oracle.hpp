#pragma once

// Brute-force least-squares references. They build explicit design matrices
// and solve them with a rank-revealing decomposition, so they share no code
// path with the moment/normal-equation route in fusion.hpp.

#include <cstddef>
#include <span>
#include <vector>

#include <Eigen/QR>

#include "fuseinit/error.hpp"
#include "fuseinit/linalg.hpp"

namespace fuseinit::oracle {

struct AffineFit {
    Matrix A;  // [dim_y x dim_x]
    Vector c;  // [dim_y]
    /// mean over samples of ||A x + c - y||^2
    double residual_mse = 0.0;
    /// design matrix [x^T 1] did not have full column rank
    bool degenerate = false;
};

/// Minimizes mean_t ||A x_t + c - y_t||^2.
inline AffineFit affine_lsq(std::span<const Vector> inputs, std::span<const Vector> targets) {
    if (inputs.size() < 2 || inputs.size() != targets.size()) {
        throw DataError("affine_lsq needs T >= 2 paired samples");
    }
    const auto t = static_cast<Eigen::Index>(inputs.size());
    const Eigen::Index dx = inputs.front().size();
    const Eigen::Index dy = targets.front().size();
    Matrix design(t, dx + 1);
    Matrix y(t, dy);
    for (Eigen::Index i = 0; i < t; ++i) {
        if (inputs[i].size() != dx || targets[i].size() != dy) throw DataError("affine_lsq: inconsistent dimensions");
        design.row(i).head(dx) = inputs[i].transpose();
        design(i, dx) = 1.0;
        y.row(i) = targets[i].transpose();
    }
    Eigen::CompleteOrthogonalDecomposition<Matrix> cod(design);
    const Matrix theta = cod.solve(y);  // [(dx+1) x dy]

    AffineFit fit;
    fit.A = theta.topRows(dx).transpose();
    fit.c = theta.row(dx).transpose();
    fit.degenerate = cod.rank() < dx + 1;
    fit.residual_mse = (design * theta - y).squaredNorm() / static_cast<double>(t);
    return fit;
}

struct ConvWindowFit {
    Vector h;  // one filter per input channel, concatenated [channels x k]
    double residual_mse = 0.0;
    bool rank_deficient = false;
};

/// Geometry of the windowed regression problem.
struct WindowProblem {
    std::size_t channels = 1;      // M, input channels
    std::size_t length = 1;        // L0
    std::size_t out_channels = 1;  // P
    std::size_t kernel = 1;        // fused filter length
    std::size_t stride = 1;        // fused stride
};

namespace detail {

inline ConvWindowFit window_lsq(std::span<const Vector> centered_inputs, std::span<const Vector> centered_targets,
                                const WindowProblem& g, std::span<const std::size_t> use_channels, std::size_t p) {
    if (centered_inputs.size() < 2 || centered_inputs.size() != centered_targets.size()) {
        throw DataError("conv_window_lsq needs T >= 2 paired samples");
    }
    const std::size_t k = g.kernel;
    const std::size_t n_out = (g.length + g.stride - 1) / g.stride;
    const std::size_t front = k / 2;
    const auto t_count = centered_inputs.size();
    const auto cols = static_cast<Eigen::Index>(use_channels.size() * k);
    Matrix design = Matrix::Zero(static_cast<Eigen::Index>(t_count * n_out), cols);
    Vector target(static_cast<Eigen::Index>(t_count * n_out));

    for (std::size_t t = 0; t < t_count; ++t) {
        const Vector& x = centered_inputs[t];
        const Vector& v = centered_targets[t];
        if (static_cast<std::size_t>(x.size()) != g.channels * g.length ||
            static_cast<std::size_t>(v.size()) != g.out_channels * n_out) {
            throw DataError("conv_window_lsq: sample shape does not match the window geometry");
        }
        for (std::size_t j = 0; j < n_out; ++j) {
            const auto row = static_cast<Eigen::Index>(t * n_out + j);
            target[row] = v[static_cast<Eigen::Index>(p * n_out + j)];
            for (std::size_t c = 0; c < use_channels.size(); ++c) {
                const std::size_t m = use_channels[c];
                for (std::size_t tau = 0; tau < k; ++tau) {
                    // padded[q] with q = j*s + k-1-tau, padded[q] = x[q - front] inside the signal
                    const std::size_t q = j * g.stride + k - 1 - tau;
                    double value = 0.0;
                    if (q >= front && q - front < g.length) value = x[static_cast<Eigen::Index>(m * g.length + q - front)];
                    design(row, static_cast<Eigen::Index>(c * k + tau)) = value;
                }
            }
        }
    }
    Eigen::CompleteOrthogonalDecomposition<Matrix> cod(design);
    ConvWindowFit fit;
    fit.h = cod.solve(target);
    fit.rank_deficient = cod.rank() < cols;
    fit.residual_mse = (design * fit.h - target).squaredNorm() / static_cast<double>(t_count);
    return fit;
}

}  // namespace detail

/// Regresses output channel p of the centered targets on the stride-s windows
/// of input channel m alone. Inputs are centered, channel-major [M x L0];
/// targets are the centered second-layer pre-activations [P x ceil(L0/s)].
inline ConvWindowFit conv_window_lsq(std::span<const Vector> centered_inputs, std::span<const Vector> centered_targets,
                                     const WindowProblem& g, std::size_t m, std::size_t p) {
    if (m >= g.channels || p >= g.out_channels) throw DataError("conv_window_lsq: channel index out of range");
    const std::size_t use[] = {m};
    return detail::window_lsq(centered_inputs, centered_targets, g, use, p);
}

/// Joint regression on the windows of every input channel at once. Equals the
/// per-channel solution when the channels are empirically uncorrelated.
inline ConvWindowFit conv_window_lsq_joint(std::span<const Vector> centered_inputs,
                                           std::span<const Vector> centered_targets, const WindowProblem& g,
                                           std::size_t p) {
    if (p >= g.out_channels) throw DataError("conv_window_lsq: channel index out of range");
    std::vector<std::size_t> use(g.channels);
    for (std::size_t m = 0; m < g.channels; ++m) use[m] = m;
    return detail::window_lsq(centered_inputs, centered_targets, g, use, p);
}

}  // namespace fuseinit::oracle
