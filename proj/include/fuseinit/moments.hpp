#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "fuseinit/error.hpp"
#include "fuseinit/linalg.hpp"
#include "fuseinit/nn.hpp"

namespace fuseinit {

/// Layer indices of a fusion: `first` is the first fused layer (its input is
/// a0), `second` the last one (its input is a1). Indices count flatten markers.
struct FusionBoundary {
    std::size_t first = 0;
    std::size_t second = 1;

    bool operator==(const FusionBoundary&) const = default;
};

/// Empirical first and second moments at a fusion boundary. All covariances
/// use divisor T.
struct MomentSet {
    Vector mean_a0;
    Vector mean_a1;
    Matrix C_a0;    // [L0 x L0]
    Matrix C_a1a0;  // [L1 x L0]
    Matrix C_a1;    // [L1 x L1]
    std::size_t sample_count = 0;
};

/// Two-pass estimate: means first, then centered products.
inline MomentSet estimate_moments(std::span<const Vector> a0, std::span<const Vector> a1) {
    if (a0.size() != a1.size()) throw DataError("moment estimation: a0/a1 sample counts differ");
    if (a0.size() < 2) throw DataError("moment estimation needs at least 2 samples, got " + std::to_string(a0.size()));
    const auto t = static_cast<Eigen::Index>(a0.size());
    const Eigen::Index l0 = a0.front().size();
    const Eigen::Index l1 = a1.front().size();

    MomentSet ms;
    ms.sample_count = a0.size();
    ms.mean_a0 = Vector::Zero(l0);
    ms.mean_a1 = Vector::Zero(l1);
    for (Eigen::Index i = 0; i < t; ++i) {
        if (a0[i].size() != l0 || a1[i].size() != l1) throw DataError("moment estimation: inconsistent sample shapes");
        ms.mean_a0 += a0[i];
        ms.mean_a1 += a1[i];
    }
    const double inv_t = 1.0 / static_cast<double>(t);
    ms.mean_a0 *= inv_t;
    ms.mean_a1 *= inv_t;

    Matrix x0(t, l0), x1(t, l1);
    for (Eigen::Index i = 0; i < t; ++i) {
        x0.row(i) = (a0[i] - ms.mean_a0).transpose();
        x1.row(i) = (a1[i] - ms.mean_a1).transpose();
    }
    ms.C_a0 = symmetrize(x0.transpose() * x0) * inv_t;
    ms.C_a1a0 = (x1.transpose() * x0) * inv_t;
    ms.C_a1 = symmetrize(x1.transpose() * x1) * inv_t;
    return ms;
}

namespace detail {

inline std::vector<Trace> trace_all(const Network& net, std::span<const Vector> inputs, std::size_t max_samples) {
    const std::size_t n = max_samples == 0 ? inputs.size() : std::min(max_samples, inputs.size());
    std::vector<Trace> traces;
    traces.reserve(n);
    for (std::size_t i = 0; i < n; ++i) traces.push_back(forward(net, inputs[i]));
    return traces;
}

}  // namespace detail

/// Moments of a0 = input of layer `first` and a1 = input of layer `second`,
/// read from forward traces of the given samples (the first `max_samples` of
/// them when nonzero). Conv activations are taken channel-major.
inline MomentSet estimate_dense_moments(const Network& net, FusionBoundary b, std::span<const Vector> inputs,
                                        std::size_t max_samples = 0) {
    if (b.first >= b.second || b.second >= net.layers.size()) throw ConfigError("invalid fusion boundary");
    const auto traces = detail::trace_all(net, inputs, max_samples);
    std::vector<Vector> a0, a1;
    a0.reserve(traces.size());
    a1.reserve(traces.size());
    for (const auto& tr : traces) {
        a0.push_back(tr.activations[b.first]);
        a1.push_back(tr.activations[b.second]);
    }
    return estimate_moments(a0, a1);
}

/// Window accumulators for conv-conv fusion.
struct ConvMomentSet {
    std::size_t in_channels = 0;   // M
    std::size_t mid_channels = 0;  // N
    std::size_t out_channels = 0;  // P
    std::size_t input_length = 0;  // L0
    std::size_t mid_length = 0;    // L1 (after the first layer's pooling)
    std::size_t output_length = 0; // L2 = ceil(L0 / stride)
    std::size_t kernel = 0;        // fused filter length
    std::size_t stride = 0;        // fused stride s1 * r1 * s2

    std::vector<Matrix> U;        // [M], kernel x kernel
    std::vector<Vector> z;        // [m * P + p], kernel
    std::vector<Vector> mean_a0;  // [M], length L0
    std::vector<Vector> mean_a1;  // [N], length L1
    /// mean over samples of ||v^p||^2, the energy the fused layer must match
    Vector target_energy;
    /// max over channel pairs of |pooled correlation| of the centered inputs
    double channel_crosscorr_diag = 0.0;
    std::size_t sample_count = 0;

    const Vector& cross(std::size_t m, std::size_t p) const { return z[m * out_channels + p]; }
};

/// Largest absolute correlation between two distinct channels of centered
/// signals, pooling every (sample, position) pair into one coefficient.
inline double channel_crosscorrelation(std::span<const Vector> centered, std::size_t channels, std::size_t length) {
    if (channels < 2) return 0.0;
    Matrix gram = Matrix::Zero(static_cast<Eigen::Index>(channels), static_cast<Eigen::Index>(channels));
    for (const auto& x : centered) {
        for (std::size_t a = 0; a < channels; ++a) {
            const auto xa = x.segment(static_cast<Eigen::Index>(a * length), static_cast<Eigen::Index>(length));
            for (std::size_t b = a; b < channels; ++b) {
                const auto xb = x.segment(static_cast<Eigen::Index>(b * length), static_cast<Eigen::Index>(length));
                gram(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) += xa.dot(xb);
            }
        }
    }
    double worst = 0.0;
    for (Eigen::Index a = 0; a < gram.rows(); ++a) {
        for (Eigen::Index b = a + 1; b < gram.cols(); ++b) {
            const double denom = std::sqrt(gram(a, a) * gram(b, b));
            if (denom > 0.0) worst = std::max(worst, std::abs(gram(a, b)) / denom);
        }
    }
    return worst;
}

/// Accumulates U^m and z^{m,p} from paired samples of a0 (input of the first
/// conv, [M x L0]) and a1 (its pooled output, [N x L1]). `second` supplies the
/// filters h2 that turn centered a1 into the targets v^p.
inline ConvMomentSet accumulate_conv_moments(std::span<const Vector> a0, std::span<const Vector> a1, Shape a0_shape,
                                             Shape a1_shape, const Conv1dLayer& second, std::size_t kernel,
                                             std::size_t stride) {
    if (a0.size() != a1.size()) throw DataError("conv moments: a0/a1 sample counts differ");
    if (a0.size() < 2) throw DataError("conv moments need at least 2 samples, got " + std::to_string(a0.size()));
    if (kernel == 0 || stride == 0) throw ConfigError("fused kernel and stride must be positive");
    if (second.in_channels != a1_shape.channels) throw DataError("conv moments: second layer channel mismatch");

    ConvMomentSet cm;
    cm.in_channels = a0_shape.channels;
    cm.mid_channels = a1_shape.channels;
    cm.out_channels = second.out_channels;
    cm.input_length = a0_shape.length;
    cm.mid_length = a1_shape.length;
    cm.output_length = ceil_div(a0_shape.length, stride);
    cm.kernel = kernel;
    cm.stride = stride;
    cm.sample_count = a0.size();

    const std::size_t M = cm.in_channels, N = cm.mid_channels, P = cm.out_channels;
    const std::size_t L0 = cm.input_length, L1 = cm.mid_length;
    const double inv_t = 1.0 / static_cast<double>(a0.size());

    // pass 1: means
    Vector sum0 = Vector::Zero(static_cast<Eigen::Index>(M * L0));
    Vector sum1 = Vector::Zero(static_cast<Eigen::Index>(N * L1));
    for (std::size_t t = 0; t < a0.size(); ++t) {
        if (static_cast<std::size_t>(a0[t].size()) != M * L0 || static_cast<std::size_t>(a1[t].size()) != N * L1) {
            throw DataError("conv moments: inconsistent sample shapes");
        }
        sum0 += a0[t];
        sum1 += a1[t];
    }
    sum0 *= inv_t;
    sum1 *= inv_t;
    for (std::size_t m = 0; m < M; ++m) cm.mean_a0.push_back(sum0.segment(static_cast<Eigen::Index>(m * L0), static_cast<Eigen::Index>(L0)));
    for (std::size_t n = 0; n < N; ++n) cm.mean_a1.push_back(sum1.segment(static_cast<Eigen::Index>(n * L1), static_cast<Eigen::Index>(L1)));

    // pass 2: centered window accumulation
    cm.U.assign(M, Matrix::Zero(static_cast<Eigen::Index>(kernel), static_cast<Eigen::Index>(kernel)));
    cm.z.assign(M * P, Vector::Zero(static_cast<Eigen::Index>(kernel)));
    cm.target_energy = Vector::Zero(static_cast<Eigen::Index>(P));
    std::vector<Vector> centered0;
    centered0.reserve(a0.size());
    std::vector<Vector> u(M);
    std::vector<Vector> v(P);
    for (std::size_t t = 0; t < a0.size(); ++t) {
        const Vector c0 = a0[t] - sum0;
        const Vector c1 = a1[t] - sum1;
        for (std::size_t m = 0; m < M; ++m) u[m] = flip(zero_pad(channel_view(c0, m, L0), kernel));
        for (std::size_t p = 0; p < P; ++p) {
            v[p] = Vector::Zero(static_cast<Eigen::Index>(ceil_div(L1, second.stride)));
            for (std::size_t n = 0; n < N; ++n) v[p] += convolve(channel_view(c1, n, L1), second.filter(n, p), second.stride);
            if (static_cast<std::size_t>(v[p].size()) != cm.output_length) {
                throw std::logic_error("conv moments: target length " + std::to_string(v[p].size()) +
                                       " differs from ceil(L0 / stride) = " + std::to_string(cm.output_length));
            }
            cm.target_energy[static_cast<Eigen::Index>(p)] += v[p].squaredNorm();
        }
        // 1-based window start i = 1, 1+s, ...; here i0 = i - 1.
        for (std::size_t i0 = 0; i0 < L0; i0 += stride) {
            const auto start = static_cast<Eigen::Index>(L0 - 1 - i0);
            const auto j = static_cast<Eigen::Index>(i0 / stride);
            for (std::size_t m = 0; m < M; ++m) {
                if (start + static_cast<Eigen::Index>(kernel) > u[m].size()) {
                    throw std::logic_error("conv moments: window exceeds padded signal");
                }
                const auto w = u[m].segment(start, static_cast<Eigen::Index>(kernel));
                cm.U[m].noalias() += w * w.transpose();
                for (std::size_t p = 0; p < P; ++p) cm.z[m * P + p] += v[p][j] * w;
            }
        }
        centered0.push_back(c0);
    }
    for (auto& u_m : cm.U) u_m *= inv_t;
    for (auto& z_mp : cm.z) z_mp *= inv_t;
    cm.target_energy *= inv_t;
    cm.channel_crosscorr_diag = channel_crosscorrelation(centered0, M, L0);
    return cm;
}

/// Default fused filter length: the receptive field k1 + (k2 - 1) * s1 * r1.
inline std::size_t default_fused_kernel(const Conv1dLayer& first, const Conv1dLayer& second) {
    return first.kernel + (second.kernel - 1) * first.stride * first.pool.stride;
}

inline std::size_t composed_stride(const Conv1dLayer& first, const Conv1dLayer& second) {
    return first.stride * first.pool.stride * second.stride;
}

/// Conv moments for the adjacent conv pair at `b`, from forward traces.
inline ConvMomentSet estimate_conv_moments(const Network& net, FusionBoundary b, std::span<const Vector> inputs,
                                           std::size_t kernel = 0, std::size_t max_samples = 0) {
    if (b.second != b.first + 1 || b.second >= net.layers.size()) throw ConfigError("conv fusion needs adjacent layers");
    const auto* first = std::get_if<Conv1dLayer>(&net.layers[b.first]);
    const auto* second = std::get_if<Conv1dLayer>(&net.layers[b.second]);
    if (!first || !second) throw ConfigError("conv fusion needs two conv layers");
    const auto shapes = net.shapes();
    const auto traces = detail::trace_all(net, inputs, max_samples);
    std::vector<Vector> a0, a1;
    for (const auto& tr : traces) {
        a0.push_back(tr.activations[b.first]);
        a1.push_back(tr.activations[b.second]);
    }
    if (kernel == 0) kernel = default_fused_kernel(*first, *second);
    return accumulate_conv_moments(a0, a1, shapes[b.first], shapes[b.second], *second, kernel,
                                   composed_stride(*first, *second));
}

/// Mean over samples of the squared l2 distance between paired vectors.
inline double empirical_mse(std::span<const Vector> fused, std::span<const Vector> original) {
    if (fused.empty()) throw DataError("empirical_mse: empty sample set");
    if (fused.size() != original.size()) throw DataError("empirical_mse: unequal trace counts");
    double total = 0.0;
    for (std::size_t t = 0; t < fused.size(); ++t) {
        if (fused[t].size() != original[t].size()) throw DataError("empirical_mse: unequal trace lengths");
        total += (fused[t] - original[t]).squaredNorm();
    }
    return total / static_cast<double>(fused.size());
}

/// Per-output-channel variant for channel-major [channels x length] traces.
inline Vector empirical_channel_mse(std::span<const Vector> fused, std::span<const Vector> original,
                                    std::size_t channels, std::size_t length) {
    if (fused.empty()) throw DataError("empirical_mse: empty sample set");
    if (fused.size() != original.size()) throw DataError("empirical_mse: unequal trace counts");
    Vector out = Vector::Zero(static_cast<Eigen::Index>(channels));
    for (std::size_t t = 0; t < fused.size(); ++t) {
        if (static_cast<std::size_t>(fused[t].size()) != channels * length || fused[t].size() != original[t].size()) {
            throw DataError("empirical_mse: unequal trace lengths");
        }
        for (std::size_t p = 0; p < channels; ++p) {
            const auto seg = static_cast<Eigen::Index>(p * length);
            out[static_cast<Eigen::Index>(p)] +=
                (fused[t].segment(seg, static_cast<Eigen::Index>(length)) - original[t].segment(seg, static_cast<Eigen::Index>(length)))
                    .squaredNorm();
        }
    }
    return out / static_cast<double>(fused.size());
}

}  // namespace fuseinit
