#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fuseinit/error.hpp"
#include "fuseinit/init.hpp"
#include "fuseinit/linalg.hpp"
#include "fuseinit/moments.hpp"
#include "fuseinit/nn.hpp"

namespace fuseinit {

// ---------------------------------------------------------------------------
// Dense-dense and conv-dense

struct DenseFusionResult {
    Matrix weights;  // [L2 x L0]
    Vector bias;     // [L2]
    double predicted_mse = 0.0;
    double ridge_used = 0.0;
    double condition_estimate = 1.0;
    bool pseudo_inverse = false;
    std::vector<std::string> warnings;
};

namespace detail {

inline void check_dense_dims(const MomentSet& ms, const Matrix& w2) {
    if (static_cast<Eigen::Index>(ms.mean_a1.size()) != w2.cols() || ms.C_a1a0.rows() != w2.cols() ||
        ms.C_a1a0.cols() != ms.C_a0.rows()) {
        throw DataError("fuse_dense: moment dimensions do not match W2 (" + std::to_string(w2.rows()) + "x" +
                        std::to_string(w2.cols()) + ")");
    }
}

/// trace(W2 C_a1 W2^T) - <W~, W2 C_a1a0>, which equals
/// trace(W2 (C_a1 - C_a1a0 C_a0^-1 C_a0a1) W2^T) whenever W~ C_a0 = W2 C_a1a0.
inline double closed_form_mse(const MomentSet& ms, const Matrix& w2, const Matrix& w_tilde, const Matrix& w2_cross) {
    const double total = (w2 * ms.C_a1 * w2.transpose()).trace();
    return total - w_tilde.cwiseProduct(w2_cross).sum();
}

}  // namespace detail

/// MMSE affine replacement W~ a0 + b~ for W2 a1 + b2.
inline DenseFusionResult fuse_dense(const MomentSet& ms, const Matrix& w2, const Vector& b2,
                                    const SolvePolicy& policy = {}) {
    detail::check_dense_dims(ms, w2);
    if (b2.size() != w2.rows()) throw DataError("fuse_dense: b2 length does not match W2");

    DenseFusionResult r;
    const Matrix w2_cross = w2 * ms.C_a1a0;  // [L2 x L0]
    SolveReport rep;
    // W~ C_a0 = W2 C_a1a0  <=>  C_a0 W~^T = (W2 C_a1a0)^T
    r.weights = solve_symmetric(ms.C_a0, w2_cross.transpose(), rep, policy).transpose();
    r.bias = w2 * ms.mean_a1 + b2 - r.weights * ms.mean_a0;
    r.ridge_used = rep.ridge_used;
    r.condition_estimate = rep.condition_estimate;
    r.pseudo_inverse = rep.pseudo_inverse;
    if (rep.ridge_used > 0.0) r.warnings.push_back("C_a0 regularized with ridge " + std::to_string(rep.ridge_used));
    if (rep.pseudo_inverse) r.warnings.push_back("C_a0 inverted by spectral pseudo-inverse");

    double mse = detail::closed_form_mse(ms, w2, r.weights, w2_cross);
    if (mse < 0.0) {
        if (mse < -1e-10) r.warnings.push_back("negative predicted MSE " + std::to_string(mse) + " clamped to 0");
        mse = 0.0;
    }
    r.predicted_mse = mse;
    return r;
}

/// Closed-form MSE of the fused layer, clamped at zero.
inline double predict_mse(const MomentSet& ms, const Matrix& w2, const SolvePolicy& policy = {}) {
    detail::check_dense_dims(ms, w2);
    const Matrix w2_cross = w2 * ms.C_a1a0;
    SolveReport rep;
    const Matrix w_tilde = solve_symmetric(ms.C_a0, w2_cross.transpose(), rep, policy).transpose();
    return std::max(0.0, detail::closed_form_mse(ms, w2, w_tilde, w2_cross));
}

// ---------------------------------------------------------------------------
// Conv-conv

struct ConvFusionResult {
    std::size_t in_channels = 0;
    std::size_t out_channels = 0;
    std::size_t kernel = 0;
    std::size_t stride = 0;
    std::vector<Vector> filters;  // [m * P + p], length kernel
    std::vector<Vector> bias;     // [p], one value per output position
    /// per output channel C-MSE on the moment samples (filled by fuse_layers)
    Vector channel_mse;
    double assumption_diagnostic = 0.0;
    double ridge_used = 0.0;  // largest ridge over the per-channel solves
    double condition_estimate = 1.0;
    bool pseudo_inverse = false;
    std::vector<std::string> warnings;

    const Vector& filter(std::size_t m, std::size_t p) const { return filters[m * out_channels + p]; }
};

/// Per-channel normal equations U^m h = z^{m,p} plus the position-dependent
/// bias. Bias terms are convolved with their originating layer's padding and
/// stride so they line up with the pre-activation traces.
inline ConvFusionResult fuse_conv(const ConvMomentSet& cm, const Conv1dLayer& second, const SolvePolicy& policy = {}) {
    if (second.out_channels != cm.out_channels || second.in_channels != cm.mid_channels) {
        throw DataError("fuse_conv: second layer does not match the moment set");
    }
    ConvFusionResult r;
    r.in_channels = cm.in_channels;
    r.out_channels = cm.out_channels;
    r.kernel = cm.kernel;
    r.stride = cm.stride;
    r.assumption_diagnostic = cm.channel_crosscorr_diag;
    r.filters.assign(cm.in_channels * cm.out_channels, Vector());

    for (std::size_t m = 0; m < cm.in_channels; ++m) {
        Matrix rhs(static_cast<Eigen::Index>(cm.kernel), static_cast<Eigen::Index>(cm.out_channels));
        for (std::size_t p = 0; p < cm.out_channels; ++p) rhs.col(static_cast<Eigen::Index>(p)) = cm.cross(m, p);
        SolveReport rep;
        Matrix h;
        try {
            h = solve_symmetric(cm.U[m], rhs, rep, policy);
        } catch (const NumericalError& e) {
            throw NumericalError("fuse_conv: input channel " + std::to_string(m) + ": " + e.what());
        }
        for (std::size_t p = 0; p < cm.out_channels; ++p) r.filters[m * cm.out_channels + p] = h.col(static_cast<Eigen::Index>(p));
        r.ridge_used = std::max(r.ridge_used, rep.ridge_used);
        r.condition_estimate = std::max(r.condition_estimate, rep.condition_estimate);
        r.pseudo_inverse = r.pseudo_inverse || rep.pseudo_inverse;
        if (rep.ridge_used > 0.0) r.warnings.push_back("U of channel " + std::to_string(m) + " regularized");
        if (rep.pseudo_inverse) r.warnings.push_back("U of channel " + std::to_string(m) + " pseudo-inverted");
    }

    const std::size_t l2 = cm.output_length;
    for (std::size_t p = 0; p < cm.out_channels; ++p) {
        Vector b = Vector::Zero(static_cast<Eigen::Index>(l2));
        for (std::size_t n = 0; n < cm.mid_channels; ++n) b += convolve(cm.mean_a1[n], second.filter(n, p), second.stride);
        for (std::size_t j = 0; j < l2; ++j) b[static_cast<Eigen::Index>(j)] += second.bias_at(p, j);
        for (std::size_t m = 0; m < cm.in_channels; ++m) b -= convolve(cm.mean_a0[m], r.filter(m, p), cm.stride);
        r.bias.push_back(std::move(b));
    }
    r.channel_mse = Vector::Zero(static_cast<Eigen::Index>(cm.out_channels));
    return r;
}

// ---------------------------------------------------------------------------
// Pair classification and structural fusion

enum class PairKind { dense_dense, conv_dense, conv_conv };

inline std::string to_string(PairKind k) {
    switch (k) {
        case PairKind::dense_dense: return "dense-dense";
        case PairKind::conv_dense: return "conv-dense";
        case PairKind::conv_conv: return "conv-conv";
    }
    return "dense-dense";
}

inline std::vector<Shape> shapes_of(const NetworkSpec& spec) {
    std::vector<Shape> out{spec.input_shape};
    for (const auto& l : spec.layers) {
        const Shape in = out.back();
        if (auto d = std::get_if<DenseSpec>(&l)) {
            out.push_back({1, d->units});
        } else if (auto c = std::get_if<ConvSpec>(&l)) {
            out.push_back({c->out_channels, c->pool.output_length(ceil_div(in.length, c->stride))});
        } else {
            out.push_back({1, in.size()});
        }
    }
    return out;
}

/// Validates a fusion boundary. With `adjacent_only`, only flatten markers may
/// sit between the two layers; otherwise a dense second layer may absorb any
/// run of preceding layers.
inline PairKind classify_pair(const NetworkSpec& spec, FusionBoundary b, bool adjacent_only = true) {
    const auto where = "fusion pair [" + std::to_string(b.first) + ", " + std::to_string(b.second) + "]: ";
    if (b.first >= b.second || b.second >= spec.layers.size()) throw ConfigError(where + "indices out of range");
    auto act_of = [](const LayerSpec& l) -> std::optional<Activation> {
        if (auto d = std::get_if<DenseSpec>(&l)) return d->activation;
        if (auto c = std::get_if<ConvSpec>(&l)) return c->activation;
        return std::nullopt;
    };
    const auto& first = spec.layers[b.first];
    const auto& second = spec.layers[b.second];
    if (std::holds_alternative<FlattenSpec>(first) || std::holds_alternative<FlattenSpec>(second)) {
        throw ConfigError(where + "flatten markers cannot be fused");
    }
    for (std::size_t i = b.first; i <= b.second; ++i) {
        if (act_of(spec.layers[i]) == Activation::softmax) throw ConfigError(where + "softmax layers are not fusable");
    }
    if (adjacent_only) {
        for (std::size_t i = b.first + 1; i < b.second; ++i) {
            if (!std::holds_alternative<FlattenSpec>(spec.layers[i])) throw ConfigError(where + "layers are not adjacent");
        }
    }
    if (std::holds_alternative<DenseSpec>(second)) {
        return std::holds_alternative<ConvSpec>(first) ? PairKind::conv_dense : PairKind::dense_dense;
    }
    if (std::holds_alternative<ConvSpec>(first) && b.second == b.first + 1) return PairKind::conv_conv;
    throw ConfigError(where + "second layer must be dense, or both layers adjacent convs");
}

inline PairKind classify_pair(const Network& net, FusionBoundary b, bool adjacent_only = true) {
    return classify_pair(spec_of(net), b, adjacent_only);
}

namespace detail {

/// Whether a fused dense layer placed at `first` needs a flatten marker in front.
inline bool needs_flatten(const NetworkSpec& spec, const std::vector<Shape>& shapes, std::size_t first) {
    if (shapes[first].channels > 1) return true;
    return first > 0 && std::holds_alternative<ConvSpec>(spec.layers[first - 1]);
}

}  // namespace detail

/// Architecture after fusing `b`. Conv pairs become one conv with stride
/// s1*r1*s2, filter length `kernel` (0: receptive field) and the second
/// layer's activation and pooling.
inline NetworkSpec fuse_spec(const NetworkSpec& spec, FusionBoundary b, std::size_t kernel = 0,
                             bool adjacent_only = true) {
    const PairKind kind = classify_pair(spec, b, adjacent_only);
    const auto shapes = shapes_of(spec);
    NetworkSpec out{spec.input_shape, {}};
    for (std::size_t i = 0; i < b.first; ++i) out.layers.push_back(spec.layers[i]);
    if (kind == PairKind::conv_conv) {
        const auto& c1 = std::get<ConvSpec>(spec.layers[b.first]);
        const auto& c2 = std::get<ConvSpec>(spec.layers[b.second]);
        ConvSpec fused;
        fused.out_channels = c2.out_channels;
        fused.kernel = kernel != 0 ? kernel : c1.kernel + (c2.kernel - 1) * c1.stride * c1.pool.stride;
        fused.stride = c1.stride * c1.pool.stride * c2.stride;
        fused.activation = c2.activation;
        fused.pool = c2.pool;
        fused.positional_bias = true;
        out.layers.push_back(fused);
    } else {
        if (detail::needs_flatten(spec, shapes, b.first)) out.layers.push_back(FlattenSpec{});
        out.layers.push_back(std::get<DenseSpec>(spec.layers[b.second]));
    }
    for (std::size_t i = b.second + 1; i < spec.layers.size(); ++i) out.layers.push_back(spec.layers[i]);
    return out;
}

/// Every adjacent pair that can be fused, in layer order.
inline std::vector<FusionBoundary> fusable_pairs(const NetworkSpec& spec) {
    std::vector<FusionBoundary> out;
    for (std::size_t i = 0; i < spec.layers.size(); ++i) {
        if (std::holds_alternative<FlattenSpec>(spec.layers[i])) continue;
        std::size_t j = i + 1;
        while (j < spec.layers.size() && std::holds_alternative<FlattenSpec>(spec.layers[j])) ++j;
        if (j >= spec.layers.size()) break;
        try {
            classify_pair(spec, {i, j});
            out.push_back({i, j});
        } catch (const ConfigError&) {
        }
    }
    return out;
}

inline std::vector<FusionBoundary> fusable_pairs(const Network& net) { return fusable_pairs(spec_of(net)); }

// ---------------------------------------------------------------------------
// End-to-end fusion of one pair on a concrete network

struct FusionOptions {
    /// fused conv filter length; 0 selects the receptive field
    std::size_t kernel = 0;
    /// use only the first N samples for moments (0: all)
    std::size_t max_samples = 0;
    SolvePolicy solve;
    /// allow a dense second layer to absorb non-adjacent layers
    bool allow_span = false;
};

struct FusionOutcome {
    Network network;
    FusionBoundary boundary;
    PairKind kind = PairKind::dense_dense;
    /// index of the fused layer in `network`
    std::size_t fused_index = 0;
    /// closed-form trace formula (dense) or per-channel C-MSE sum (conv)
    double predicted_mse = 0.0;
    /// measured on the moment samples at the pre-activation
    double empirical_mse = 0.0;
    /// predicted_mse / total pre-activation variance of the original pair
    double normalized_mse = 0.0;
    double ridge_used = 0.0;
    std::optional<DenseFusionResult> dense;
    std::optional<ConvFusionResult> conv;
    double channel_crosscorr = 0.0;
    std::vector<std::string> warnings;
};

inline FusionOutcome fuse_layers(const Network& net, FusionBoundary b, std::span<const Vector> inputs,
                                 const FusionOptions& opt = {}) {
    const NetworkSpec spec = spec_of(net);
    FusionOutcome out;
    out.boundary = b;
    out.kind = classify_pair(spec, b, !opt.allow_span);
    const auto shapes = net.shapes();
    const std::size_t n = opt.max_samples == 0 ? inputs.size() : std::min(opt.max_samples, inputs.size());
    if (n < 2) throw DataError("fusion needs at least 2 samples, got " + std::to_string(n));
    const auto traces = detail::trace_all(net, inputs, n);

    std::vector<Vector> a0, a1, original_pre;
    for (const auto& tr : traces) {
        a0.push_back(tr.activations[b.first]);
        a1.push_back(tr.activations[b.second]);
        original_pre.push_back(tr.layers[b.second].pre);
    }

    Network fused;
    fused.input_shape = net.input_shape;
    for (std::size_t i = 0; i < b.first; ++i) fused.layers.push_back(net.layers[i]);

    std::vector<Vector> fused_pre;
    fused_pre.reserve(n);
    if (out.kind == PairKind::conv_conv) {
        const auto& c1 = std::get<Conv1dLayer>(net.layers[b.first]);
        const auto& c2 = std::get<Conv1dLayer>(net.layers[b.second]);
        const std::size_t kernel = opt.kernel != 0 ? opt.kernel : default_fused_kernel(c1, c2);
        const ConvMomentSet cm =
            accumulate_conv_moments(a0, a1, shapes[b.first], shapes[b.second], c2, kernel, composed_stride(c1, c2));
        ConvFusionResult cr = fuse_conv(cm, c2, opt.solve);

        Conv1dLayer layer;
        layer.in_channels = cr.in_channels;
        layer.out_channels = cr.out_channels;
        layer.kernel = cr.kernel;
        layer.stride = cr.stride;
        layer.filters = cr.filters;
        layer.bias = cr.bias;
        layer.activation = c2.activation;
        layer.pool = c2.pool;

        for (const auto& x : a0) fused_pre.push_back(conv1d_pre_activation(layer, x, shapes[b.first].length));
        const std::size_t l2 = c2.conv_length(shapes[b.second].length);
        cr.channel_mse = empirical_channel_mse(fused_pre, original_pre, cr.out_channels, l2);
        out.predicted_mse = cr.channel_mse.sum();
        out.empirical_mse = empirical_mse(fused_pre, original_pre);
        const double energy = cm.target_energy.sum();
        out.normalized_mse = energy > 0.0 ? out.predicted_mse / energy : 0.0;
        out.ridge_used = cr.ridge_used;
        out.channel_crosscorr = cr.assumption_diagnostic;
        out.warnings = cr.warnings;
        layer.provenance = FusionProvenance{b.first, b.second, out.predicted_mse, out.ridge_used};
        out.fused_index = fused.layers.size();
        fused.layers.emplace_back(std::move(layer));
        out.conv = std::move(cr);
    } else {
        const auto& d2 = std::get<DenseLayer>(net.layers[b.second]);
        const MomentSet ms = estimate_moments(a0, a1);
        DenseFusionResult dr = fuse_dense(ms, d2.weights, d2.bias, opt.solve);

        DenseLayer layer;
        layer.weights = dr.weights;
        layer.bias = dr.bias;
        layer.activation = d2.activation;
        for (const auto& x : a0) fused_pre.push_back(dense_pre_activation(layer, x));
        out.predicted_mse = dr.predicted_mse;
        out.empirical_mse = empirical_mse(fused_pre, original_pre);
        const double total = (d2.weights * ms.C_a1 * d2.weights.transpose()).trace();
        out.normalized_mse = total > 0.0 ? out.predicted_mse / total : 0.0;
        out.ridge_used = dr.ridge_used;
        out.warnings = dr.warnings;
        layer.provenance = FusionProvenance{b.first, b.second, out.predicted_mse, out.ridge_used};
        if (detail::needs_flatten(spec, shapes_of(spec), b.first)) fused.layers.emplace_back(Flatten{});
        out.fused_index = fused.layers.size();
        fused.layers.emplace_back(std::move(layer));
        out.dense = std::move(dr);
    }
    for (std::size_t i = b.second + 1; i < net.layers.size(); ++i) fused.layers.push_back(net.layers[i]);
    fused.validate();
    out.network = std::move(fused);
    return out;
}

// ---------------------------------------------------------------------------
// Ranking

struct RankEntry {
    FusionBoundary pair;
    PairKind kind = PairKind::dense_dense;
    double predicted_mse = 0.0;
    double normalized_mse = 0.0;
};

struct FusionRanking {
    std::vector<RankEntry> entries;  // ascending predicted_mse
};

/// Predicted fusion MSE for each candidate pair, sorted ascending; ties keep
/// the smaller pair index first. Reports only; nothing is fused.
inline FusionRanking rank_pairs(const Network& net, std::span<const Vector> inputs,
                                std::span<const FusionBoundary> candidates, const FusionOptions& opt = {}) {
    if (candidates.empty()) throw ConfigError("rank_pairs: no fusable layer pair");
    FusionRanking ranking;
    for (const auto& b : candidates) {
        const FusionOutcome o = fuse_layers(net, b, inputs, opt);
        ranking.entries.push_back({b, o.kind, o.predicted_mse, o.normalized_mse});
    }
    std::stable_sort(ranking.entries.begin(), ranking.entries.end(), [](const RankEntry& a, const RankEntry& c) {
        if (a.predicted_mse != c.predicted_mse) return a.predicted_mse < c.predicted_mse;
        return a.pair.first < c.pair.first;
    });
    return ranking;
}

inline FusionRanking rank_pairs(const Network& net, std::span<const Vector> inputs, const FusionOptions& opt = {}) {
    const auto candidates = fusable_pairs(net);
    return rank_pairs(net, inputs, candidates, opt);
}

}  // namespace fuseinit
