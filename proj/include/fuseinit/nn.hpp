#pragma once

// Minimal sequential network: dense layers, 1-D convolutions with stride and
// max-pooling, and a flatten marker between the two.
//
// Index conventions. The math uses 1-based positions; the code is 0-based.
// A signal with C channels of length L is stored channel-major in one vector:
// entry (m, l) lives at m * L + l. The convolution of x (length L) with a
// filter h (length k) and stride s is
//
//     y[j] = sum_t h[t] * z[j*s + k-1-t],   j = 0 .. ceil(L/s)-1,
//
// where z = zero_pad(x, k) carries floor(k/2) leading and floor((k-1)/2)
// trailing zeros. Equivalently y[j] = <flip(z[j*s : j*s+k]), h>, and with
// u = flip(z) the window flip(z[i : i+k]) is u[L-1-i : L-1-i+k]. The 1-based
// window start i (math) is the 0-based start i-1 here.

#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "fuseinit/error.hpp"
#include "fuseinit/linalg.hpp"

namespace fuseinit {

enum class Activation { identity, relu, tanh, sigmoid, softmax };

inline std::string to_string(Activation a) {
    switch (a) {
        case Activation::identity: return "identity";
        case Activation::relu: return "relu";
        case Activation::tanh: return "tanh";
        case Activation::sigmoid: return "sigmoid";
        case Activation::softmax: return "softmax";
    }
    return "identity";
}

inline Activation activation_from_string(std::string_view name) {
    if (name == "identity" || name == "linear") return Activation::identity;
    if (name == "relu") return Activation::relu;
    if (name == "tanh") return Activation::tanh;
    if (name == "sigmoid") return Activation::sigmoid;
    if (name == "softmax") return Activation::softmax;
    throw ConfigError("unknown activation '" + std::string(name) + "'");
}

inline Vector activate(Activation a, const Vector& z) {
    switch (a) {
        case Activation::identity: return z;
        case Activation::relu: return z.cwiseMax(0.0);
        case Activation::tanh: return z.array().tanh().matrix();
        case Activation::sigmoid: return (1.0 / (1.0 + (-z.array()).exp())).matrix();
        case Activation::softmax: {
            if (z.size() == 0) return z;
            const Eigen::ArrayXd e = (z.array() - z.maxCoeff()).exp();
            return (e / e.sum()).matrix();
        }
    }
    return z;
}

/// Gradient w.r.t. the pre-activation z, given y = activate(a, z) and dL/dy.
inline Vector activation_backward(Activation a, const Vector& z, const Vector& y,
                                  const Vector& grad_y) {
    switch (a) {
        case Activation::identity: return grad_y;
        case Activation::relu:
            return (z.array() > 0.0).select(grad_y.array(), 0.0).matrix();
        case Activation::tanh: return (grad_y.array() * (1.0 - y.array().square())).matrix();
        case Activation::sigmoid:
            return (grad_y.array() * y.array() * (1.0 - y.array())).matrix();
        case Activation::softmax: {
            const double dot = y.dot(grad_y);
            return (y.array() * (grad_y.array() - dot)).matrix();
        }
    }
    return grad_y;
}

enum class PoolKind { none, max };

/// Non-overlapping pooling: window size equals the stride, and a partial
/// trailing window pools over whatever is left.
struct PoolSpec {
    PoolKind kind = PoolKind::none;
    std::size_t stride = 1;

    std::size_t output_length(std::size_t length) const { return ceil_div(length, stride); }
};

struct Shape {
    std::size_t channels = 1;
    std::size_t length = 0;

    std::size_t size() const { return channels * length; }
    bool operator==(const Shape&) const = default;
};

inline std::string to_string(const Shape& s) {
    return std::to_string(s.channels) + "x" + std::to_string(s.length);
}

/// Where a fused layer came from; carried through serialization.
struct FusionProvenance {
    std::size_t first = 0;
    std::size_t second = 0;
    double predicted_mse = 0.0;
    double ridge_used = 0.0;
};

struct DenseLayer {
    Matrix weights;  // [out x in]
    Vector bias;     // [out]
    Activation activation = Activation::identity;
    std::optional<FusionProvenance> provenance;

    std::size_t in_size() const { return static_cast<std::size_t>(weights.cols()); }
    std::size_t out_size() const { return static_cast<std::size_t>(weights.rows()); }
};

struct Conv1dLayer {
    std::size_t in_channels = 1;
    std::size_t out_channels = 1;
    std::size_t kernel = 1;
    std::size_t stride = 1;
    /// filters[m * out_channels + n] maps input channel m to output channel n.
    std::vector<Vector> filters;
    /// One entry per output channel: length 1 (broadcast along positions) or
    /// one value per pre-pool output position.
    std::vector<Vector> bias;
    Activation activation = Activation::identity;
    PoolSpec pool;
    std::optional<FusionProvenance> provenance;

    Vector& filter(std::size_t m, std::size_t n) { return filters[m * out_channels + n]; }
    const Vector& filter(std::size_t m, std::size_t n) const { return filters[m * out_channels + n]; }

    double bias_at(std::size_t n, std::size_t j) const {
        const Vector& b = bias[n];
        return b.size() == 1 ? b[0] : b[static_cast<Eigen::Index>(j)];
    }

    std::size_t conv_length(std::size_t input_length) const { return ceil_div(input_length, stride); }
    std::size_t output_length(std::size_t input_length) const {
        return pool.output_length(conv_length(input_length));
    }
};

/// Marks the conv-to-dense boundary. Data is already channel-major, so the
/// marker only relabels the shape as a flat vector.
struct Flatten {};

using Layer = std::variant<DenseLayer, Conv1dLayer, Flatten>;

struct Network {
    Shape input_shape;
    std::vector<Layer> layers;

    /// Shapes at every layer boundary (size layers + 1). Throws DataError if
    /// consecutive layers do not compose.
    std::vector<Shape> shapes() const;
    void validate() const { (void)shapes(); }
};

inline bool is_dense(const Layer& l) { return std::holds_alternative<DenseLayer>(l); }
inline bool is_conv(const Layer& l) { return std::holds_alternative<Conv1dLayer>(l); }
inline bool is_flatten(const Layer& l) { return std::holds_alternative<Flatten>(l); }

inline std::optional<Activation> layer_activation(const Layer& l) {
    if (auto d = std::get_if<DenseLayer>(&l)) return d->activation;
    if (auto c = std::get_if<Conv1dLayer>(&l)) return c->activation;
    return std::nullopt;
}

inline std::vector<Shape> Network::shapes() const {
    if (input_shape.size() == 0) throw DataError("network input shape is empty");
    std::vector<Shape> out{input_shape};
    bool conv_pending = false;  // conv output not yet flattened
    for (std::size_t i = 0; i < layers.size(); ++i) {
        const Shape in = out.back();
        const std::string where = "layer " + std::to_string(i) + ": ";
        if (auto d = std::get_if<DenseLayer>(&layers[i])) {
            if (conv_pending) throw DataError(where + "dense layer after conv needs a flatten marker");
            if (in.channels != 1 || d->in_size() != in.length) {
                throw DataError(where + "dense expects " + std::to_string(d->in_size()) +
                                " inputs, got " + to_string(in));
            }
            if (d->bias.size() != d->weights.rows()) throw DataError(where + "bias/weight mismatch");
            if (d->activation == Activation::softmax && i + 1 != layers.size()) {
                throw DataError(where + "softmax is only allowed on the final layer");
            }
            out.push_back({1, d->out_size()});
        } else if (auto c = std::get_if<Conv1dLayer>(&layers[i])) {
            if (c->in_channels != in.channels) {
                throw DataError(where + "conv expects " + std::to_string(c->in_channels) +
                                " channels, got " + std::to_string(in.channels));
            }
            if (c->kernel == 0 || c->stride == 0 || c->pool.stride == 0) {
                throw DataError(where + "kernel, stride and pool stride must be positive");
            }
            if (c->pool.kind == PoolKind::none && c->pool.stride != 1) {
                throw DataError(where + "pool kind none requires r = 1");
            }
            if (c->activation == Activation::softmax) {
                throw DataError(where + "softmax is not supported on conv layers");
            }
            if (c->filters.size() != c->in_channels * c->out_channels) {
                throw DataError(where + "filter count mismatch");
            }
            for (const auto& h : c->filters) {
                if (static_cast<std::size_t>(h.size()) != c->kernel) {
                    throw DataError(where + "all filters must have length " + std::to_string(c->kernel));
                }
            }
            if (c->bias.size() != c->out_channels) throw DataError(where + "bias count mismatch");
            const std::size_t lc = c->conv_length(in.length);
            for (const auto& b : c->bias) {
                if (b.size() != 1 && static_cast<std::size_t>(b.size()) != lc) {
                    throw DataError(where + "positional bias must have length " + std::to_string(lc));
                }
            }
            conv_pending = true;
            out.push_back({c->out_channels, c->output_length(in.length)});
        } else {
            conv_pending = false;
            out.push_back({1, in.size()});
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Convolution primitives

inline Vector zero_pad(std::span<const double> x, std::size_t k) {
    const std::size_t front = k / 2;
    const std::size_t back = (k - 1) / 2;
    Vector z = Vector::Zero(static_cast<Eigen::Index>(x.size() + front + back));
    for (std::size_t i = 0; i < x.size(); ++i) z[static_cast<Eigen::Index>(front + i)] = x[i];
    return z;
}

inline Vector zero_pad(const Vector& x, std::size_t k) {
    return zero_pad(std::span<const double>(x.data(), static_cast<std::size_t>(x.size())), k);
}

inline Vector flip(const Vector& x) { return x.reverse(); }

/// Strided convolution of one channel; output length ceil(L/stride).
inline Vector convolve(std::span<const double> x, const Vector& h, std::size_t stride) {
    const std::size_t k = static_cast<std::size_t>(h.size());
    const Vector z = zero_pad(x, k);
    const std::size_t n_out = ceil_div(x.size(), stride);
    Vector y = Vector::Zero(static_cast<Eigen::Index>(n_out));
    for (std::size_t j = 0; j < n_out; ++j) {
        const std::size_t start = j * stride;
        double acc = 0.0;
        for (std::size_t t = 0; t < k; ++t) acc += h[static_cast<Eigen::Index>(t)] * z[static_cast<Eigen::Index>(start + k - 1 - t)];
        y[static_cast<Eigen::Index>(j)] = acc;
    }
    return y;
}

inline Vector convolve(const Vector& x, const Vector& h, std::size_t stride) {
    return convolve(std::span<const double>(x.data(), static_cast<std::size_t>(x.size())), h, stride);
}

inline std::span<const double> channel_view(const Vector& x, std::size_t channel, std::size_t length) {
    return std::span<const double>(x.data() + channel * length, length);
}

/// Max-pool with window = stride; argmax records the first maximal index.
inline Vector max_pool(const Vector& x, std::size_t channels, std::size_t length, std::size_t r,
                       std::vector<std::size_t>* argmax = nullptr) {
    const std::size_t lp = ceil_div(length, r);
    Vector y(static_cast<Eigen::Index>(channels * lp));
    if (argmax) argmax->assign(channels * lp, 0);
    for (std::size_t c = 0; c < channels; ++c) {
        for (std::size_t q = 0; q < lp; ++q) {
            const std::size_t begin = c * length + q * r;
            const std::size_t end = c * length + std::min(length, (q + 1) * r);
            std::size_t best = begin;
            for (std::size_t i = begin + 1; i < end; ++i) {
                if (x[static_cast<Eigen::Index>(i)] > x[static_cast<Eigen::Index>(best)]) best = i;
            }
            y[static_cast<Eigen::Index>(c * lp + q)] = x[static_cast<Eigen::Index>(best)];
            if (argmax) (*argmax)[c * lp + q] = best;
        }
    }
    return y;
}

// ---------------------------------------------------------------------------
// Forward pass

/// Per-layer intermediates kept for backprop and moment estimation.
struct LayerTrace {
    Vector pre;  // pre-activation (W a + b, or conv sum plus bias)
    Vector act;  // after activation, before pooling
    std::vector<std::size_t> argmax;
};

struct Trace {
    /// activations[0] is the input, activations[i + 1] the output of layer i.
    std::vector<Vector> activations;
    std::vector<LayerTrace> layers;

    const Vector& output() const { return activations.back(); }
};

inline Vector dense_pre_activation(const DenseLayer& layer, const Vector& x) {
    if (static_cast<std::size_t>(x.size()) != layer.in_size()) {
        throw DataError("dense layer expects " + std::to_string(layer.in_size()) + " inputs, got " +
                        std::to_string(x.size()));
    }
    return layer.weights * x + layer.bias;
}

inline Vector dense_forward(const DenseLayer& layer, const Vector& x) {
    return activate(layer.activation, dense_pre_activation(layer, x));
}

/// Conv sum plus bias for every output channel, channel-major [N x ceil(L/s)].
inline Vector conv1d_pre_activation(const Conv1dLayer& layer, const Vector& x, std::size_t length) {
    if (static_cast<std::size_t>(x.size()) != layer.in_channels * length) {
        throw DataError("conv layer expects " + std::to_string(layer.in_channels) + "x" +
                        std::to_string(length) + " input, got " + std::to_string(x.size()) + " values");
    }
    const std::size_t lc = layer.conv_length(length);
    Vector pre(static_cast<Eigen::Index>(layer.out_channels * lc));
    for (std::size_t n = 0; n < layer.out_channels; ++n) {
        for (std::size_t j = 0; j < lc; ++j) pre[static_cast<Eigen::Index>(n * lc + j)] = layer.bias_at(n, j);
    }
    for (std::size_t m = 0; m < layer.in_channels; ++m) {
        const auto xm = channel_view(x, m, length);
        for (std::size_t n = 0; n < layer.out_channels; ++n) {
            pre.segment(static_cast<Eigen::Index>(n * lc), static_cast<Eigen::Index>(lc)) +=
                convolve(xm, layer.filter(m, n), layer.stride);
        }
    }
    return pre;
}

inline Vector conv1d_forward(const Conv1dLayer& layer, const Vector& x, std::size_t length,
                             LayerTrace* trace = nullptr) {
    Vector pre = conv1d_pre_activation(layer, x, length);
    Vector act = activate(layer.activation, pre);
    const std::size_t lc = layer.conv_length(length);
    Vector out;
    std::vector<std::size_t> argmax;
    if (layer.pool.kind == PoolKind::max) {
        out = max_pool(act, layer.out_channels, lc, layer.pool.stride, trace ? &argmax : nullptr);
    } else {
        out = act;
    }
    if (trace) {
        trace->pre = std::move(pre);
        trace->act = std::move(act);
        trace->argmax = std::move(argmax);
    }
    return out;
}

inline Trace forward(const Network& net, const Vector& input) {
    const auto shapes = net.shapes();
    if (static_cast<std::size_t>(input.size()) != net.input_shape.size()) {
        throw DataError("input has " + std::to_string(input.size()) + " values, network expects " +
                        to_string(net.input_shape));
    }
    Trace tr;
    tr.activations.reserve(net.layers.size() + 1);
    tr.layers.resize(net.layers.size());
    tr.activations.push_back(input);
    for (std::size_t i = 0; i < net.layers.size(); ++i) {
        const Vector& x = tr.activations.back();
        LayerTrace& lt = tr.layers[i];
        if (auto d = std::get_if<DenseLayer>(&net.layers[i])) {
            lt.pre = dense_pre_activation(*d, x);
            lt.act = activate(d->activation, lt.pre);
            tr.activations.push_back(lt.act);
        } else if (auto c = std::get_if<Conv1dLayer>(&net.layers[i])) {
            tr.activations.push_back(conv1d_forward(*c, x, shapes[i].length, &lt));
        } else {
            lt.pre = x;
            lt.act = x;
            tr.activations.push_back(x);
        }
    }
    return tr;
}

inline Vector predict(const Network& net, const Vector& input) { return forward(net, input).output(); }

/// Pre-activation of layer `index` for one input sample.
inline Vector pre_activation_at(const Network& net, std::size_t index, const Vector& input) {
    return std::move(forward(net, input).layers.at(index).pre);
}

}  // namespace fuseinit
