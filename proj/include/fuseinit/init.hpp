#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <variant>
#include <vector>

#include "fuseinit/nn.hpp"

namespace fuseinit {

// Architecture without parameters.

struct DenseSpec {
    std::size_t units = 1;
    Activation activation = Activation::identity;
};

struct ConvSpec {
    std::size_t out_channels = 1;
    std::size_t kernel = 1;
    std::size_t stride = 1;
    Activation activation = Activation::identity;
    PoolSpec pool;
    /// Fused conv layers carry one bias per output position.
    bool positional_bias = false;
};

struct FlattenSpec {};

using LayerSpec = std::variant<DenseSpec, ConvSpec, FlattenSpec>;

struct NetworkSpec {
    Shape input_shape;
    std::vector<LayerSpec> layers;

    bool operator==(const NetworkSpec& other) const;
};

inline bool operator==(const DenseSpec& a, const DenseSpec& b) {
    return a.units == b.units && a.activation == b.activation;
}
inline bool operator==(const ConvSpec& a, const ConvSpec& b) {
    return a.out_channels == b.out_channels && a.kernel == b.kernel && a.stride == b.stride &&
           a.activation == b.activation && a.pool.kind == b.pool.kind && a.pool.stride == b.pool.stride;
}
inline bool operator==(const FlattenSpec&, const FlattenSpec&) { return true; }

/// Bias layout is not part of the comparison: a fused conv layer with
/// positional biases has the same architecture as its scalar-bias twin.
inline bool NetworkSpec::operator==(const NetworkSpec& other) const {
    return input_shape == other.input_shape && layers == other.layers;
}

inline NetworkSpec spec_of(const Network& net) {
    NetworkSpec spec{net.input_shape, {}};
    for (const auto& layer : net.layers) {
        if (auto d = std::get_if<DenseLayer>(&layer)) {
            spec.layers.push_back(DenseSpec{d->out_size(), d->activation});
        } else if (auto c = std::get_if<Conv1dLayer>(&layer)) {
            const bool positional = !c->bias.empty() && c->bias.front().size() != 1;
            spec.layers.push_back(ConvSpec{c->out_channels, c->kernel, c->stride, c->activation, c->pool, positional});
        } else {
            spec.layers.push_back(FlattenSpec{});
        }
    }
    return spec;
}

enum class InitScheme { gaussian, he };

struct InitOptions {
    InitScheme scheme = InitScheme::gaussian;
    /// Weight variance for the gaussian scheme.
    double variance = 0.05;
};

/// Weights i.i.d. zero-mean Gaussian, biases zero. The he scheme draws from a
/// normal with variance 2 / fan_in truncated at two standard deviations.
inline Network random_init(const NetworkSpec& spec, std::uint64_t seed, const InitOptions& opt = {}) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    auto draw = [&](std::size_t fan_in) {
        if (opt.scheme == InitScheme::gaussian) return std::sqrt(opt.variance) * gauss(rng);
        double z = gauss(rng);
        while (std::abs(z) > 2.0) z = gauss(rng);
        return std::sqrt(2.0 / static_cast<double>(fan_in)) * z;
    };

    Network net;
    net.input_shape = spec.input_shape;
    Shape shape = spec.input_shape;
    for (const auto& ls : spec.layers) {
        if (auto d = std::get_if<DenseSpec>(&ls)) {
            DenseLayer layer;
            const std::size_t in = shape.size();
            layer.weights.resize(static_cast<Eigen::Index>(d->units), static_cast<Eigen::Index>(in));
            for (Eigen::Index r = 0; r < layer.weights.rows(); ++r) {
                for (Eigen::Index c = 0; c < layer.weights.cols(); ++c) layer.weights(r, c) = draw(in);
            }
            layer.bias = Vector::Zero(static_cast<Eigen::Index>(d->units));
            layer.activation = d->activation;
            net.layers.emplace_back(std::move(layer));
            shape = {1, d->units};
        } else if (auto c = std::get_if<ConvSpec>(&ls)) {
            Conv1dLayer layer;
            layer.in_channels = shape.channels;
            layer.out_channels = c->out_channels;
            layer.kernel = c->kernel;
            layer.stride = c->stride;
            layer.activation = c->activation;
            layer.pool = c->pool;
            const std::size_t fan_in = layer.in_channels * layer.kernel;
            for (std::size_t i = 0; i < layer.in_channels * layer.out_channels; ++i) {
                Vector h(static_cast<Eigen::Index>(c->kernel));
                for (Eigen::Index t = 0; t < h.size(); ++t) h[t] = draw(fan_in);
                layer.filters.push_back(std::move(h));
            }
            const std::size_t lc = layer.conv_length(shape.length);
            layer.bias.assign(c->out_channels, Vector::Zero(c->positional_bias ? static_cast<Eigen::Index>(lc) : 1));
            shape = {c->out_channels, layer.output_length(shape.length)};
            net.layers.emplace_back(std::move(layer));
        } else {
            net.layers.emplace_back(Flatten{});
            shape = {1, shape.size()};
        }
    }
    net.validate();
    return net;
}

}  // namespace fuseinit
