#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "fuseinit/data.hpp"
#include "fuseinit/nn.hpp"

namespace fuseinit {

enum class Loss { mse, cross_entropy };

inline std::string to_string(Loss l) { return l == Loss::mse ? "mse" : "cross_entropy"; }

inline Loss loss_from_string(std::string_view name) {
    if (name == "mse") return Loss::mse;
    if (name == "cross_entropy" || name == "cross-entropy") return Loss::cross_entropy;
    throw ConfigError("unknown loss '" + std::string(name) + "'");
}

// ---------------------------------------------------------------------------
// Flat parameter vector. Order: layer by layer; dense weights row-major then
// bias; conv filters in filter-index order then biases per output channel.

inline std::size_t parameter_count(const Network& net) {
    std::size_t n = 0;
    for (const auto& layer : net.layers) {
        if (auto d = std::get_if<DenseLayer>(&layer)) {
            n += static_cast<std::size_t>(d->weights.size() + d->bias.size());
        } else if (auto c = std::get_if<Conv1dLayer>(&layer)) {
            for (const auto& h : c->filters) n += static_cast<std::size_t>(h.size());
            for (const auto& b : c->bias) n += static_cast<std::size_t>(b.size());
        }
    }
    return n;
}

namespace detail {

template <typename NetT, typename Fn>
void for_each_parameter(NetT& net, Fn&& fn) {
    std::size_t k = 0;
    for (auto& layer : net.layers) {
        if (auto d = std::get_if<DenseLayer>(&layer)) {
            for (Eigen::Index r = 0; r < d->weights.rows(); ++r) {
                for (Eigen::Index c = 0; c < d->weights.cols(); ++c) fn(k++, d->weights(r, c));
            }
            for (Eigen::Index r = 0; r < d->bias.size(); ++r) fn(k++, d->bias[r]);
        } else if (auto c = std::get_if<Conv1dLayer>(&layer)) {
            for (auto& h : c->filters) {
                for (Eigen::Index t = 0; t < h.size(); ++t) fn(k++, h[t]);
            }
            for (auto& b : c->bias) {
                for (Eigen::Index t = 0; t < b.size(); ++t) fn(k++, b[t]);
            }
        }
    }
}

}  // namespace detail

inline Vector get_parameters(const Network& net) {
    Vector p(static_cast<Eigen::Index>(parameter_count(net)));
    detail::for_each_parameter(net, [&](std::size_t k, const double& v) { p[static_cast<Eigen::Index>(k)] = v; });
    return p;
}

inline void set_parameters(Network& net, const Vector& p) {
    if (static_cast<std::size_t>(p.size()) != parameter_count(net)) {
        throw DataError("parameter vector has wrong length");
    }
    detail::for_each_parameter(net, [&](std::size_t k, double& v) { v = p[static_cast<Eigen::Index>(k)]; });
}

// ---------------------------------------------------------------------------
// Losses. MSE sums over output components; both losses average over samples.

inline double sample_loss(Loss loss, const Vector& output, const Vector& target) {
    if (output.size() != target.size()) throw DataError("output/target size mismatch");
    if (loss == Loss::mse) return (output - target).squaredNorm();
    double l = 0.0;
    for (Eigen::Index i = 0; i < output.size(); ++i) {
        if (target[i] != 0.0) l -= target[i] * std::log(std::max(output[i], 1e-300));
    }
    return l;
}

inline double evaluate_loss(const Network& net, std::span<const Sample> samples, Loss loss) {
    if (samples.empty()) return 0.0;
    double total = 0.0;
    for (const auto& s : samples) total += sample_loss(loss, predict(net, s.x), s.y);
    return total / static_cast<double>(samples.size());
}

inline std::size_t argmax(const Vector& v) {
    Eigen::Index i = 0;
    v.maxCoeff(&i);
    return static_cast<std::size_t>(i);
}

inline double accuracy(const Network& net, std::span<const Sample> samples) {
    if (samples.empty()) return 0.0;
    std::size_t hits = 0;
    for (const auto& s : samples) {
        const std::size_t truth = s.label >= 0 ? static_cast<std::size_t>(s.label) : argmax(s.y);
        hits += argmax(predict(net, s.x)) == truth ? 1 : 0;
    }
    return static_cast<double>(hits) / static_cast<double>(samples.size());
}

// ---------------------------------------------------------------------------
// Backprop

/// Accumulates dL/dparams for one traced sample into `grad` (flat parameter
/// order). `grad_output` is dL/d(network output), or dL/d(pre-activation of the
/// last layer) when `grad_is_pre` is set.
inline void backward(const Network& net, const std::vector<Shape>& shapes, const Trace& trace,
                     const Vector& grad_output, bool grad_is_pre, Vector& grad) {
    // offsets of each layer's parameter block
    std::vector<std::size_t> offset(net.layers.size() + 1, 0);
    for (std::size_t i = 0; i < net.layers.size(); ++i) {
        std::size_t n = 0;
        if (auto d = std::get_if<DenseLayer>(&net.layers[i])) {
            n = static_cast<std::size_t>(d->weights.size() + d->bias.size());
        } else if (auto c = std::get_if<Conv1dLayer>(&net.layers[i])) {
            for (const auto& h : c->filters) n += static_cast<std::size_t>(h.size());
            for (const auto& b : c->bias) n += static_cast<std::size_t>(b.size());
        }
        offset[i + 1] = offset[i] + n;
    }

    Vector g_out = grad_output;  // dL/d(output of layer ii)
    for (std::size_t ii = net.layers.size(); ii-- > 0;) {
        const LayerTrace& lt = trace.layers[ii];
        const Vector& input = trace.activations[ii];
        Vector g_pre;
        const bool pre_given = grad_is_pre && ii + 1 == net.layers.size();

        if (auto d = std::get_if<DenseLayer>(&net.layers[ii])) {
            g_pre = pre_given ? g_out : activation_backward(d->activation, lt.pre, lt.act, g_out);
            std::size_t k = offset[ii];
            const auto rows = d->weights.rows();
            const auto cols = d->weights.cols();
            for (Eigen::Index r = 0; r < rows; ++r) {
                for (Eigen::Index c = 0; c < cols; ++c) grad[static_cast<Eigen::Index>(k++)] += g_pre[r] * input[c];
            }
            for (Eigen::Index r = 0; r < rows; ++r) grad[static_cast<Eigen::Index>(k++)] += g_pre[r];
            if (ii > 0) g_out = d->weights.transpose() * g_pre;
        } else if (auto c = std::get_if<Conv1dLayer>(&net.layers[ii])) {
            const std::size_t length = shapes[ii].length;
            const std::size_t lc = c->conv_length(length);
            Vector g_act;
            if (pre_given) {
                g_pre = g_out;
            } else {
                if (c->pool.kind == PoolKind::max) {
                    g_act = Vector::Zero(static_cast<Eigen::Index>(c->out_channels * lc));
                    for (std::size_t q = 0; q < lt.argmax.size(); ++q) {
                        g_act[static_cast<Eigen::Index>(lt.argmax[q])] += g_out[static_cast<Eigen::Index>(q)];
                    }
                } else {
                    g_act = g_out;
                }
                g_pre = activation_backward(c->activation, lt.pre, lt.act, g_act);
            }
            const std::size_t k = c->kernel;
            std::vector<Vector> padded;
            padded.reserve(c->in_channels);
            for (std::size_t m = 0; m < c->in_channels; ++m) padded.push_back(zero_pad(channel_view(input, m, length), k));

            std::size_t pos = offset[ii];
            for (std::size_t m = 0; m < c->in_channels; ++m) {
                for (std::size_t n = 0; n < c->out_channels; ++n) {
                    for (std::size_t t = 0; t < k; ++t) {
                        double acc = 0.0;
                        for (std::size_t j = 0; j < lc; ++j) {
                            acc += g_pre[static_cast<Eigen::Index>(n * lc + j)] *
                                   padded[m][static_cast<Eigen::Index>(j * c->stride + k - 1 - t)];
                        }
                        grad[static_cast<Eigen::Index>(pos++)] += acc;
                    }
                }
            }
            for (std::size_t n = 0; n < c->out_channels; ++n) {
                const auto seg = g_pre.segment(static_cast<Eigen::Index>(n * lc), static_cast<Eigen::Index>(lc));
                if (c->bias[n].size() == 1) {
                    grad[static_cast<Eigen::Index>(pos++)] += seg.sum();
                } else {
                    for (std::size_t j = 0; j < lc; ++j) grad[static_cast<Eigen::Index>(pos++)] += seg[static_cast<Eigen::Index>(j)];
                }
            }
            if (ii > 0) {
                const std::size_t front = k / 2;
                g_out = Vector::Zero(static_cast<Eigen::Index>(c->in_channels * length));
                for (std::size_t m = 0; m < c->in_channels; ++m) {
                    for (std::size_t n = 0; n < c->out_channels; ++n) {
                        const Vector& h = c->filter(m, n);
                        for (std::size_t j = 0; j < lc; ++j) {
                            const double gj = g_pre[static_cast<Eigen::Index>(n * lc + j)];
                            for (std::size_t t = 0; t < k; ++t) {
                                const std::size_t zp = j * c->stride + k - 1 - t;
                                if (zp < front || zp >= front + length) continue;
                                g_out[static_cast<Eigen::Index>(m * length + zp - front)] += gj * h[static_cast<Eigen::Index>(t)];
                            }
                        }
                    }
                }
            }
        } else {
            if (pre_given) throw DataError("network may not end with a flatten marker");
            // flatten passes the gradient through unchanged
        }
    }
}

/// Loss gradient for one sample. Cross-entropy with softmax is returned
/// w.r.t. the last pre-activation (p - y); MSE w.r.t. the output.
inline Vector output_gradient(const Network& net, const Trace& trace, Loss loss, const Vector& target,
                              bool& is_pre) {
    const Vector& out = trace.output();
    if (loss == Loss::cross_entropy) {
        const auto act = layer_activation(net.layers.back());
        if (act != Activation::softmax) throw ConfigError("cross-entropy loss requires a softmax output layer");
        is_pre = true;
        return out - target;
    }
    is_pre = false;
    return 2.0 * (out - target);
}

/// Mean loss gradient over a batch, in flat parameter order.
inline Vector gradients(const Network& net, std::span<const Sample> batch, Loss loss, double* mean_loss = nullptr) {
    if (batch.empty()) throw DataError("gradient batch is empty");
    if (net.layers.empty()) throw DataError("network has no layers");
    const auto shapes = net.shapes();
    Vector grad = Vector::Zero(static_cast<Eigen::Index>(parameter_count(net)));
    double total = 0.0;
    for (const auto& s : batch) {
        const Trace tr = forward(net, s.x);
        total += sample_loss(loss, tr.output(), s.y);
        bool is_pre = false;
        const Vector g = output_gradient(net, tr, loss, s.y, is_pre);
        backward(net, shapes, tr, g, is_pre, grad);
    }
    const double inv = 1.0 / static_cast<double>(batch.size());
    grad *= inv;
    if (mean_loss) *mean_loss = total * inv;
    return grad;
}

// ---------------------------------------------------------------------------
// SGD trainer

struct TrainConfig {
    double learning_rate = 0.05;
    double momentum = 0.9;
    std::size_t batch_size = 16;
    std::size_t epochs = 50;
    std::uint64_t seed = 0;
    Loss loss = Loss::cross_entropy;
    /// epoch -> multiplier of the base rate, effective from that epoch on.
    std::map<std::size_t, double> schedule;

    double rate_at(std::size_t epoch) const {
        double mult = 1.0;
        for (const auto& [e, m] : schedule) {
            if (epoch >= e) mult = m;
        }
        return learning_rate * mult;
    }
};

/// Halve the rate at 75% of the epoch budget.
inline std::map<std::size_t, double> default_schedule(std::size_t epochs) {
    return {{static_cast<std::size_t>(epochs * 3 / 4), 0.5}};
}

struct EpochRecord {
    std::size_t epoch = 0;
    double train_loss = 0.0;
    double val_loss = 0.0;
    /// accuracy for classification, validation loss for regression
    double val_metric = 0.0;
};

struct TrainResult {
    Network network;
    std::vector<EpochRecord> curve;  // entry 0 is the untrained state
};

inline EpochRecord evaluate(const Network& net, std::span<const Sample> train_set, std::span<const Sample> val_set,
                            Loss loss, Task task, std::size_t epoch) {
    EpochRecord r;
    r.epoch = epoch;
    r.train_loss = evaluate_loss(net, train_set, loss);
    r.val_loss = evaluate_loss(net, val_set, loss);
    r.val_metric = task == Task::classification ? accuracy(net, val_set) : r.val_loss;
    return r;
}

/// Minibatch SGD with heavy-ball momentum. Deterministic given cfg.seed.
inline TrainResult train(Network net, std::span<const Sample> train_set, std::span<const Sample> val_set,
                         const TrainConfig& cfg, Task task = Task::classification) {
    if (train_set.empty()) throw DataError("training set is empty");
    if (cfg.batch_size == 0) throw ConfigError("batch size must be positive");
    net.validate();

    TrainResult result;
    result.curve.push_back(evaluate(net, train_set, val_set, cfg.loss, task, 0));
    if (!std::isfinite(result.curve.back().train_loss)) {
        throw NumericalError("non-finite loss before training");
    }

    std::mt19937_64 rng(cfg.seed);
    std::vector<std::size_t> order(train_set.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    Vector params = get_parameters(net);
    Vector velocity = Vector::Zero(params.size());
    std::vector<Sample> batch;

    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        const double lr = cfg.rate_at(epoch - 1);
        for (std::size_t start = 0, b = 0; start < order.size(); start += cfg.batch_size, ++b) {
            const std::size_t stop = std::min(order.size(), start + cfg.batch_size);
            batch.clear();
            for (std::size_t i = start; i < stop; ++i) batch.push_back(train_set[order[i]]);
            double batch_loss = 0.0;
            const Vector g = gradients(net, batch, cfg.loss, &batch_loss);
            if (!std::isfinite(batch_loss) || !g.allFinite()) {
                throw NumericalError("non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                                     std::to_string(b));
            }
            velocity = cfg.momentum * velocity - lr * g;
            params += velocity;
            set_parameters(net, params);
        }
        result.curve.push_back(evaluate(net, train_set, val_set, cfg.loss, task, epoch));
        if (!std::isfinite(result.curve.back().train_loss)) {
            throw NumericalError("non-finite loss at end of epoch " + std::to_string(epoch));
        }
    }
    result.network = std::move(net);
    return result;
}

}  // namespace fuseinit
