#pragma once

// Cross-checks of the fusion solvers against the brute-force oracles and of
// the structural laws. Used by `fuseinit_cli verify` and the acceptance run.

#include <array>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "fuseinit/data.hpp"
#include "fuseinit/fusion.hpp"
#include "fuseinit/oracle.hpp"
#include "fuseinit/train.hpp"

namespace fuseinit::verify {

struct CheckResult {
    int id = 0;
    std::string name;
    bool passed = false;
    std::string detail;
    double seconds = 0.0;
};

// Tolerances.
inline constexpr double dense_param_tol = 1e-8;
inline constexpr double dense_residual_tol = 1e-10;
inline constexpr double predicted_mse_rel_tol = 1e-8;
inline constexpr double collapse_param_tol = 1e-10;
inline constexpr double collapse_mse_tol = 1e-10;
inline constexpr double collapse_output_tol = 1e-8;
inline constexpr double conv_param_tol = 1e-6;
inline constexpr double conv_normal_tol = 1e-8;
inline constexpr double delta_filter_tol = 1e-8;
inline constexpr double delta_mse_tol = 1e-10;
inline constexpr double scalar_tol = 1e-12;
inline constexpr double gradient_rel_tol = 1e-4;
inline constexpr double fd_step = 1e-5;

namespace detail {

using Rng = std::mt19937_64;

inline Matrix randn(Rng& rng, std::size_t rows, std::size_t cols, double scale = 1.0) {
    std::normal_distribution<double> n(0.0, scale);
    Matrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
    return m;
}

inline Vector randn(Rng& rng, std::size_t size, double scale = 1.0) {
    std::normal_distribution<double> n(0.0, scale);
    Vector v(static_cast<Eigen::Index>(size));
    for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = n(rng);
    return v;
}

inline std::size_t uniform(Rng& rng, std::size_t lo, std::size_t hi) {
    return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

inline double max_abs(const Matrix& m) { return m.size() == 0 ? 0.0 : m.cwiseAbs().maxCoeff(); }

inline std::string fmt(double v) {
    std::ostringstream os;
    os.precision(3);
    os << std::scientific << v;
    return os.str();
}

template <class F>
CheckResult timed(int id, std::string name, F&& body) {
    const auto start = std::chrono::steady_clock::now();
    CheckResult r;
    try {
        r = body();
    } catch (const std::exception& e) {
        r.passed = false;
        r.detail = std::string("threw: ") + e.what();
    }
    r.id = id;
    r.name = std::move(name);
    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return r;
}

/// Random dense case: a0 -> dense(H1) -> a1, with a second layer (W2, b2).
struct DenseCase {
    std::vector<Vector> a0, a1;
    Matrix w2;
    Vector b2;
};

inline DenseCase make_dense_case(std::uint64_t seed, std::size_t samples) {
    Rng rng(seed);
    const std::size_t l0 = uniform(rng, 1, 32), l1 = uniform(rng, 1, 32), l2 = uniform(rng, 1, 32);
    const Activation act = uniform(rng, 0, 1) == 0 ? Activation::relu : Activation::tanh;
    const Vector mu = randn(rng, l0);
    const Vector scale = (randn(rng, l0).cwiseAbs().array() + 0.5).matrix();
    DenseLayer h1{randn(rng, l1, l0, 1.5 / std::sqrt(static_cast<double>(l0))), randn(rng, l1, 0.5), act, {}};
    DenseCase c;
    c.w2 = randn(rng, l2, l1, 1.0 / std::sqrt(static_cast<double>(l1)));
    c.b2 = randn(rng, l2);
    for (std::size_t t = 0; t < samples; ++t) {
        Vector x = mu + scale.cwiseProduct(randn(rng, l0));
        c.a1.push_back(dense_forward(h1, x));
        c.a0.push_back(std::move(x));
    }
    return c;
}

inline Conv1dLayer make_conv(Rng& rng, std::size_t in, std::size_t out, std::size_t k, std::size_t s,
                             Activation act, std::size_t r) {
    Conv1dLayer c;
    c.in_channels = in;
    c.out_channels = out;
    c.kernel = k;
    c.stride = s;
    c.activation = act;
    c.pool = r > 1 ? PoolSpec{PoolKind::max, r} : PoolSpec{};
    const double scale = 1.0 / std::sqrt(static_cast<double>(in * k));
    for (std::size_t i = 0; i < in * out; ++i) c.filters.push_back(randn(rng, k, scale));
    for (std::size_t n = 0; n < out; ++n) c.bias.push_back(randn(rng, 1, 0.3));
    return c;
}

inline std::vector<Vector> gaussian_inputs(Rng& rng, std::size_t count, std::size_t size) {
    const Vector mu = randn(rng, size, 0.5);
    std::vector<Vector> out;
    for (std::size_t t = 0; t < count; ++t) out.push_back(mu + randn(rng, size));
    return out;
}

/// Inputs whose channels are exactly uncorrelated over the sample set.
inline std::vector<Vector> orthogonal_inputs(std::uint64_t seed, std::size_t count, std::size_t channels,
                                             std::size_t length) {
    SyntheticOptions opt;
    opt.channels = channels;
    opt.length = length;
    opt.validation_fraction = 0.2;
    const std::size_t n = static_cast<std::size_t>(std::ceil(static_cast<double>(count) / 0.8));
    const Dataset ds = gen_synthetic(SyntheticKind::orthogonal_channels, n, 0.1, seed, opt);
    auto in = inputs_of(ds.train);
    in.resize(std::min(in.size(), count));
    return in;
}

}  // namespace detail

/// Dense fusion against the affine least-squares oracle, and the predicted-MSE
/// identity on the same cases. Returns {oracle check, identity check}.
inline std::vector<CheckResult> dense_checks(std::size_t cases = 50, std::size_t samples = 512,
                                             std::uint64_t seed = 1001) {
    double worst_param = 0.0, worst_resid = 0.0, worst_rel = 0.0;
    std::size_t ridged = 0;
    const auto start = std::chrono::steady_clock::now();
    for (std::size_t i = 0; i < cases; ++i) {
        const auto c = detail::make_dense_case(seed + i, samples);
        const MomentSet ms = estimate_moments(c.a0, c.a1);
        const DenseFusionResult dr = fuse_dense(ms, c.w2, c.b2);

        std::vector<Vector> target, fused;
        for (std::size_t t = 0; t < samples; ++t) {
            target.push_back(c.w2 * c.a1[t] + c.b2);
            fused.push_back(dr.weights * c.a0[t] + dr.bias);
        }
        const oracle::AffineFit fit = oracle::affine_lsq(c.a0, target);
        const double emp = empirical_mse(fused, target);
        worst_param = std::max({worst_param, detail::max_abs(dr.weights - fit.A), detail::max_abs(dr.bias - fit.c)});
        worst_resid = std::max(worst_resid, std::abs(emp - fit.residual_mse));
        if (dr.ridge_used > 0.0) {
            ++ridged;
        } else {
            worst_rel = std::max(worst_rel, std::abs(dr.predicted_mse - emp) / std::max(emp, 1e-300));
        }
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

    CheckResult oracle_check;
    oracle_check.id = 1;
    oracle_check.name = "dense fusion matches affine least squares";
    oracle_check.passed = worst_param <= dense_param_tol && worst_resid <= dense_residual_tol && secs < 30.0;
    oracle_check.detail = std::to_string(cases) + " cases, max param diff " + detail::fmt(worst_param) +
                          ", max residual diff " + detail::fmt(worst_resid);
    oracle_check.seconds = secs;

    CheckResult identity;
    identity.id = 2;
    identity.name = "predicted MSE equals empirical MSE";
    identity.passed = ridged == 0 && worst_rel <= predicted_mse_rel_tol;
    identity.detail = "max rel err " + detail::fmt(worst_rel) + ", ridged cases " + std::to_string(ridged);
    identity.seconds = secs;
    return {oracle_check, identity};
}

inline CheckResult linear_collapse_check(std::size_t cases = 10, std::uint64_t seed = 2001) {
    return detail::timed(3, "linear pair collapses exactly", [&] {
        double w_err = 0.0, b_err = 0.0, mse = 0.0, out_err = 0.0;
        for (std::size_t i = 0; i < cases; ++i) {
            detail::Rng rng(seed + i);
            const std::size_t l0 = detail::uniform(rng, 1, 24), l1 = detail::uniform(rng, 1, 24),
                              l2 = detail::uniform(rng, 1, 24);
            Network net;
            net.input_shape = {1, l0};
            DenseLayer d1{detail::randn(rng, l1, l0, 1.0 / std::sqrt(double(l0))), detail::randn(rng, l1), Activation::identity, {}};
            DenseLayer d2{detail::randn(rng, l2, l1, 1.0 / std::sqrt(double(l1))), detail::randn(rng, l2), Activation::identity, {}};
            net.layers = {d1, d2};
            const auto inputs = detail::gaussian_inputs(rng, 256, l0);
            const FusionOutcome fo = fuse_layers(net, {0, 1}, inputs);
            const auto& fused = std::get<DenseLayer>(fo.network.layers[fo.fused_index]);
            w_err = std::max(w_err, detail::max_abs(fused.weights - d2.weights * d1.weights));
            b_err = std::max(b_err, detail::max_abs(fused.bias - (d2.weights * d1.bias + d2.bias)));
            mse = std::max(mse, fo.predicted_mse);
            for (const auto& x : inputs) out_err = std::max(out_err, detail::max_abs(predict(fo.network, x) - predict(net, x)));
        }
        CheckResult r;
        r.passed = w_err <= collapse_param_tol && b_err <= collapse_param_tol && mse <= collapse_mse_tol &&
                   out_err <= collapse_output_tol;
        r.detail = "W err " + detail::fmt(w_err) + ", b err " + detail::fmt(b_err) + ", predicted mse " +
                   detail::fmt(mse) + ", output err " + detail::fmt(out_err);
        return r;
    });
}

/// One conv-conv case compared with the window regression oracle.
struct ConvCaseError {
    double per_channel = 0.0;
    double joint = 0.0;
    double normal_residual = 0.0;
};

inline ConvCaseError conv_case(const Network& net, const std::vector<Vector>& inputs, bool compare_joint) {
    const auto& c2 = std::get<Conv1dLayer>(net.layers[1]);
    const ConvMomentSet cm = estimate_conv_moments(net, {0, 1}, inputs);
    const ConvFusionResult cr = fuse_conv(cm, c2);

    const std::size_t M = net.input_shape.channels, L0 = net.input_shape.length;
    const std::size_t P = c2.out_channels;
    std::vector<Vector> x_c, v_c;
    Vector x_mean = Vector::Zero(static_cast<Eigen::Index>(M * L0));
    std::vector<Vector> pre;
    for (const auto& x : inputs) {
        x_mean += x;
        pre.push_back(pre_activation_at(net, 1, x));
    }
    x_mean /= static_cast<double>(inputs.size());
    Vector v_mean = Vector::Zero(pre.front().size());
    for (const auto& v : pre) v_mean += v;
    v_mean /= static_cast<double>(pre.size());
    for (std::size_t t = 0; t < inputs.size(); ++t) {
        x_c.push_back(inputs[t] - x_mean);
        v_c.push_back(pre[t] - v_mean);
    }

    const oracle::WindowProblem g{M, L0, P, cm.kernel, cm.stride};
    ConvCaseError e;
    for (std::size_t p = 0; p < P; ++p) {
        for (std::size_t m = 0; m < M; ++m) {
            const auto fit = oracle::conv_window_lsq(x_c, v_c, g, m, p);
            e.per_channel = std::max(e.per_channel, detail::max_abs(fit.h - cr.filter(m, p)));
            e.normal_residual = std::max(e.normal_residual, detail::max_abs(cm.U[m] * cr.filter(m, p) - cm.cross(m, p)));
        }
        if (compare_joint) {
            const auto joint = oracle::conv_window_lsq_joint(x_c, v_c, g, p);
            for (std::size_t m = 0; m < M; ++m) {
                const Vector seg = joint.h.segment(static_cast<Eigen::Index>(m * cm.kernel), static_cast<Eigen::Index>(cm.kernel));
                e.joint = std::max(e.joint, detail::max_abs(seg - cr.filter(m, p)));
            }
        }
    }
    return e;
}

inline CheckResult conv_oracle_check(std::size_t single_cases = 20, std::size_t orthogonal_cases = 10,
                                     std::size_t samples = 256, std::uint64_t seed = 3001) {
    return detail::timed(4, "conv fusion matches window least squares", [&] {
        ConvCaseError worst;
        // stride triples with s1 * r1 * s2 <= 4
        const std::vector<std::array<std::size_t, 3>> strides = {
            {1, 1, 1}, {2, 1, 1}, {1, 2, 1}, {1, 1, 2}, {2, 2, 1}, {2, 1, 2}, {1, 2, 2}, {4, 1, 1}, {1, 1, 4}, {1, 4, 1}};
        const std::size_t total = single_cases + orthogonal_cases;
        for (std::size_t i = 0; i < total; ++i) {
            detail::Rng rng(seed + i);
            const bool two = i >= single_cases;
            const std::size_t M = two ? 2 : 1;
            const auto st = strides[i % strides.size()];
            const std::size_t k1 = detail::uniform(rng, 1, 3), k2 = detail::uniform(rng, 1, 3);
            const std::size_t L0 = detail::uniform(rng, 8, 32);
            const std::size_t N = detail::uniform(rng, 1, 3), P = detail::uniform(rng, 1, 3);
            Network net;
            net.input_shape = {M, L0};
            net.layers = {detail::make_conv(rng, M, N, k1, st[0], Activation::relu, st[1]),
                          detail::make_conv(rng, N, P, k2, st[2], Activation::relu, 1)};
            const auto inputs = two ? detail::orthogonal_inputs(seed + 100 + i, samples, M, L0)
                                    : detail::gaussian_inputs(rng, samples, M * L0);
            const ConvCaseError e = conv_case(net, inputs, two);
            worst.per_channel = std::max(worst.per_channel, e.per_channel);
            worst.joint = std::max(worst.joint, e.joint);
            worst.normal_residual = std::max(worst.normal_residual, e.normal_residual);
        }
        CheckResult r;
        r.passed = worst.per_channel <= conv_param_tol && worst.joint <= conv_param_tol &&
                   worst.normal_residual <= conv_normal_tol;
        r.detail = std::to_string(total) + " cases, per-channel diff " + detail::fmt(worst.per_channel) +
                   ", joint diff " + detail::fmt(worst.joint) + ", normal-equation residual " +
                   detail::fmt(worst.normal_residual);
        return r;
    });
}

inline CheckResult delta_filter_check(std::size_t cases = 8, std::uint64_t seed = 4001) {
    return detail::timed(5, "identity first layer returns the second filter", [&] {
        double f_err = 0.0, mse = 0.0;
        for (std::size_t i = 0; i < cases; ++i) {
            detail::Rng rng(seed + i);
            const std::size_t M = i % 4 == 3 ? 2 : 1;
            const std::size_t L0 = detail::uniform(rng, 6, 24);
            Conv1dLayer delta = detail::make_conv(rng, M, M, 1, 1, Activation::identity, 1);
            for (std::size_t m = 0; m < M; ++m) {
                for (std::size_t n = 0; n < M; ++n) delta.filter(m, n) = Vector::Constant(1, m == n ? 1.0 : 0.0);
                delta.bias[m] = Vector::Zero(1);
            }
            const std::size_t k2 = detail::uniform(rng, 1, 3), s2 = detail::uniform(rng, 1, 2);
            Network net;
            net.input_shape = {M, L0};
            net.layers = {delta, detail::make_conv(rng, M, detail::uniform(rng, 1, 3), k2, s2, Activation::relu, 1)};
            const auto inputs = M == 2 ? detail::orthogonal_inputs(seed + 50 + i, 128, M, L0)
                                       : detail::gaussian_inputs(rng, 128, L0);
            const FusionOutcome fo = fuse_layers(net, {0, 1}, inputs);
            const auto& c2 = std::get<Conv1dLayer>(net.layers[1]);
            for (std::size_t m = 0; m < M; ++m) {
                for (std::size_t p = 0; p < c2.out_channels; ++p) {
                    f_err = std::max(f_err, detail::max_abs(fo.conv->filter(m, p) - c2.filter(m, p)));
                }
            }
            mse = std::max(mse, fo.conv->channel_mse.maxCoeff());
        }
        CheckResult r;
        r.passed = f_err <= delta_filter_tol && mse <= delta_mse_tol;
        r.detail = "filter diff " + detail::fmt(f_err) + ", max channel mse " + detail::fmt(mse);
        return r;
    });
}

inline CheckResult scalar_case_check() {
    return detail::timed(6, "scalar relu case", [] {
        std::vector<Vector> a0, a1, target;
        for (double v : {-1.0, 0.0, 2.0}) {
            a0.push_back(Vector::Constant(1, v));
            a1.push_back(Vector::Constant(1, std::max(v, 0.0)));
            target.push_back(a1.back());
        }
        const MomentSet ms = estimate_moments(a0, a1);
        const DenseFusionResult dr = fuse_dense(ms, Matrix::Identity(1, 1), Vector::Zero(1));
        const auto fit = oracle::affine_lsq(a0, target);
        const double w = dr.weights(0, 0), b = dr.bias[0], mse = dr.predicted_mse;
        const double err = std::max({std::abs(w - 5.0 / 7.0), std::abs(b - 3.0 / 7.0), std::abs(mse - 2.0 / 21.0)});
        const double oracle_err = std::max({std::abs(fit.A(0, 0) - 5.0 / 7.0), std::abs(fit.c[0] - 3.0 / 7.0),
                                            std::abs(fit.residual_mse - 2.0 / 21.0)});
        CheckResult r;
        r.passed = err <= scalar_tol && oracle_err <= scalar_tol;
        r.detail = "W " + std::to_string(w) + ", b " + std::to_string(b) + ", mse " + std::to_string(mse) +
                   ", err " + detail::fmt(err) + ", oracle err " + detail::fmt(oracle_err);
        return r;
    });
}

/// Relative error between backprop and central differences of the mean loss.
inline double gradient_error(Network net, const std::vector<Sample>& batch, Loss loss) {
    const Vector g = gradients(net, batch, loss);
    Vector p = get_parameters(net);
    Vector fd(p.size());
    for (Eigen::Index i = 0; i < p.size(); ++i) {
        const double keep = p[i];
        p[i] = keep + fd_step;
        set_parameters(net, p);
        const double up = evaluate_loss(net, batch, loss);
        p[i] = keep - fd_step;
        set_parameters(net, p);
        const double down = evaluate_loss(net, batch, loss);
        p[i] = keep;
        fd[i] = (up - down) / (2.0 * fd_step);
    }
    set_parameters(net, p);
    return (g - fd).norm() / std::max({g.norm(), fd.norm(), 1e-12});
}

/// Small seeded nets covering every layer kind and activation.
inline std::vector<std::pair<std::string, std::pair<Network, Loss>>> gradient_nets(std::uint64_t seed) {
    detail::Rng rng(seed);
    std::vector<std::pair<std::string, std::pair<Network, Loss>>> nets;
    auto dense = [&](std::size_t in, std::size_t out, Activation a) {
        return DenseLayer{detail::randn(rng, out, in, 0.7), detail::randn(rng, out, 0.3), a, {}};
    };
    {
        Network n;
        n.input_shape = {1, 3};
        n.layers = {dense(3, 4, Activation::tanh), dense(4, 5, Activation::relu), dense(5, 3, Activation::softmax)};
        nets.push_back({"dense tanh/relu/softmax, cross-entropy", {n, Loss::cross_entropy}});
    }
    {
        Network n;
        n.input_shape = {1, 3};
        n.layers = {dense(3, 4, Activation::sigmoid), dense(4, 2, Activation::identity)};
        nets.push_back({"dense sigmoid/identity, mse", {n, Loss::mse}});
    }
    {
        Network n;
        n.input_shape = {2, 9};
        Conv1dLayer c1 = detail::make_conv(rng, 2, 3, 3, 2, Activation::relu, 2);
        for (auto& b : c1.bias) b = detail::randn(rng, c1.conv_length(9), 0.3);  // positional
        Conv1dLayer c2 = detail::make_conv(rng, 3, 2, 2, 1, Activation::tanh, 1);
        n.layers = {c1, c2, Flatten{}, dense(2 * 3, 3, Activation::softmax)};
        nets.push_back({"strided conv, max-pool, positional bias, flatten", {n, Loss::cross_entropy}});
    }
    {
        Network n;
        n.input_shape = {1, 11};
        n.layers = {detail::make_conv(rng, 1, 2, 4, 1, Activation::tanh, 1),
                    detail::make_conv(rng, 2, 2, 3, 3, Activation::identity, 2)};
        nets.push_back({"conv output layer with pooling, mse", {n, Loss::mse}});
    }
    return nets;
}

inline CheckResult gradient_check(std::uint64_t seed = 5001) {
    return detail::timed(7, "gradients match finite differences", [&] {
        detail::Rng rng(seed + 1);
        double worst = 0.0;
        std::string worst_name;
        for (auto& [name, nl] : gradient_nets(seed)) {
            auto& [net, loss] = nl;
            const auto shapes = net.shapes();
            std::vector<Sample> batch;
            for (int t = 0; t < 4; ++t) {
                Sample s;
                s.x = detail::randn(rng, net.input_shape.size());
                const auto out = static_cast<std::size_t>(shapes.back().size());
                if (loss == Loss::cross_entropy) {
                    s.label = static_cast<int>(detail::uniform(rng, 0, out - 1));
                    s.y = one_hot(static_cast<std::size_t>(s.label), out);
                } else {
                    s.y = detail::randn(rng, out);
                }
                batch.push_back(std::move(s));
            }
            const double e = gradient_error(net, batch, loss);
            if (e >= worst) {
                worst = e;
                worst_name = name;
            }
        }
        CheckResult r;
        r.passed = worst <= gradient_rel_tol;
        r.detail = "max rel err " + detail::fmt(worst) + " (" + worst_name + ")";
        return r;
    });
}

inline CheckResult length_law_check(std::uint64_t seed = 6001) {
    return detail::timed(8, "length and stride laws", [&] {
        std::size_t points = 0, failures = 0;
        std::string first_failure;
        for (std::size_t L0 = 1; L0 <= 64; ++L0) {
            for (std::size_t s1 = 1; s1 <= 8; ++s1) {
                for (std::size_t r1 = 1; s1 * r1 <= 8; ++r1) {
                    for (std::size_t s2 = 1; s1 * r1 * s2 <= 8; ++s2) {
                        for (std::size_t k1 : {1, 2, 3}) {
                            for (std::size_t k2 : {1, 3}) {
                                NetworkSpec spec;
                                spec.input_shape = {1, L0};
                                spec.layers = {ConvSpec{2, k1, s1, Activation::relu,
                                                        r1 > 1 ? PoolSpec{PoolKind::max, r1} : PoolSpec{}, false},
                                               ConvSpec{1, k2, s2, Activation::identity, PoolSpec{}, false}};
                                const auto deep = shapes_of(spec);
                                const NetworkSpec fused_spec = fuse_spec(spec, {0, 1});
                                const auto shallow = shapes_of(fused_spec);
                                const std::size_t composed = ceil_div(ceil_div(ceil_div(L0, s1), r1), s2);
                                const auto& fused = std::get<ConvSpec>(fused_spec.layers[0]);
                                const Vector y = convolve(Vector::Ones(static_cast<Eigen::Index>(L0)),
                                                          Vector::Ones(static_cast<Eigen::Index>(fused.kernel)), fused.stride);
                                ++points;
                                if (deep.back().length != composed || shallow.back().length != composed ||
                                    static_cast<std::size_t>(y.size()) != composed) {
                                    if (failures++ == 0) {
                                        first_failure = "L0=" + std::to_string(L0) + " s1=" + std::to_string(s1) +
                                                        " r1=" + std::to_string(r1) + " s2=" + std::to_string(s2);
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        // fitted fusions on a sparse subset of the grid
        detail::Rng rng(seed);
        for (std::size_t L0 : {1, 5, 17, 33, 64}) {
            for (std::size_t st : {1, 2, 4, 8}) {
                Network net;
                net.input_shape = {1, L0};
                net.layers = {detail::make_conv(rng, 1, 2, 3, st >= 2 ? 2 : 1, Activation::relu, st >= 4 ? 2 : 1),
                              detail::make_conv(rng, 2, 1, 3, st == 8 ? 2 : 1, Activation::identity, 1)};
                const auto inputs = detail::gaussian_inputs(rng, 64, L0);
                const FusionOutcome fo = fuse_layers(net, {0, 1}, inputs);
                ++points;
                if (predict(fo.network, inputs[0]).size() != predict(net, inputs[0]).size()) {
                    if (failures++ == 0) first_failure = "fitted L0=" + std::to_string(L0);
                }
            }
        }
        std::size_t pad_failures = 0;
        for (std::size_t k = 1; k <= 7; ++k) {
            for (std::size_t L = 1; L <= 16; ++L) {
                if (static_cast<std::size_t>(zero_pad(Vector::Ones(static_cast<Eigen::Index>(L)), k).size()) != L + k - 1) {
                    ++pad_failures;
                }
            }
        }
        CheckResult r;
        r.passed = failures == 0 && pad_failures == 0;
        r.detail = std::to_string(points) + " grid points, " + std::to_string(failures) + " length failures" +
                   (first_failure.empty() ? "" : " (first " + first_failure + ")") + ", " +
                   std::to_string(pad_failures) + " padding failures";
        return r;
    });
}

/// Criteria that need no training: oracles, identities and structural laws.
inline std::vector<CheckResult> run_static_checks() {
    std::vector<CheckResult> out = dense_checks();
    out.push_back(linear_collapse_check());
    out.push_back(conv_oracle_check());
    out.push_back(delta_filter_check());
    out.push_back(scalar_case_check());
    out.push_back(gradient_check());
    out.push_back(length_law_check());
    return out;
}

inline std::string format_result(const CheckResult& r) {
    std::ostringstream os;
    os << "criterion " << r.id << ": " << (r.passed ? "PASS" : "FAIL") << "  " << r.name << "  [" << r.detail << "; "
       << std::fixed;
    os.precision(2);
    os << r.seconds << " s]";
    return os.str();
}

}  // namespace fuseinit::verify
