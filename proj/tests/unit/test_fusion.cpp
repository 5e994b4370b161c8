#include <gtest/gtest.h>

#include <random>

#include "fuseinit/fusion.hpp"
#include "fuseinit/init.hpp"
#include "fuseinit/oracle.hpp"
#include "fuseinit/verify.hpp"

using namespace fuseinit;
namespace vd = verify::detail;

namespace {

std::vector<Vector> scalars(std::initializer_list<double> v) {
    std::vector<Vector> out;
    for (double x : v) out.push_back(Vector::Constant(1, x));
    return out;
}

DenseLayer dense(const Matrix& w, const Vector& b, Activation a) { return DenseLayer{w, b, a, {}}; }

std::vector<Vector> pre_at(const Network& net, std::size_t index, const std::vector<Vector>& inputs) {
    std::vector<Vector> out;
    for (const auto& x : inputs) out.push_back(pre_activation_at(net, index, x));
    return out;
}

std::vector<Vector> centered(std::vector<Vector> xs) {
    Vector mean = Vector::Zero(xs.front().size());
    for (const auto& x : xs) mean += x;
    mean /= static_cast<double>(xs.size());
    for (auto& x : xs) x -= mean;
    return xs;
}

Network three_dense(vd::Rng& rng, std::size_t l0, Activation mid) {
    Network net;
    net.input_shape = {1, l0};
    net.layers = {dense(vd::randn(rng, 5, l0, 0.6), vd::randn(rng, 5), Activation::tanh),
                  dense(vd::randn(rng, 4, 5, 0.6), vd::randn(rng, 4), mid),
                  dense(vd::randn(rng, 2, 4, 0.6), vd::randn(rng, 2), Activation::identity)};
    return net;
}

}  // namespace

TEST(DenseFusion, ScalarReluCase) {
    Network net;
    net.input_shape = {1, 1};
    net.layers = {dense(Matrix::Identity(1, 1), Vector::Zero(1), Activation::relu),
                  dense(Matrix::Identity(1, 1), Vector::Zero(1), Activation::identity)};
    const auto inputs = scalars({-1, 0, 2});
    const FusionOutcome fo = fuse_layers(net, {0, 1}, inputs);
    const auto& d = std::get<DenseLayer>(fo.network.layers[fo.fused_index]);
    EXPECT_NEAR(d.weights(0, 0), 5.0 / 7.0, 1e-14);
    EXPECT_NEAR(d.bias[0], 3.0 / 7.0, 1e-14);
    EXPECT_NEAR(fo.predicted_mse, 2.0 / 21.0, 1e-14);
    EXPECT_NEAR(fo.empirical_mse, 2.0 / 21.0, 1e-14);
    ASSERT_TRUE(d.provenance.has_value());
    EXPECT_EQ(d.provenance->first, 0u);
}

TEST(DenseFusion, LinearPairCollapses) {
    vd::Rng rng(3);
    Network net;
    net.input_shape = {1, 6};
    const DenseLayer d1 = dense(vd::randn(rng, 5, 6, 1.0), vd::randn(rng, 5), Activation::identity);
    const DenseLayer d2 = dense(vd::randn(rng, 3, 5, 1.0), vd::randn(rng, 3), Activation::tanh);
    net.layers = {d1, d2};
    const auto inputs = vd::gaussian_inputs(rng, 100, 6);
    const FusionOutcome fo = fuse_layers(net, {0, 1}, inputs);
    const auto& d = std::get<DenseLayer>(fo.network.layers[0]);
    EXPECT_LT(vd::max_abs(d.weights - d2.weights * d1.weights), 1e-10);
    EXPECT_LT(vd::max_abs(d.bias - (d2.weights * d1.bias + d2.bias)), 1e-10);
    EXPECT_LT(fo.predicted_mse, 1e-10);
    EXPECT_EQ(d.activation, Activation::tanh);
    for (const auto& x : inputs) EXPECT_LT(vd::max_abs(predict(fo.network, x) - predict(net, x)), 1e-10);
}

TEST(DenseFusion, MatchesAffineLeastSquares) {
    for (std::uint64_t seed : {11u, 12u, 13u}) {
        const auto c = vd::make_dense_case(seed, 300);
        const DenseFusionResult dr = fuse_dense(estimate_moments(c.a0, c.a1), c.w2, c.b2);
        std::vector<Vector> targets;
        for (const auto& a : c.a1) targets.push_back(c.w2 * a + c.b2);
        const auto fit = oracle::affine_lsq(c.a0, targets);
        EXPECT_LT(vd::max_abs(dr.weights - fit.A), 1e-8);
        EXPECT_LT(vd::max_abs(dr.bias - fit.c), 1e-8);
        // trace formula equals the achieved residual
        EXPECT_NEAR(dr.predicted_mse, fit.residual_mse, 1e-8 * std::max(1.0, fit.residual_mse));
    }
}

TEST(DenseFusion, PerturbationNeverHelps) {
    const auto c = vd::make_dense_case(21, 200);
    const DenseFusionResult dr = fuse_dense(estimate_moments(c.a0, c.a1), c.w2, c.b2);
    std::vector<Vector> targets;
    for (const auto& a : c.a1) targets.push_back(c.w2 * a + c.b2);
    auto mse_of = [&](const Matrix& w, const Vector& b) {
        std::vector<Vector> got;
        for (const auto& a : c.a0) got.push_back(w * a + b);
        return empirical_mse(got, targets);
    };
    const double best = mse_of(dr.weights, dr.bias);
    vd::Rng rng(5);
    for (int i = 0; i < 100; ++i) {
        const Matrix dw = 1e-3 * vd::randn(rng, dr.weights.rows(), dr.weights.cols(), 1.0);
        const Vector db = 1e-3 * vd::randn(rng, dr.bias.size());
        EXPECT_GE(mse_of(dr.weights + dw, dr.bias + db), best - 1e-12);
    }
}

TEST(DenseFusion, NormalEquationResidual) {
    const auto c = vd::make_dense_case(31, 400);
    const MomentSet ms = estimate_moments(c.a0, c.a1);
    const DenseFusionResult dr = fuse_dense(ms, c.w2, c.b2);
    const Matrix rhs = c.w2 * ms.C_a1a0;
    EXPECT_LT(vd::max_abs(dr.weights * ms.C_a0 - rhs), 1e-9 * std::max(1.0, vd::max_abs(rhs)));
}

TEST(DenseFusion, DegenerateCases) {
    const auto c = vd::make_dense_case(41, 100);
    const MomentSet ms = estimate_moments(c.a0, c.a1);
    const Matrix zero = Matrix::Zero(c.w2.rows(), c.w2.cols());
    const DenseFusionResult z = fuse_dense(ms, zero, c.b2);
    EXPECT_EQ(z.predicted_mse, 0.0);
    EXPECT_LT(vd::max_abs(z.weights), 1e-12);
    EXPECT_LT(vd::max_abs(z.bias - c.b2), 1e-12);

    // identity first map: a1 = a0
    const MomentSet same = estimate_moments(c.a0, c.a0);
    const Matrix w2 = Matrix::Ones(2, same.C_a0.cols());
    EXPECT_LT(fuse_dense(same, w2, Vector::Zero(2)).predicted_mse, 1e-9);
    EXPECT_THROW(fuse_dense(ms, Matrix::Ones(2, 1000), Vector::Zero(2)), DataError);
}

TEST(ConvFusion, DeltaFirstLayerReturnsSecondFilter) {
    vd::Rng rng(4);
    Conv1dLayer delta;
    delta.filters = {Vector::Ones(1)};
    delta.bias = {Vector::Zero(1)};
    const Conv1dLayer c2 = vd::make_conv(rng, 1, 2, 3, 2, Activation::relu, 1);
    Network net;
    net.input_shape = {1, 12};
    net.layers = {delta, c2};
    const FusionOutcome fo = fuse_layers(net, {0, 1}, vd::gaussian_inputs(rng, 80, 12));
    ASSERT_EQ(fo.kind, PairKind::conv_conv);
    for (std::size_t p = 0; p < 2; ++p) EXPECT_LT(vd::max_abs(fo.conv->filter(0, p) - c2.filter(0, p)), 1e-9);
    EXPECT_LT(fo.predicted_mse, 1e-12);
}

TEST(ConvFusion, MatchesToeplitzRegression) {
    vd::Rng rng(6);
    const std::size_t L0 = 8;
    Network net;
    net.input_shape = {1, L0};
    net.layers = {vd::make_conv(rng, 1, 3, 1, 1, Activation::relu, 1), vd::make_conv(rng, 3, 2, 3, 1, Activation::tanh, 1)};
    const auto inputs = vd::gaussian_inputs(rng, 64, L0);
    const FusionOutcome fo = fuse_layers(net, {0, 1}, inputs);
    ASSERT_EQ(fo.conv->kernel, 3u);
    const auto x = centered(inputs);
    const auto v = centered(pre_at(net, 1, inputs));
    const oracle::WindowProblem g{1, L0, 2, 3, 1};
    for (std::size_t p = 0; p < 2; ++p) {
        const auto fit = oracle::conv_window_lsq(x, v, g, 0, p);
        EXPECT_LT(vd::max_abs(fo.conv->filter(0, p) - fit.h), 1e-8);
    }
    // fused pre-activations match the oracle residual
    const auto got = pre_at(fo.network, fo.fused_index, inputs);
    double resid = 0.0;
    for (std::size_t p = 0; p < 2; ++p) resid += oracle::conv_window_lsq(x, v, g, 0, p).residual_mse;
    EXPECT_NEAR(empirical_mse(got, pre_at(net, 1, inputs)), resid, 1e-9);
}

TEST(ConvFusion, PerturbationNeverHelps) {
    vd::Rng rng(7);
    const std::size_t L0 = 10;
    Network net;
    net.input_shape = {1, L0};
    net.layers = {vd::make_conv(rng, 1, 2, 3, 1, Activation::relu, 2), vd::make_conv(rng, 2, 2, 3, 1, Activation::relu, 1)};
    const auto inputs = vd::gaussian_inputs(rng, 120, L0);
    const auto target = pre_at(net, 1, inputs);
    const FusionOutcome fo = fuse_layers(net, {0, 1}, inputs);
    const double best = empirical_mse(pre_at(fo.network, fo.fused_index, inputs), target);
    for (int i = 0; i < 100; ++i) {
        Network moved = fo.network;
        auto& c = std::get<Conv1dLayer>(moved.layers[fo.fused_index]);
        for (auto& f : c.filters) f += 1e-3 * vd::randn(rng, f.size());
        EXPECT_GE(empirical_mse(pre_at(moved, fo.fused_index, inputs), target), best - 1e-12);
    }
}

TEST(ConvFusion, WhiteInputGivesNearScaledIdentity) {
    vd::Rng rng(8);
    const std::size_t L0 = 16;
    Network net;
    net.input_shape = {1, L0};
    net.layers = {vd::make_conv(rng, 1, 1, 1, 1, Activation::identity, 1), vd::make_conv(rng, 1, 1, 3, 1, Activation::identity, 1)};
    std::normal_distribution<double> n;
    std::vector<Vector> inputs;
    for (int t = 0; t < 4000; ++t) inputs.push_back(Vector::NullaryExpr(L0, [&] { return 2.0 * n(rng); }));
    const ConvMomentSet cm = estimate_conv_moments(net, {0, 1}, inputs);
    // interior taps see every window; each edge tap misses one
    const Matrix& U = cm.U[0];
    EXPECT_NEAR(U(1, 1) / (4.0 * L0), 1.0, 0.05);
    EXPECT_NEAR(U(0, 0) / (4.0 * (L0 - 1)), 1.0, 0.05);
    EXPECT_LT(std::abs(U(0, 1)) / U(1, 1), 0.05);
    EXPECT_LT(std::abs(U(0, 2)) / U(1, 1), 0.05);
}

TEST(ConvFusion, LengthLawAcrossStrides) {
    for (std::size_t s1 : {1u, 2u}) {
        for (std::size_t r1 : {1u, 2u}) {
            for (std::size_t s2 : {1u, 2u}) {
                for (std::size_t L0 : {5u, 8u, 13u}) {
                    const NetworkSpec spec{{1, L0},
                                           {ConvSpec{2, 3, s1, Activation::relu, r1 > 1 ? PoolSpec{PoolKind::max, r1} : PoolSpec{}, false},
                                            ConvSpec{2, 3, s2, Activation::relu, PoolSpec{}, false}}};
                    const NetworkSpec fused = fuse_spec(spec, {0, 1});
                    const auto& c = std::get<ConvSpec>(fused.layers[0]);
                    EXPECT_EQ(c.stride, s1 * r1 * s2);
                    EXPECT_EQ(c.kernel, 3 + 2 * s1 * r1);
                    EXPECT_EQ(shapes_of(fused).back().length, (L0 + c.stride - 1) / c.stride);
                }
            }
        }
    }
}

TEST(Ranking, LinearPairComesFirst) {
    vd::Rng rng(9);
    const Network net = three_dense(rng, 3, Activation::identity);
    const auto inputs = vd::gaussian_inputs(rng, 200, 3);
    const FusionRanking r = rank_pairs(net, inputs);
    ASSERT_EQ(r.entries.size(), 2u);
    EXPECT_EQ(r.entries[0].pair, (FusionBoundary{1, 2}));
    EXPECT_LT(r.entries[0].predicted_mse, 1e-10);
    EXPECT_GT(r.entries[1].predicted_mse, r.entries[0].predicted_mse);
    EXPECT_NEAR(r.entries[1].predicted_mse, fuse_layers(net, {0, 1}, inputs).predicted_mse, 1e-15);

    const FusionBoundary only[] = {{0, 1}};
    EXPECT_EQ(rank_pairs(net, inputs, only).entries.size(), 1u);
}

TEST(Ranking, InvalidPairs) {
    vd::Rng rng(10);
    Network net = three_dense(rng, 3, Activation::relu);
    const auto inputs = vd::gaussian_inputs(rng, 20, 3);
    EXPECT_THROW(fuse_layers(net, {0, 2}, inputs), ConfigError);
    EXPECT_THROW(fuse_layers(net, {1, 1}, inputs), ConfigError);

    std::get<DenseLayer>(net.layers[2]).activation = Activation::softmax;
    EXPECT_THROW(fuse_layers(net, {1, 2}, inputs), ConfigError);
    EXPECT_EQ(fusable_pairs(net).size(), 1u);

    Network single;
    single.input_shape = {1, 3};
    single.layers = {dense(Matrix::Ones(2, 3), Vector::Zero(2), Activation::identity)};
    EXPECT_THROW(rank_pairs(single, inputs), ConfigError);
}

TEST(Oracle, AffineLeastSquares) {
    const auto x = scalars({-1, 0, 1, 2});
    const auto y = scalars({-2, 1, 4, 7});
    const auto fit = oracle::affine_lsq(x, y);
    EXPECT_NEAR(fit.A(0, 0), 3.0, 1e-12);
    EXPECT_NEAR(fit.c[0], 1.0, 1e-12);
    EXPECT_LT(fit.residual_mse, 1e-24);

    // duplicating every sample changes nothing
    auto xx = x, yy = y;
    xx.insert(xx.end(), x.begin(), x.end());
    yy.insert(yy.end(), y.begin(), y.end());
    const auto twice = oracle::affine_lsq(xx, yy);
    EXPECT_NEAR(twice.A(0, 0), fit.A(0, 0), 1e-12);
    EXPECT_NEAR(twice.c[0], fit.c[0], 1e-12);
}

TEST(Oracle, ZeroTargetsGiveZeroFilter) {
    vd::Rng rng(12);
    const auto x = centered(vd::gaussian_inputs(rng, 30, 6));
    const std::vector<Vector> v(30, Vector::Zero(6));
    const auto fit = oracle::conv_window_lsq(x, v, {1, 6, 1, 3, 1}, 0, 0);
    EXPECT_LT(vd::max_abs(fit.h), 1e-14);
    EXPECT_EQ(fit.residual_mse, 0.0);
}
