#include <gtest/gtest.h>

#include <algorithm>
#include <random>

#include "fuseinit/moments.hpp"
#include "fuseinit/verify.hpp"

using namespace fuseinit;

namespace {

std::vector<Vector> scalars(std::initializer_list<double> v) {
    std::vector<Vector> out;
    for (double x : v) out.push_back(Vector::Constant(1, x));
    return out;
}

Network scalar_relu() {
    Network net;
    net.input_shape = {1, 1};
    net.layers = {DenseLayer{Matrix::Identity(1, 1), Vector::Zero(1), Activation::relu, {}},
                  DenseLayer{Matrix::Identity(1, 1), Vector::Zero(1), Activation::identity, {}}};
    return net;
}

}  // namespace

TEST(DenseMoments, ThreePointRelu) {
    const MomentSet ms = estimate_dense_moments(scalar_relu(), {0, 1}, scalars({-1, 0, 2}));
    EXPECT_NEAR(ms.mean_a0[0], 1.0 / 3.0, 1e-15);
    EXPECT_NEAR(ms.mean_a1[0], 2.0 / 3.0, 1e-15);
    EXPECT_NEAR(ms.C_a0(0, 0), 14.0 / 9.0, 1e-15);
    EXPECT_NEAR(ms.C_a1a0(0, 0), 10.0 / 9.0, 1e-15);
    EXPECT_NEAR(ms.C_a1(0, 0), 8.0 / 9.0, 1e-15);
    EXPECT_EQ(ms.sample_count, 3u);
}

TEST(DenseMoments, ConstantInputAndIdentityLayer) {
    const auto constant = std::vector<Vector>(5, Vector::Constant(3, 1.5));
    EXPECT_EQ(estimate_moments(constant, constant).C_a0, Matrix::Zero(3, 3));

    std::mt19937_64 rng(1);
    std::normal_distribution<double> n;
    std::vector<Vector> a0;
    for (int t = 0; t < 20; ++t) a0.push_back(Vector::NullaryExpr(4, [&] { return n(rng); }));
    const MomentSet ms = estimate_moments(a0, a0);
    EXPECT_EQ(ms.C_a1a0, ms.C_a0);
}

TEST(DenseMoments, TooFewSamples) {
    EXPECT_THROW(estimate_moments(scalars({1}), scalars({1})), DataError);
}

TEST(DenseMoments, SymmetricAndPsd) {
    const auto c = verify::detail::make_dense_case(12, 40);
    const MomentSet ms = estimate_moments(c.a0, c.a1);
    EXPECT_EQ(ms.C_a0, Matrix(ms.C_a0.transpose()));
    EXPECT_EQ(ms.C_a1, Matrix(ms.C_a1.transpose()));
    EXPECT_GE(min_eigenvalue(ms.C_a0), -1e-10 * ms.C_a0.trace());
}

TEST(DenseMoments, ConcentratesWithMoreSamples) {
    const std::size_t L0 = 6;
    std::mt19937_64 rng(5);
    std::normal_distribution<double> n;
    Matrix mix = Matrix::NullaryExpr(L0, L0, [&] { return n(rng); });
    const Matrix truth = mix * mix.transpose();
    std::vector<double> medians;
    for (std::size_t factor : {2, 8, 32}) {
        std::vector<double> errs;
        for (int seed = 0; seed < 10; ++seed) {
            std::mt19937_64 r(100 + seed);
            std::vector<Vector> a0;
            for (std::size_t t = 0; t < factor * L0; ++t) {
                a0.push_back(mix * Vector::NullaryExpr(L0, [&] { return n(r); }));
            }
            errs.push_back((estimate_moments(a0, a0).C_a0 - truth).norm());
        }
        std::nth_element(errs.begin(), errs.begin() + 5, errs.end());
        medians.push_back(errs[5]);
    }
    EXPECT_GT(medians[0], medians[1]);
    EXPECT_GT(medians[1], medians[2]);
}

TEST(EmpiricalMse, Basics) {
    const auto a = scalars({1, 2, 3});
    EXPECT_EQ(empirical_mse(a, a), 0.0);
    std::vector<Vector> fused;
    for (double x : {-1.0, 0.0, 2.0}) fused.push_back(Vector::Constant(1, 5.0 / 7.0 * x + 3.0 / 7.0));
    EXPECT_NEAR(empirical_mse(fused, scalars({0, 0, 2})), 2.0 / 21.0, 1e-15);
    EXPECT_THROW(empirical_mse(std::vector<Vector>{}, std::vector<Vector>{}), DataError);
}

namespace {

Conv1dLayer delta_layer() {
    Conv1dLayer c;
    c.filters = {Vector::Ones(1)};
    c.bias = {Vector::Zero(1)};
    return c;
}

Conv1dLayer random_conv(std::mt19937_64& rng, std::size_t in, std::size_t out, std::size_t k, std::size_t s) {
    return verify::detail::make_conv(rng, in, out, k, s, Activation::relu, 1);
}

}  // namespace

TEST(ConvMoments, ConstantSamplesGiveZero) {
    std::mt19937_64 rng(2);
    Network net;
    net.input_shape = {1, 6};
    net.layers = {random_conv(rng, 1, 2, 3, 1), random_conv(rng, 2, 1, 3, 1)};
    const auto inputs = std::vector<Vector>(4, Vector::Constant(6, 0.5));
    const ConvMomentSet cm = estimate_conv_moments(net, {0, 1}, inputs);
    EXPECT_EQ(cm.U[0], Matrix::Zero(5, 5));
    EXPECT_EQ(cm.cross(0, 0), Vector::Zero(5));
}

TEST(ConvMoments, DeltaLayerMatchesDirectLoop) {
    std::mt19937_64 rng(3);
    std::normal_distribution<double> n;
    const std::size_t L0 = 7;
    Network net;
    net.input_shape = {1, L0};
    Conv1dLayer second = delta_layer();
    net.layers = {delta_layer(), second};
    std::vector<Vector> inputs;
    for (int t = 0; t < 30; ++t) inputs.push_back(Vector::NullaryExpr(L0, [&] { return n(rng) + 0.3 * t; }));
    const ConvMomentSet cm = estimate_conv_moments(net, {0, 1}, inputs, 1);
    ASSERT_EQ(cm.U[0].rows(), 1);
    // k = 1, s = 1: U = sum over positions of the per-position variance
    double expected = 0.0;
    for (std::size_t l = 0; l < L0; ++l) {
        double mean = 0.0, sq = 0.0;
        for (const auto& x : inputs) mean += x[static_cast<Eigen::Index>(l)];
        mean /= static_cast<double>(inputs.size());
        for (const auto& x : inputs) sq += std::pow(x[static_cast<Eigen::Index>(l)] - mean, 2);
        expected += sq / static_cast<double>(inputs.size());
    }
    EXPECT_NEAR(cm.U[0](0, 0), expected, 1e-12 * expected);
    EXPECT_NEAR(cm.cross(0, 0)[0], expected, 1e-12 * expected);
}

// U and z rebuilt with explicit window loops over the padded, flipped signal.
TEST(ConvMoments, MatchesDirectWindowLoops) {
    std::mt19937_64 rng(8);
    std::normal_distribution<double> n;
    const std::size_t M = 2, L0 = 9;
    Network net;
    net.input_shape = {M, L0};
    net.layers = {verify::detail::make_conv(rng, M, 3, 2, 2, Activation::tanh, 1), random_conv(rng, 3, 2, 3, 1)};
    std::vector<Vector> inputs;
    for (int t = 0; t < 25; ++t) inputs.push_back(Vector::NullaryExpr(M * L0, [&] { return n(rng); }));
    const ConvMomentSet cm = estimate_conv_moments(net, {0, 1}, inputs);
    const std::size_t k = cm.kernel, s = cm.stride, P = 2;
    ASSERT_EQ(k, 2u + 2u * 2u);
    ASSERT_EQ(s, 2u);

    Vector mean = Vector::Zero(M * L0);
    for (const auto& x : inputs) mean += x;
    mean /= static_cast<double>(inputs.size());
    std::vector<Vector> pre;
    Vector pre_mean = Vector::Zero(P * cm.output_length);
    for (const auto& x : inputs) {
        pre.push_back(pre_activation_at(net, 1, x));
        pre_mean += pre.back();
    }
    pre_mean /= static_cast<double>(inputs.size());

    for (std::size_t m = 0; m < M; ++m) {
        Matrix U = Matrix::Zero(k, k);
        std::vector<Vector> z(P, Vector::Zero(k));
        for (std::size_t t = 0; t < inputs.size(); ++t) {
            std::vector<double> padded(k / 2, 0.0);
            for (std::size_t l = 0; l < L0; ++l) padded.push_back(inputs[t][m * L0 + l] - mean[m * L0 + l]);
            padded.resize(L0 + k - 1, 0.0);
            std::vector<double> u(padded.rbegin(), padded.rend());
            for (std::size_t i0 = 0, j = 0; i0 < L0; i0 += s, ++j) {
                Vector w(k);
                for (std::size_t q = 0; q < k; ++q) w[q] = u[L0 - 1 - i0 + q];
                U += w * w.transpose();
                for (std::size_t p = 0; p < P; ++p) {
                    const double v = pre[t][p * cm.output_length + j] - pre_mean[p * cm.output_length + j];
                    z[p] += v * w;
                }
            }
        }
        U /= static_cast<double>(inputs.size());
        EXPECT_LT((U - cm.U[m]).cwiseAbs().maxCoeff(), 1e-12);
        EXPECT_EQ(cm.U[m], Matrix(cm.U[m].transpose()));
        EXPECT_GE(min_eigenvalue(cm.U[m]), -1e-10 * cm.U[m].trace());
        for (std::size_t p = 0; p < P; ++p) {
            EXPECT_LT((z[p] / static_cast<double>(inputs.size()) - cm.cross(m, p)).cwiseAbs().maxCoeff(), 1e-12);
        }
    }
}

TEST(ConvMoments, IndependentChannelsHaveSmallCrossCorrelation) {
    std::mt19937_64 rng(13);
    std::normal_distribution<double> n;
    const std::size_t M = 3, L0 = 16;
    std::vector<Vector> centered;
    for (std::size_t t = 0; t < 10 * L0; ++t) centered.push_back(Vector::NullaryExpr(M * L0, [&] { return n(rng); }));
    EXPECT_LT(channel_crosscorrelation(centered, M, L0), 0.1);

    // identical channels are fully correlated
    for (auto& x : centered) x.segment(L0, L0) = x.head(L0);
    EXPECT_NEAR(channel_crosscorrelation(centered, M, L0), 1.0, 1e-12);
}
