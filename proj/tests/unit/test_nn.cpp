#include <gtest/gtest.h>

#include <random>

#include "fuseinit/nn.hpp"
#include "fuseinit/serialize.hpp"
#include "fuseinit/init.hpp"

using namespace fuseinit;

namespace {

Vector vec(std::initializer_list<double> v) {
    Vector out(static_cast<Eigen::Index>(v.size()));
    Eigen::Index i = 0;
    for (double x : v) out[i++] = x;
    return out;
}

Conv1dLayer single_conv(const Vector& h, std::size_t stride) {
    Conv1dLayer c;
    c.kernel = static_cast<std::size_t>(h.size());
    c.stride = stride;
    c.filters = {h};
    c.bias = {Vector::Zero(1)};
    return c;
}

// y[j] = sum_t h[t] * padded[j*s + k-1-t], written straight from the definition
Vector direct_conv(const Vector& x, const Vector& h, std::size_t s) {
    const auto L = static_cast<std::size_t>(x.size());
    const auto k = static_cast<std::size_t>(h.size());
    std::vector<double> padded(k / 2, 0.0);
    for (std::size_t i = 0; i < L; ++i) padded.push_back(x[static_cast<Eigen::Index>(i)]);
    padded.resize(L + k - 1, 0.0);
    const std::size_t n = (L + s - 1) / s;
    Vector y = Vector::Zero(static_cast<Eigen::Index>(n));
    for (std::size_t j = 0; j < n; ++j) {
        for (std::size_t t = 0; t < k; ++t) y[static_cast<Eigen::Index>(j)] += h[static_cast<Eigen::Index>(t)] * padded[j * s + k - 1 - t];
    }
    return y;
}

}  // namespace

TEST(ZeroPad, Examples) {
    EXPECT_EQ(zero_pad(vec({1, 2, 3}), 3), vec({0, 1, 2, 3, 0}));
    EXPECT_EQ(zero_pad(vec({5}), 1), vec({5}));
    EXPECT_EQ(zero_pad(vec({1, 2}), 4), vec({0, 0, 1, 2, 0}));
}

TEST(ZeroPad, LengthLaw) {
    for (std::size_t k = 1; k <= 7; ++k) {
        for (std::size_t L = 1; L <= 16; ++L) {
            const Vector x = Vector::LinSpaced(static_cast<Eigen::Index>(L), 1.0, static_cast<double>(L));
            const Vector p = zero_pad(x, k);
            ASSERT_EQ(static_cast<std::size_t>(p.size()), L + k - 1);
            EXPECT_EQ(p.segment(static_cast<Eigen::Index>(k / 2), static_cast<Eigen::Index>(L)), x);
        }
    }
}

TEST(Conv1d, DeltaFilterIsIdentity) {
    const auto c = single_conv(vec({1}), 1);
    EXPECT_EQ(conv1d_forward(c, vec({3, -1, 4}), 3), vec({3, -1, 4}));
}

TEST(Conv1d, StridedLength) {
    const auto c = single_conv(vec({1}), 2);
    EXPECT_EQ(conv1d_forward(c, vec({1, 2, 3, 4, 5}), 5).size(), 3);
}

TEST(Conv1d, MatchesDirectDefinition) {
    const auto c = single_conv(vec({1, 0, 0}), 1);
    EXPECT_EQ(conv1d_forward(c, vec({1, 2, 3}), 3), direct_conv(vec({1, 2, 3}), vec({1, 0, 0}), 1));
    // h = [1,2,3] on ones: z = [0,1,1,1,0]
    EXPECT_EQ(convolve(vec({1, 1, 1}), vec({1, 2, 3}), 1), vec({3, 6, 5}));
}

TEST(Conv1d, LengthLaw) {
    for (std::size_t s = 1; s <= 4; ++s) {
        for (std::size_t L = 1; L <= 32; ++L) {
            for (std::size_t k = 1; k <= 5; ++k) {
                const Vector y = convolve(Vector::Ones(static_cast<Eigen::Index>(L)), Vector::Ones(static_cast<Eigen::Index>(k)), s);
                EXPECT_EQ(static_cast<std::size_t>(y.size()), (L + s - 1) / s);
            }
        }
    }
}

// Window form: y[j] = < flip(pad(x))[L-1-j*s : L-1-j*s+k], h > with 0-based window starts.
TEST(Conv1d, FlipWindowEquivalence) {
    std::mt19937_64 rng(4);
    std::normal_distribution<double> n;
    for (std::size_t k = 1; k <= 5; ++k) {
        for (std::size_t L = 1; L <= 10; ++L) {
            for (std::size_t s = 1; s <= 3; ++s) {
                Vector x(static_cast<Eigen::Index>(L)), h(static_cast<Eigen::Index>(k));
                for (auto& v : x) v = n(rng);
                for (auto& v : h) v = n(rng);
                const Vector u = flip(zero_pad(x, k));
                const Vector direct = direct_conv(x, h, s);
                for (std::size_t j = 0; j < static_cast<std::size_t>(direct.size()); ++j) {
                    const auto start = static_cast<Eigen::Index>(L - 1 - j * s);
                    const double window = u.segment(start, static_cast<Eigen::Index>(k)).dot(h);
                    EXPECT_NEAR(window, direct[static_cast<Eigen::Index>(j)], 1e-12);
                }
                EXPECT_LT((convolve(x, h, s) - direct).cwiseAbs().maxCoeff(), 1e-12);
            }
        }
    }
}

TEST(Conv1d, MultiChannelSumsInputs) {
    Conv1dLayer c;
    c.in_channels = 2;
    c.out_channels = 1;
    c.kernel = 1;
    c.filters = {vec({2}), vec({-1})};
    c.bias = {vec({0.5})};
    // channel-major input [2 x 3]
    EXPECT_EQ(conv1d_pre_activation(c, vec({1, 2, 3, 10, 20, 30}), 3), vec({-7.5, -15.5, -23.5}));
}

TEST(MaxPool, PartialWindowAndTies) {
    std::vector<std::size_t> arg;
    const Vector y = max_pool(vec({1, 3, 3, 2, 5}), 1, 5, 2, &arg);
    EXPECT_EQ(y, vec({3, 3, 5}));
    EXPECT_EQ(arg, (std::vector<std::size_t>{1, 2, 4}));
    const Vector t = max_pool(vec({4, 4}), 1, 2, 2, &arg);
    EXPECT_EQ(arg.front(), 0u);
    EXPECT_EQ(t, vec({4}));
}

TEST(Dense, Examples) {
    DenseLayer id{Matrix::Identity(2, 2), Vector::Zero(2), Activation::identity, {}};
    EXPECT_EQ(dense_forward(id, vec({1, 2})), vec({1, 2}));
    DenseLayer clip{Matrix::Ones(1, 2), vec({-3}), Activation::relu, {}};
    EXPECT_EQ(dense_forward(clip, vec({1, 1})), vec({0}));
}

TEST(Dense, MatchesElementwiseReference) {
    std::mt19937_64 rng(9);
    std::normal_distribution<double> n;
    DenseLayer d{Matrix::Zero(4, 3), Vector::Zero(4), Activation::tanh, {}};
    for (Eigen::Index i = 0; i < d.weights.size(); ++i) d.weights.data()[i] = n(rng);
    for (auto& v : d.bias) v = n(rng);
    const Vector x = vec({0.3, -1.2, 2.0});
    const Vector y = dense_forward(d, x);
    for (Eigen::Index r = 0; r < 4; ++r) {
        double acc = d.bias[r];
        for (Eigen::Index c = 0; c < 3; ++c) acc += d.weights(r, c) * x[c];
        EXPECT_NEAR(y[r], std::tanh(acc), 1e-15);
    }
}

TEST(Activation, SoftmaxSumsToOne) {
    const Vector p = activate(Activation::softmax, vec({1000, 1001, 999}));
    EXPECT_NEAR(p.sum(), 1.0, 1e-15);
    EXPECT_TRUE(p.allFinite());
}

TEST(Forward, TraceShape) {
    Network one;
    one.input_shape = {1, 2};
    one.layers = {DenseLayer{Matrix::Identity(2, 2), Vector::Zero(2), Activation::identity, {}}};
    const Trace t1 = forward(one, vec({1, 2}));
    ASSERT_EQ(t1.activations.size(), 2u);
    EXPECT_EQ(t1.activations[0], t1.activations[1]);

    Network two = one;
    two.layers.push_back(DenseLayer{Matrix::Ones(1, 2), Vector::Zero(1), Activation::relu, {}});
    const Trace t2 = forward(two, vec({1, 2}));
    EXPECT_EQ(t2.activations.size(), 3u);
    EXPECT_EQ(t2.activations.back(), predict(two, vec({1, 2})));
}

TEST(Network, ShapeValidation) {
    Network net;
    net.input_shape = {2, 8};
    Conv1dLayer c;
    c.in_channels = 2;
    c.out_channels = 3;
    c.kernel = 3;
    c.filters.assign(6, Vector::Ones(3));
    c.bias.assign(3, Vector::Zero(1));
    net.layers = {c, DenseLayer{Matrix::Ones(1, 24), Vector::Zero(1), Activation::identity, {}}};
    EXPECT_THROW(net.validate(), DataError);  // missing flatten
    net.layers.insert(net.layers.begin() + 1, Flatten{});
    EXPECT_NO_THROW(net.validate());
    EXPECT_THROW(forward(net, Vector::Ones(5)), DataError);

    Network soft;
    soft.input_shape = {1, 2};
    soft.layers = {DenseLayer{Matrix::Ones(2, 2), Vector::Zero(2), Activation::softmax, {}},
                   DenseLayer{Matrix::Ones(2, 2), Vector::Zero(2), Activation::identity, {}}};
    EXPECT_THROW(soft.validate(), DataError);
}

TEST(RandomInit, VarianceAndZeroBias) {
    NetworkSpec spec{{1, 400}, {DenseSpec{250, Activation::relu}}};
    const Network net = random_init(spec, 17);
    const auto& d = std::get<DenseLayer>(net.layers[0]);
    const double mean = d.weights.mean();
    const double var = (d.weights.array() - mean).square().mean();
    EXPECT_GE(var, 0.045);
    EXPECT_LE(var, 0.055);
    EXPECT_EQ(d.bias, Vector::Zero(250));
    EXPECT_EQ(std::get<DenseLayer>(random_init(spec, 17).layers[0]).weights, d.weights);
}

TEST(Serialize, RoundTripIsExact) {
    NetworkSpec spec{{2, 10},
                     {ConvSpec{3, 3, 2, Activation::relu, PoolSpec{PoolKind::max, 2}, false}, FlattenSpec{},
                      DenseSpec{4, Activation::softmax}}};
    Network net = random_init(spec, 5);
    auto& c = std::get<Conv1dLayer>(net.layers[0]);
    for (auto& b : c.bias) b = Vector::Constant(5, 0.1 / 3.0);
    c.provenance = FusionProvenance{0, 1, 0.125, 1e-9};
    const Network back = network_from_json(json::parse(to_json(net).dump()));
    EXPECT_EQ(to_json(back).dump(), to_json(net).dump());
    const Vector x = Vector::LinSpaced(20, -1.0, 1.0);
    EXPECT_EQ(predict(back, x), predict(net, x));
    ASSERT_TRUE(std::get<Conv1dLayer>(back.layers[0]).provenance.has_value());
}

TEST(Serialize, MalformedModelIsDataError) {
    EXPECT_THROW(network_from_json(json::parse(R"({"layers": [{"kind": "dense"}]})")), DataError);
}
