#include <gtest/gtest.h>

#include <cmath>

#include "fd_oracle.hpp"
#include "tc3d/network.hpp"
#include "tc3d/optim.hpp"

using namespace tc3d;
using tc3d::testing::numeric_gradient;
using tc3d::testing::random_tensor;
using tc3d::testing::relative_error;

namespace {

Layer identity_conv()
{
    Layer l = Layer::conv3d(1, 1, {1, 1, 1});
    l.weight()[0] = 1.0;
    return l;
}

Layer random_conv(std::size_t out, std::size_t in, Extent3 k, Extent3 s, Extent3 p, std::mt19937_64& rng)
{
    Layer l = Layer::conv3d(out, in, k, s, p);
    l.weight() = random_tensor(l.weight().shape(), rng);
    l.bias() = random_tensor(l.bias().shape(), rng);
    return l;
}

} // namespace

TEST(Tensor, ConstructorRejectsLengthMismatch)
{
    EXPECT_THROW(Tensor({2, 2}, std::vector<double>{1, 2, 3}), ShapeError);
    Tensor t({2, 3, 4});
    EXPECT_EQ(t.size(), 24u);
}

TEST(Conv3d, IdentityKernelIsIdentity)
{
    std::mt19937_64 rng(1);
    const Layer l = identity_conv();
    for (int trial = 0; trial < 5; ++trial) {
        const Tensor x = random_tensor({1, 3, 4, 5}, rng);
        EXPECT_EQ(conv3d_forward(x, l), x);
    }
}

TEST(Conv3d, AllOnesCubeSumsToEight)
{
    Layer l = Layer::conv3d(1, 1, {2, 2, 2});
    l.weight().fill(1.0);
    const Tensor y = conv3d_forward(Tensor({1, 2, 2, 2}, 1.0), l);
    ASSERT_EQ(y.shape(), (Shape{1, 1, 1, 1}));
    EXPECT_DOUBLE_EQ(y[0], 8.0);
}

TEST(Conv3d, PaddedKernelPreservesTrainingInputExtent)
{
    const Layer l = Layer::conv3d(2, 3, {3, 3, 3}, {1, 1, 1}, {1, 1, 1});
    EXPECT_EQ(conv3d_output_shape({3, 8, 112, 112}, l), (Shape{2, 8, 112, 112}));
}

TEST(Conv3d, OutputExtentFormula)
{
    const Layer l = Layer::conv3d(4, 2, {3, 2, 3}, {2, 1, 3}, {1, 0, 2});
    // D' = floor((D + 2p - k)/s) + 1
    EXPECT_EQ(conv3d_output_shape({2, 7, 5, 11}, l), (Shape{4, (7 + 2 - 3) / 2 + 1, (5 - 2) / 1 + 1, (11 + 4 - 3) / 3 + 1}));
}

TEST(Conv3d, ChannelMismatchNamesBothShapes)
{
    const Layer l = Layer::conv3d(2, 3, {1, 1, 1});
    try {
        conv3d_forward(Tensor({2, 2, 2, 2}), l);
        FAIL() << "expected ShapeError";
    } catch (const ShapeError& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("[2,2,2,2]"), std::string::npos);
        EXPECT_NE(msg.find("[2,3,1,1,1]"), std::string::npos);
    }
}

TEST(Conv3d, BackwardIdentityPassesGradientThrough)
{
    std::mt19937_64 rng(2);
    const Tensor x = random_tensor({1, 2, 3, 3}, rng);
    const Tensor g = random_tensor({1, 2, 3, 3}, rng);
    EXPECT_EQ(conv3d_backward(g, x, identity_conv()).grad_in, g);
}

TEST(Conv3d, BackwardOfZeroGradientIsZero)
{
    std::mt19937_64 rng(3);
    const Layer l = random_conv(2, 2, {3, 3, 3}, {1, 2, 1}, {1, 1, 0}, rng);
    const Tensor x = random_tensor({2, 4, 5, 6}, rng);
    const LayerGrads g = conv3d_backward(Tensor(conv3d_output_shape(x.shape(), l)), x, l);
    for (double v : g.grad_in.values()) EXPECT_EQ(v, 0.0);
    for (const auto& [name, t] : g.grad_params)
        for (double v : t.values()) EXPECT_EQ(v, 0.0);
}

TEST(Conv3d, BackwardRejectsWrongGradShape)
{
    const Layer l = Layer::conv3d(1, 1, {1, 1, 1});
    EXPECT_THROW(conv3d_backward(Tensor({1, 2, 2, 3}), Tensor({1, 2, 2, 2}), l), ShapeError);
}

struct ConvCase {
    Extent3 k, s, p;
};

class Conv3dGradient : public ::testing::TestWithParam<ConvCase> {};

TEST_P(Conv3dGradient, MatchesFiniteDifferences)
{
    const ConvCase c = GetParam();
    std::mt19937_64 rng(17);
    Layer l = random_conv(3, 2, c.k, c.s, c.p, rng);
    Tensor x = random_tensor({2, 4, 5, 5}, rng);
    const Tensor r = random_tensor(conv3d_output_shape(x.shape(), l), rng);
    auto loss = [&] { return dot(conv3d_forward(x, l), r); };

    const LayerGrads g = conv3d_backward(r, x, l);
    EXPECT_LT(relative_error(g.grad_in, numeric_gradient(x, loss)), 1e-6);
    EXPECT_LT(relative_error(g.grad_params.at("weight"), numeric_gradient(l.weight(), loss)), 1e-6);
    EXPECT_LT(relative_error(g.grad_params.at("bias"), numeric_gradient(l.bias(), loss)), 1e-6);
}

INSTANTIATE_TEST_SUITE_P(Geometries, Conv3dGradient,
                         ::testing::Values(ConvCase{{3, 3, 3}, {1, 1, 1}, {1, 1, 1}},
                                           ConvCase{{3, 3, 3}, {2, 2, 2}, {1, 1, 1}},
                                           ConvCase{{2, 3, 1}, {1, 2, 3}, {0, 1, 0}},
                                           ConvCase{{1, 1, 1}, {1, 1, 1}, {0, 0, 0}}));

TEST(FullyConnected, IdentityAndHandProduct)
{
    Layer l = Layer::fully_connected(2, 2);
    l.weight() = Tensor({2, 2}, {1, 0, 0, 1});
    const Tensor x = Tensor::vector({0.25, -3.0});
    EXPECT_EQ(fc_forward(x, l), x);

    l.weight() = Tensor({2, 2}, {1, 2, 3, 4});
    EXPECT_EQ(fc_forward(Tensor::vector({1, 1}), l), Tensor::vector({3, 7}));
}

TEST(FullyConnected, InnerDimensionMismatch)
{
    const Layer l = Layer::fully_connected(2, 3);
    EXPECT_THROW(fc_forward(Tensor({4}), l), ShapeError);
}

TEST(FullyConnected, BackwardMatchesFiniteDifferences)
{
    std::mt19937_64 rng(5);
    Layer l = Layer::fully_connected(4, 6);
    l.weight() = random_tensor(l.weight().shape(), rng);
    l.bias() = random_tensor(l.bias().shape(), rng);
    Tensor x = random_tensor({6}, rng);
    const Tensor r = random_tensor({4}, rng);
    auto loss = [&] { return dot(fc_forward(x, l), r); };
    const LayerGrads g = fc_backward(r, x, l);
    EXPECT_LT(relative_error(g.grad_in, numeric_gradient(x, loss)), 1e-6);
    EXPECT_LT(relative_error(g.grad_params.at("weight"), numeric_gradient(l.weight(), loss)), 1e-6);
    EXPECT_LT(relative_error(g.grad_params.at("bias"), numeric_gradient(l.bias(), loss)), 1e-6);
}

TEST(Relu, ForwardAndFiniteDifferences)
{
    EXPECT_EQ(relu_forward(Tensor::vector({-1, 0, 2})), Tensor::vector({0, 0, 2}));
    std::mt19937_64 rng(6);
    Tensor x = random_tensor({2, 3, 4, 4}, rng);
    const Tensor r = random_tensor(x.shape(), rng);
    auto loss = [&] { return dot(relu_forward(x), r); };
    EXPECT_LT(relative_error(relu_backward(r, x), numeric_gradient(x, loss)), 1e-5);
}

TEST(GlobalAvgPool, ConstantInputAndFiniteDifferences)
{
    EXPECT_EQ(global_avg_pool_forward(Tensor({1, 2, 2, 2}, 3.0)), Tensor::vector({3}));
    std::mt19937_64 rng(7);
    Tensor x = random_tensor({3, 2, 3, 4}, rng);
    const Tensor r = random_tensor({3}, rng);
    auto loss = [&] { return dot(global_avg_pool_forward(x), r); };
    EXPECT_LT(relative_error(global_avg_pool_backward(r, x.shape()), numeric_gradient(x, loss)), 1e-5);
}

TEST(Dropout, EvalModeIsIdentity)
{
    std::mt19937_64 rng(8);
    Network net({4}, 4);
    net.add(Layer::dropout(0.8));
    const Tensor x = random_tensor({4}, rng);
    EXPECT_EQ(net.forward(x, Mode::Eval), x);
    EXPECT_THROW(Layer::dropout(1.0), std::invalid_argument);
    EXPECT_THROW(Layer::dropout(-0.1), std::invalid_argument);
}

TEST(Dropout, TrainModeScalesSurvivorsAndMatchesFixedMaskGradient)
{
    Rng rng(9);
    const double ratio = 0.8;
    const Tensor mask = dropout_mask({20000}, ratio, rng);
    std::size_t kept = 0;
    for (double m : mask.values()) {
        EXPECT_TRUE(m == 0.0 || m == 1.0 / (1.0 - ratio));
        kept += m != 0.0;
    }
    EXPECT_NEAR(static_cast<double>(kept) / 20000.0, 0.2, 0.02);

    std::mt19937_64 g(10);
    Tensor x = random_tensor({30}, g);
    const Tensor small_mask = dropout_mask({30}, 0.5, rng);
    const Tensor r = random_tensor({30}, g);
    auto loss = [&] { return dot(dropout_forward(x, small_mask), r); };
    EXPECT_LT(relative_error(dropout_backward(r, small_mask), numeric_gradient(x, loss)), 1e-5);
}

TEST(SoftmaxCrossEntropy, KnownValues)
{
    EXPECT_NEAR(softmax_cross_entropy(Tensor({4}), 0).loss, 1.3862943611, 1e-10);
    EXPECT_NEAR(softmax_cross_entropy(Tensor({4}), 0).loss, std::log(4.0), 1e-15);
    // -(10 - log(e^10 + 2)) = log(1 + 2 e^-10)
    const double expected = std::log1p(2.0 * std::exp(-10.0));
    EXPECT_NEAR(softmax_cross_entropy(Tensor::vector({10, 0, 0}), 0).loss, expected, 1e-15);
    EXPECT_NEAR(expected, 9.1e-5, 1e-6);
}

TEST(SoftmaxCrossEntropy, LabelOutOfRange)
{
    EXPECT_THROW(softmax_cross_entropy(Tensor({3}), 3), std::out_of_range);
}

TEST(SoftmaxCrossEntropy, GradientMatchesFiniteDifferences)
{
    std::mt19937_64 rng(11);
    for (std::size_t label = 0; label < 5; ++label) {
        Tensor s = random_tensor({5}, rng, -3, 3);
        auto loss = [&] { return softmax_cross_entropy(s, label).loss; };
        EXPECT_LT(relative_error(softmax_cross_entropy(s, label).grad_scores, numeric_gradient(s, loss)), 1e-6);
    }
}

TEST(Softmax, SumsToOneForExtremeScores)
{
    std::mt19937_64 rng(12);
    for (int trial = 0; trial < 200; ++trial) {
        const Tensor p = softmax(random_tensor({7}, rng, -700, 700));
        double s = 0.0;
        for (double v : p.values()) s += v;
        EXPECT_NEAR(s, 1.0, 1e-12);
        EXPECT_TRUE(p.all_finite());
    }
}

TEST(Sgd, UpdateRule)
{
    Tensor p({1}, 5.0);
    std::vector<Tensor*> params{&p};
    OptimState plain(params, 1.0, 0.0);
    sgd_momentum_step(params, {Tensor({1}, 0.75)}, plain);
    EXPECT_DOUBLE_EQ(p[0], 4.25);

    Tensor q({1}, 0.0);
    std::vector<Tensor*> qp{&q};
    OptimState mom(qp, 0.1, 0.9);
    sgd_momentum_step(qp, {Tensor({1}, 1.0)}, mom);
    sgd_momentum_step(qp, {Tensor({1}, 1.0)}, mom);
    EXPECT_NEAR(q[0], -0.29, 1e-15);

    Tensor z({3}, 2.0);
    std::vector<Tensor*> zp{&z};
    OptimState idle(zp, 0.5, 0.9);
    sgd_momentum_step(zp, {Tensor({3})}, idle);
    EXPECT_EQ(z, Tensor({3}, 2.0));
}

TEST(Sgd, ClipsTheGlobalGradientNorm)
{
    // gradient (3, 4) across two tensors has norm 5; clipped to norm 1 it becomes (0.6, 0.8)
    Tensor a({1}), b({1});
    std::vector<Tensor*> params{&a, &b};
    OptimState s(params, 1.0, 0.0);
    s.max_grad_norm = 1.0;
    sgd_momentum_step(params, {Tensor({1}, 3.0), Tensor({1}, 4.0)}, s);
    EXPECT_NEAR(a[0], -0.6, 1e-15);
    EXPECT_NEAR(b[0], -0.8, 1e-15);

    // below the bound nothing changes
    sgd_momentum_step(params, {Tensor({1}, 0.3), Tensor({1}, 0.4)}, s);
    EXPECT_NEAR(a[0], -0.9, 1e-15);
    EXPECT_NEAR(b[0], -1.2, 1e-15);
}

TEST(Sgd, VelocityMirrorsParameters)
{
    Tensor a({2, 3}), b({4});
    OptimState s({&a, &b}, 0.1, 0.9);
    ASSERT_EQ(s.velocity.size(), 2u);
    EXPECT_EQ(s.velocity[0].shape(), a.shape());
    EXPECT_EQ(s.velocity[1].shape(), b.shape());
    EXPECT_THROW(OptimState({&a}, 0.1, 1.0), std::invalid_argument);
}

TEST(Flops, ClosedForms)
{
    Network fc({100}, 10);
    fc.add(Layer::fully_connected(10, 100));
    EXPECT_EQ(count_flops(fc, {100}), 2000u);

    Network conv({1, 2, 2, 2}, 1);
    conv.add(Layer::conv3d(1, 1, {2, 2, 2}));
    EXPECT_EQ(count_flops(conv, {1, 2, 2, 2}), 16u);

    EXPECT_EQ(count_flops(Network({3}, 3), {3}), 0u);
}

TEST(Flops, AdditiveOverConcatenation)
{
    Network a({2, 4, 6, 6}, 1), b({4, 4, 6, 6}, 1), ab({2, 4, 6, 6}, 1);
    const Layer c1 = Layer::conv3d(4, 2, {3, 3, 3}, {1, 1, 1}, {1, 1, 1});
    const Layer c2 = Layer::conv3d(4, 4, {3, 3, 3}, {2, 2, 2}, {1, 1, 1});
    a.add(c1).add(Layer::relu());
    b.add(c2).add(Layer::global_avg_pool()).add(Layer::fully_connected(5, 4));
    ab.add(c1).add(Layer::relu()).add(c2).add(Layer::global_avg_pool()).add(Layer::fully_connected(5, 4));
    EXPECT_EQ(count_flops(ab, {2, 4, 6, 6}), count_flops(a, {2, 4, 6, 6}) + count_flops(b, {4, 4, 6, 6}));
}

TEST(Network, ReferenceShapesAndFlops)
{
    ReferenceNetOptions o;
    o.height = o.width = 16;
    o.class_count = 4;
    const Network net = make_reference_network(o, 1);
    const auto shapes = net.activation_shapes(net.input_shape());
    EXPECT_EQ(shapes.back(), (Shape{4}));
    // per conv: 2 * out_elems * in_ch * 27
    const std::uint64_t expected = 2ull * (8 * 8 * 16 * 16) * 1 * 27 + 2ull * (16 * 4 * 8 * 8) * 8 * 27 +
                                   2ull * (32 * 4 * 8 * 8) * 16 * 27 + 2ull * (32 * 2 * 4 * 4) * 32 * 27 + 2ull * 4 * 32;
    EXPECT_EQ(count_flops(net, net.input_shape()), expected);
}

TEST(Network, MismatchedCompositionRejected)
{
    Network net({1, 4, 4, 4}, 3);
    net.add(Layer::conv3d(2, 1, {1, 1, 1})).add(Layer::global_avg_pool()).add(Layer::fully_connected(3, 5));
    EXPECT_THROW(net.validate(), ShapeError);
}

TEST(Network, SeededInitialisationIsBitIdentical)
{
    ReferenceNetOptions o;
    o.height = o.width = 8;
    o.class_count = 3;
    EXPECT_EQ(make_reference_network(o, 42), make_reference_network(o, 42));
    EXPECT_NE(make_reference_network(o, 42), make_reference_network(o, 43));

    const Network net = make_reference_network(o, 42);
    std::mt19937_64 g(1);
    const Tensor x = random_tensor(net.input_shape(), g);
    Rng r1(5), r2(5);
    EXPECT_EQ(net.forward(x, Mode::Train, &r1), net.forward(x, Mode::Train, &r2));
}

// End-to-end parameter gradients through a small conv net with a residual block.
TEST(Network, BackwardMatchesFiniteDifferences)
{
    std::mt19937_64 rng(13);
    Network net({1, 4, 5, 5}, 3);
    net.add(Layer::conv3d(2, 1, {3, 3, 3}, {1, 1, 1}, {1, 1, 1})).add(Layer::relu());
    net.add(Layer::conv3d(2, 2, {3, 3, 3}, {1, 1, 1}, {1, 1, 1})).add(Layer::relu()).add(Layer::residual_add(2));
    net.add(Layer::conv3d(2, 2, {3, 3, 3}, {2, 2, 2}, {1, 1, 1})).add(Layer::global_avg_pool());
    net.add(Layer::dropout(0.5)).add(Layer::fully_connected(3, 2));
    net.validate();
    for (Tensor* p : net.parameters()) *p = random_tensor(p->shape(), rng, -0.8, 0.8);
    Tensor x = random_tensor(net.input_shape(), rng);

    ForwardCache cache;
    const Tensor y = net.forward(x, Mode::Eval, nullptr, &cache);
    const LossResult lr = softmax_cross_entropy(y, 1);
    Tensor grad_x;
    const std::vector<Tensor> grads = net.backward(cache, lr.grad_scores, &grad_x);
    auto loss = [&] { return softmax_cross_entropy(net.forward(x), 1).loss; };

    const auto params = net.parameters();
    ASSERT_EQ(grads.size(), params.size());
    for (std::size_t i = 0; i < params.size(); ++i)
        EXPECT_LT(relative_error(grads[i], numeric_gradient(*params[i], loss)), 1e-5) << "param " << i;
    EXPECT_LT(relative_error(grad_x, numeric_gradient(x, loss)), 1e-5);
}
