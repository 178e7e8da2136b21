#include "gradcheck_cases.hpp"
#include "support.hpp"

#include <weakloc/adam.hpp>
#include <weakloc/nn.hpp>

#include <gtest/gtest.h>

#include <cmath>
#include <fstream>

using namespace weakloc;
using weakloc::testing::random_tensor;

TEST(GradCheck, EveryLayerMatchesCentralDifferences)
{
    Rng rng(17);
    for (const auto &c : weakloc::testing::gradcheck_cases()) {
        for (int i = 0; i < 3; ++i) {
            EXPECT_LT(c.run(rng), 1e-4) << c.name << " instance " << i;
        }
    }
}

TEST(Conv2d, IdentityKernelCopiesInput)
{
    Rng rng(1);
    auto x = random_tensor({1, 4, 5}, rng);
    auto k = Tensor::zeros({1, 1, 3, 3});
    k[4] = 1.0;
    auto b = Tensor::zeros({1});
    Tape tape(false);
    auto y = ops::conv2d(tape, x, k, b);
    ASSERT_EQ(y.shape(), x.shape());
    for (std::size_t i = 0; i < x.numel(); ++i) {
        EXPECT_EQ(y[i], x[i]);
    }
}

TEST(Conv2d, ZeroPaddingAtBorder)
{
    // All-ones 3x3 kernel on an all-ones 3x3 image counts in-bounds neighbours.
    auto x = Tensor::full({1, 3, 3}, 1.0);
    auto k = Tensor::full({1, 1, 3, 3}, 1.0);
    auto b = Tensor::full({1}, 0.5);
    Tape tape(false);
    auto y = ops::conv2d(tape, x, k, b);
    const std::vector<double> expected{4.5, 6.5, 4.5, 6.5, 9.5, 6.5, 4.5, 6.5, 4.5};
    for (std::size_t i = 0; i < 9; ++i) {
        EXPECT_DOUBLE_EQ(y[i], expected[i]);
    }
}

TEST(Conv2d, RejectsChannelMismatch)
{
    Tape tape(false);
    EXPECT_THROW(ops::conv2d(tape, Tensor::zeros({2, 4, 4}), Tensor::zeros({1, 3, 3, 3}), Tensor::zeros({1})),
                 ShapeError);
}

TEST(MaxPool, PartialWindowAndFirstMaxTie)
{
    auto x = Tensor::from({1, 3, 3}, {1, 1, 0, 1, 1, 0, 5, 2, 7}, true);
    Tape tape;
    auto y = ops::maxpool2d(tape, x);
    ASSERT_EQ(y.shape(), (Shape{1, 2, 2}));
    EXPECT_EQ(y[0], 1);
    EXPECT_EQ(y[1], 0);
    EXPECT_EQ(y[2], 5);
    EXPECT_EQ(y[3], 7);
    auto loss = ops::sum(tape, y);
    tape.backward(loss);
    // The tie in the first window routes to the first element in row-major order.
    EXPECT_EQ(x.grad()[0], 1.0);
    EXPECT_EQ(x.grad()[1], 0.0);
    EXPECT_EQ(x.grad()[3], 0.0);
    EXPECT_EQ(x.grad()[4], 0.0);
}

TEST(BceLoss, WorkedExamples)
{
    Tape tape(false);
    EXPECT_NEAR(ops::bce_loss(tape, std::vector<double>{1}, Tensor::from({1}, {0.5})).item(), std::log(2.0), 1e-12);
    const double two = ops::bce_loss(tape, std::vector<double>{1, 0}, Tensor::from({2}, {0.8, 0.4})).item();
    EXPECT_NEAR(two, -(std::log(0.8) + std::log(0.6)) / 2, 1e-12);
    EXPECT_NEAR(two, 0.366937, 1e-4);
    EXPECT_NEAR(ops::bce_loss(tape, std::vector<double>{1}, Tensor::from({1}, {1.0 - 1e-12})).item(), 0.0, 1e-6);
    EXPECT_THROW(ops::bce_loss(tape, std::vector<double>{}, Tensor::zeros({0})), Error);
}

TEST(BceLoss, NonNegative)
{
    Rng rng(3);
    Tape tape(false);
    for (int i = 0; i < 200; ++i) {
        auto p = random_tensor({4}, rng, 0.0, 1.0);
        std::vector<double> y{0, 1, rng.bernoulli(0.5) ? 1.0 : 0.0, 1};
        EXPECT_GE(ops::bce_loss(tape, y, p).item(), 0.0);
    }
}

TEST(Tape, SecondBackwardIsRejected)
{
    auto x = Tensor::full({2}, 3.0, true);
    Tape tape;
    auto loss = ops::sum(tape, ops::mul(tape, x, x));
    tape.backward(loss);
    EXPECT_DOUBLE_EQ(x.grad()[0], 6.0);
    EXPECT_THROW(tape.backward(loss), Error);
    EXPECT_DOUBLE_EQ(x.grad()[0], 6.0);
}

TEST(Tape, NonScalarLossIsRejected)
{
    auto x = Tensor::full({2}, 1.0, true);
    Tape tape;
    auto y = ops::scale(tape, x, 2.0);
    EXPECT_THROW(tape.backward(y), Error);
}

TEST(Tape, GradientsAccumulateAcrossUses)
{
    auto x = Tensor::full({1}, 2.0, true);
    Tape tape;
    auto y = ops::add(tape, ops::mul(tape, x, x), ops::scale(tape, x, 3.0));
    auto loss = ops::sum(tape, y);
    tape.backward(loss);
    EXPECT_DOUBLE_EQ(x.grad()[0], 2 * 2.0 + 3.0);
}

TEST(Adam, FirstStepMovesBySignTimesLearningRate)
{
    auto w = Tensor::from({3}, {1.0, -2.0, 0.5}, true);
    ParameterList params{{"w", w}};
    AdamConfig config;
    config.learning_rate = 0.01;
    Adam adam(params, config);
    w.grad()[0] = 4.0;
    w.grad()[1] = -0.25;
    w.grad()[2] = 0.0;
    adam.step();
    // m_hat = g, v_hat = g^2 after bias correction, so the step is lr * g / (|g| + eps).
    EXPECT_NEAR(w[0], 1.0 - 0.01 * 4.0 / (4.0 + 1e-8), 1e-15);
    EXPECT_NEAR(w[1], -2.0 + 0.01 * 0.25 / (0.25 + 1e-8), 1e-15);
    EXPECT_DOUBLE_EQ(w[2], 0.5);
    EXPECT_EQ(adam.steps(), 1u);
}

TEST(Adam, SecondStepMatchesHandRecursion)
{
    auto w = Tensor::from({1}, {0.0}, true);
    Adam adam({{"w", w}}, AdamConfig{});
    const double g1 = 0.3, g2 = -0.7, lr = 0.0003, b1 = 0.9, b2 = 0.999, eps = 1e-8;
    w.grad()[0] = g1;
    adam.step();
    adam.zero_grad();
    w.grad()[0] = g2;
    adam.step();
    double m = (1 - b1) * g1, v = (1 - b2) * g1 * g1, x = 0.0;
    x -= lr * (m / (1 - b1)) / (std::sqrt(v / (1 - b2)) + eps);
    m = b1 * m + (1 - b1) * g2;
    v = b2 * v + (1 - b2) * g2 * g2;
    x -= lr * (m / (1 - b1 * b1)) / (std::sqrt(v / (1 - b2 * b2)) + eps);
    EXPECT_NEAR(w[0], x, 1e-15);
}

TEST(Adam, NonFiniteGradientNamesParameterAndLeavesWeights)
{
    auto a = Tensor::from({1}, {1.0}, true);
    auto b = Tensor::from({1}, {2.0}, true);
    Adam adam({{"layer.a", a}, {"layer.b", b}}, AdamConfig{});
    a.grad()[0] = 1.0;
    b.grad()[0] = std::nan("");
    try {
        adam.step();
        FAIL() << "expected an error";
    } catch (const Error &e) {
        EXPECT_NE(std::string(e.what()).find("layer.b"), std::string::npos);
    }
    EXPECT_EQ(a[0], 1.0);
    EXPECT_EQ(b[0], 2.0);
}

TEST(Adam, GradientClippingBoundsJointNorm)
{
    auto a = Tensor::from({2}, {0.0, 0.0}, true);
    AdamConfig config;
    config.learning_rate = 1.0;
    config.max_grad_norm = 0.5;
    Adam adam({{"a", a}}, config);
    a.grad()[0] = 30.0;
    a.grad()[1] = 40.0;
    adam.step();
    // First-moment input is the clipped gradient (0.3, 0.4).
    EXPECT_NEAR(adam.first_moment(0)[0], 0.1 * 0.3, 1e-15);
    EXPECT_NEAR(adam.first_moment(0)[1], 0.1 * 0.4, 1e-15);
}

TEST(Init, GlorotWithinBound)
{
    Rng rng(5);
    auto w = glorot_uniform({16, 8, 3, 3}, 72, 144, rng);
    const double bound = std::sqrt(6.0 / (72 + 144));
    double sum = 0.0;
    for (double v : w.data()) {
        EXPECT_LE(std::abs(v), bound);
        sum += v;
    }
    EXPECT_NEAR(sum / static_cast<double>(w.numel()), 0.0, 0.05 * bound);
}

TEST(Checkpoint, RoundTripIsExact)
{
    weakloc::testing::TempDir dir("ckpt");
    Rng rng(9);
    Dense d(5, 3, rng);
    ParameterList params;
    d.collect("dense", params);
    save_checkpoint(dir.path() / "a.ckpt", params);

    Rng other(10);
    Dense e(5, 3, other);
    ParameterList loaded;
    e.collect("dense", loaded);
    load_checkpoint(dir.path() / "a.ckpt", loaded);
    for (std::size_t i = 0; i < params.size(); ++i) {
        for (std::size_t j = 0; j < params[i].value.numel(); ++j) {
            EXPECT_EQ(std::bit_cast<std::uint64_t>(params[i].value[j]), std::bit_cast<std::uint64_t>(loaded[i].value[j]));
        }
    }
}

TEST(Checkpoint, RejectsBadMagicAndShapeMismatch)
{
    weakloc::testing::TempDir dir("ckpt-bad");
    std::ofstream(dir.path() / "junk.ckpt", std::ios::binary) << "NOTACKPT";
    EXPECT_THROW(read_checkpoint(dir.path() / "junk.ckpt"), Error);

    Rng rng(2);
    Dense small(2, 2, rng);
    ParameterList p;
    small.collect("dense", p);
    save_checkpoint(dir.path() / "small.ckpt", p);
    Dense big(3, 2, rng);
    ParameterList q;
    big.collect("dense", q);
    EXPECT_THROW(load_checkpoint(dir.path() / "small.ckpt", q), Error);
    EXPECT_THROW(read_checkpoint(dir.path() / "missing.ckpt"), Error);
}

TEST(Tensor, FromRejectsSizeMismatch)
{
    EXPECT_THROW(Tensor::from({2, 2}, {1.0, 2.0, 3.0}), ShapeError);
    EXPECT_THROW((void)Tensor::zeros({2, 3}).dim(2), ShapeError);
}
