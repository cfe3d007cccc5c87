#include <gtest/gtest.h>

#include <cmath>

#include "ipens/autodiff.hpp"
#include "ipens/ops.hpp"
#include "support/finite_diff.hpp"

using namespace ipens;
using ipens::ops::Padding;
using ipens::testing::max_relative_gradient_error;
using ipens::testing::project;
using ipens::testing::random_tensor;

constexpr double kGradTol = 1e-4;

TEST(SeparableConv, AllOnesValidGivesHandValue) {
    const Tensor64 input({5, 5, 1}, 1.0);
    const Tensor64 dw({5, 5, 1}, 1.0);
    const Tensor64 pw({1, 1}, {2.0});
    const Tensor64 bias({1}, {1.0});
    const auto out = ops::separable_conv2d(input, dw, pw, bias, 1, Padding::Valid);
    ASSERT_EQ(out.shape(), (Shape{1, 1, 1}));
    EXPECT_DOUBLE_EQ(out[0], 51.0);
}

TEST(SeparableConv, ImpulseAndIdentityReproduceInput) {
    Rng rng(3);
    const auto input = random_tensor({7, 6, 3}, rng);
    Tensor64 dw({3, 3, 3});
    for (std::size_t c = 0; c < 3; ++c) dw[(1 * 3 + 1) * 3 + c] = 1.0;
    Tensor64 pw({3, 3});
    for (std::size_t c = 0; c < 3; ++c) pw[c * 3 + c] = 1.0;
    const auto out = ops::separable_conv2d(input, dw, pw, Tensor64({3}), 1, Padding::Same);
    EXPECT_EQ(out, input);
}

TEST(SeparableConv, StridedSameShape) {
    const Tensor64 input({8, 8, 3}, 0.5);
    const auto out =
        ops::separable_conv2d(input, Tensor64({5, 5, 3}), Tensor64({3, 7}), Tensor64({7}), 2, Padding::Same);
    EXPECT_EQ(out.shape(), (Shape{4, 4, 7}));
}

TEST(SeparableConv, SamePaddingPutsExtraOnBottomRight) {
    const auto g = ops::conv_geometry(8, 8, 5, 2, Padding::Same);
    EXPECT_EQ(g.out_h, 4u);
    // (4-1)*2+5-8 = 3 total; 1 top, 2 bottom.
    EXPECT_EQ(g.pad_top, 1u);
    EXPECT_EQ(g.pad_left, 1u);
}

TEST(SeparableConv, ChannelMismatchNamesAxis) {
    const Tensor64 input({4, 4, 2});
    try {
        ops::separable_conv2d(input, Tensor64({3, 3, 3}), Tensor64({3, 1}), Tensor64({1}), 1, Padding::Same);
        FAIL() << "expected DimensionError";
    } catch (const DimensionError& e) {
        EXPECT_EQ(e.axis(), "channels");
    }
    EXPECT_THROW(ops::separable_conv2d(input, Tensor64({3, 3, 2}), Tensor64({2, 4}), Tensor64({3}), 1, Padding::Same),
                 DimensionError);
    EXPECT_THROW(ops::separable_conv2d(input, Tensor64({5, 5, 2}), Tensor64({2, 1}), Tensor64({1}), 1, Padding::Valid),
                 DimensionError);
}

TEST(GlobalAveragePool, Examples) {
    EXPECT_EQ(ops::global_average_pool(Tensor64({3, 3, 2}, 4.25)), Tensor64({2}, 4.25));
    EXPECT_EQ(ops::global_average_pool(Tensor64({2, 2, 1}, {1, 2, 3, 4})), Tensor64({1}, {2.5}));
    const Tensor64 single({1, 1, 3}, {1.5, -2.0, 7.0});
    EXPECT_EQ(ops::global_average_pool(single), Tensor64({3}, {1.5, -2.0, 7.0}));
}

TEST(Activations, Relu) {
    const auto out = ops::relu(Tensor64({2}, {-1.0, 3.0}));
    EXPECT_EQ(out, Tensor64({2}, {0.0, 3.0}));
}

TEST(Activations, Softmax) {
    const auto u = ops::softmax(Tensor64({3}, {0, 0, 0}));
    for (double v : u.data()) EXPECT_NEAR(v, 1.0 / 3.0, 1e-15);
    const auto p = ops::softmax(Tensor64({3}, {std::log(1.0), std::log(2.0), std::log(3.0)}));
    EXPECT_NEAR(p[0], 1.0 / 6, 1e-12);
    EXPECT_NEAR(p[1], 2.0 / 6, 1e-12);
    EXPECT_NEAR(p[2], 3.0 / 6, 1e-12);
}

TEST(Activations, SoftmaxRowsSumToOneAndReluNonnegative) {
    Rng rng(11);
    for (int trial = 0; trial < 50; ++trial) {
        const auto x = random_tensor({5, 4}, rng, -30.0, 30.0);
        const auto p = ops::softmax(x);
        for (std::size_t r = 0; r < 5; ++r) {
            double s = 0;
            for (std::size_t j = 0; j < 4; ++j) {
                EXPECT_GT(p[r * 4 + j], 0.0);
                s += p[r * 4 + j];
            }
            EXPECT_NEAR(s, 1.0, 1e-12);
        }
        const auto r = ops::relu(x);
        for (double v : r.data()) EXPECT_GE(v, 0.0);
    }
}

TEST(Dropout, RateZeroIsIdentity) {
    Rng rng(5);
    const auto x = random_tensor({10, 10}, rng);
    EXPECT_TRUE(bitwise_equal(ops::dropout(x, 0.0, true, 1), x));
    EXPECT_TRUE(bitwise_equal(ops::dropout(x, 0.0, false, 1), x));
}

TEST(Dropout, InferenceIsBitwiseIdentity) {
    Rng rng(6);
    const auto x = random_tensor({10, 10}, rng);
    EXPECT_TRUE(bitwise_equal(ops::dropout(x, 0.5, false, 99), x));
    ad::Tape<double> tape;
    const auto v = tape.leaf(x);
    EXPECT_TRUE(bitwise_equal(tape.value(ad::dropout(tape, v, 0.5, false, 99)), x));
}

TEST(Dropout, TrainingZeroFractionAndScaling) {
    const Tensor64 x({100000}, 1.0);
    const auto out = ops::dropout(x, 0.5, true, 2024);
    std::size_t zeros = 0;
    for (double v : out.data()) {
        if (v == 0.0)
            ++zeros;
        else
            EXPECT_DOUBLE_EQ(v, 2.0);
    }
    EXPECT_NEAR(static_cast<double>(zeros) / 1e5, 0.5, 0.01);
    EXPECT_TRUE(bitwise_equal(out, ops::dropout(x, 0.5, true, 2024)));
}

TEST(Dropout, RejectsRateOne) {
    EXPECT_THROW(ops::dropout(Tensor64({3}), 1.0, true, 0), UsageError);
}

TEST(Backward, LinearMapGradientIsInput) {
    ad::Tape<double> tape;
    const Tensor64 x({4}, {1.0, -2.0, 3.5, 0.25});
    const auto w = tape.leaf(Tensor64({4}, {0.3, 0.1, -0.7, 2.0}));
    const auto loss = ad::sum(tape, ad::mul(tape, w, tape.leaf(x, false)));
    tape.backward(loss);
    EXPECT_EQ(tape.grad(w), x);
}

TEST(Backward, ReluSquaredByHand) {
    for (const auto& [w0, expected] : {std::pair{2.0, 4.0}, std::pair{-2.0, 0.0}}) {
        ad::Tape<double> tape;
        const auto w = tape.leaf(Tensor64::scalar(w0));
        tape.backward(ad::square(tape, ad::relu(tape, w)));
        EXPECT_DOUBLE_EQ(tape.grad(w)[0], expected);
    }
}

TEST(Backward, RejectsForeignAndNonScalar) {
    ad::Tape<double> a;
    ad::Tape<double> b;
    const auto va = a.leaf(Tensor64::scalar(1.0));
    EXPECT_THROW(b.backward(va), AutodiffError);
    EXPECT_THROW(a.backward(ad::Var{a.id(), 42}), AutodiffError);
    const auto vec = a.leaf(Tensor64({2}));
    EXPECT_THROW(a.backward(vec), AutodiffError);
    EXPECT_THROW(a.grad(va), AutodiffError);
}

TEST(Backward, AccumulatorsAreResetBetweenPasses) {
    ad::Tape<double> tape;
    const auto w = tape.leaf(Tensor64::scalar(3.0));
    const auto loss = ad::square(tape, w);
    tape.backward(loss);
    tape.backward(loss);
    EXPECT_DOUBLE_EQ(tape.grad(w)[0], 6.0);
}

// ---- finite-difference agreement, one test per layer kind ----

struct ConvCase {
    Shape input;
    std::size_t kernel, cout, stride;
    Padding padding;
};

class SeparableConvGradient : public ::testing::TestWithParam<ConvCase> {};

TEST_P(SeparableConvGradient, MatchesFiniteDifferences) {
    const auto c = GetParam();
    Rng rng(c.input[1] * 131 + c.kernel * 7 + c.stride);
    const auto cin = c.input[3];
    std::vector<Tensor64> params{random_tensor(c.input, rng), random_tensor({c.kernel, c.kernel, cin}, rng),
                                 random_tensor({cin, c.cout}, rng), random_tensor({c.cout}, rng)};
    const double err = max_relative_gradient_error(
        [&](ad::Tape<double>& t, const std::vector<ad::Var>& v) {
            return project(t, ad::separable_conv2d(t, v[0], v[1], v[2], v[3], c.stride, c.padding), 17);
        },
        params);
    EXPECT_LT(err, kGradTol);
}

INSTANTIATE_TEST_SUITE_P(Shapes, SeparableConvGradient,
                         ::testing::Values(ConvCase{{1, 6, 6, 2}, 3, 3, 1, Padding::Same},
                                           ConvCase{{1, 6, 6, 2}, 5, 4, 2, Padding::Same},
                                           ConvCase{{2, 7, 5, 3}, 3, 2, 2, Padding::Valid},
                                           ConvCase{{1, 6, 6, 2}, 1, 3, 1, Padding::Valid}),
                         [](const ::testing::TestParamInfo<ConvCase>& info) {
                             const auto& c = info.param;
                             return "k" + std::to_string(c.kernel) + "_s" + std::to_string(c.stride) + "_" +
                                    ops::to_string(c.padding) + "_" + std::to_string(info.index);
                         });

TEST(LayerGradients, ZeroPad) {
    Rng rng(21);
    const double err = max_relative_gradient_error(
        [](ad::Tape<double>& t, const std::vector<ad::Var>& v) { return project(t, ad::zero_pad2d(t, v[0], 2), 3); },
        {random_tensor({2, 3, 4, 2}, rng)});
    EXPECT_LT(err, kGradTol);
}

TEST(LayerGradients, GlobalAveragePool) {
    Rng rng(22);
    const double err = max_relative_gradient_error(
        [](ad::Tape<double>& t, const std::vector<ad::Var>& v) {
            return project(t, ad::global_average_pool(t, v[0]), 4);
        },
        {random_tensor({2, 3, 4, 3}, rng)});
    EXPECT_LT(err, kGradTol);
}

TEST(LayerGradients, Relu) {
    Rng rng(23);
    const double err = max_relative_gradient_error(
        [](ad::Tape<double>& t, const std::vector<ad::Var>& v) { return project(t, ad::relu(t, v[0]), 5); },
        {random_tensor({3, 5}, rng)});
    EXPECT_LT(err, kGradTol);
}

TEST(LayerGradients, Softmax) {
    Rng rng(24);
    const double err = max_relative_gradient_error(
        [](ad::Tape<double>& t, const std::vector<ad::Var>& v) { return project(t, ad::softmax(t, v[0]), 6); },
        {random_tensor({4, 3}, rng, -3, 3)});
    EXPECT_LT(err, kGradTol);
}

TEST(LayerGradients, Dense) {
    Rng rng(25);
    const double err = max_relative_gradient_error(
        [](ad::Tape<double>& t, const std::vector<ad::Var>& v) {
            return project(t, ad::dense(t, v[0], v[1], v[2]), 7);
        },
        {random_tensor({4, 5}, rng), random_tensor({5, 3}, rng), random_tensor({3}, rng)});
    EXPECT_LT(err, kGradTol);
}

TEST(LayerGradients, DropoutTraining) {
    Rng rng(26);
    const double err = max_relative_gradient_error(
        [](ad::Tape<double>& t, const std::vector<ad::Var>& v) {
            return project(t, ad::dropout(t, v[0], 0.4, true, 77), 8);
        },
        {random_tensor({6, 6}, rng)});
    EXPECT_LT(err, kGradTol);
}

TEST(LayerGradients, WeightedCrossEntropyThroughSoftmax) {
    Rng rng(27);
    const std::vector<int> labels{0, 2, 1, 2};
    const std::vector<double> weights{1.5, 0.5, 2.0};
    const double err = max_relative_gradient_error(
        [&](ad::Tape<double>& t, const std::vector<ad::Var>& v) {
            return ad::weighted_cross_entropy(t, ad::softmax(t, v[0]), labels, weights);
        },
        {random_tensor({4, 3}, rng, -2, 2)});
    EXPECT_LT(err, kGradTol);
}

TEST(LayerGradients, FullSmallNetwork) {
    Rng rng(28);
    const std::vector<int> labels{1, 0};
    const std::vector<double> weights{1.0, 1.0};
    std::vector<Tensor64> params{random_tensor({2, 6, 6, 1}, rng), random_tensor({3, 3, 1}, rng),
                                 random_tensor({1, 4}, rng),        random_tensor({4}, rng, 0.1, 0.5),
                                 random_tensor({4, 2}, rng),        random_tensor({2}, rng)};
    const double err = max_relative_gradient_error(
        [&](ad::Tape<double>& t, const std::vector<ad::Var>& v) {
            auto x = ad::zero_pad2d(t, v[0], 1);
            x = ad::relu(t, ad::separable_conv2d(t, x, v[1], v[2], v[3], 2, Padding::Same));
            x = ad::dropout(t, ad::global_average_pool(t, x), 0.5, true, 3);
            return ad::weighted_cross_entropy(t, ad::softmax(t, ad::dense(t, x, v[4], v[5])), labels, weights);
        },
        params);
    EXPECT_LT(err, kGradTol);
}

TEST(Determinism, RepeatedForwardBackwardIsBitwiseIdentical) {
    auto run = [] {
        Rng rng(99);
        ad::Tape<float> tape;
        const auto x = tape.leaf(random_tensor({2, 8, 8, 2}, rng).cast<float>(), false);
        const auto dw = tape.leaf(random_tensor({5, 5, 2}, rng).cast<float>());
        const auto pw = tape.leaf(random_tensor({2, 6}, rng).cast<float>());
        const auto b = tape.leaf(random_tensor({6}, rng).cast<float>());
        auto y = ad::relu(tape, ad::separable_conv2d(tape, x, dw, pw, b, 2, Padding::Same));
        y = ad::dropout(tape, ad::global_average_pool(tape, y), 0.5, true, 5);
        const auto loss = ad::sum(tape, ad::square(tape, y));
        tape.backward(loss);
        return std::vector<Tensor>{tape.value(loss), tape.grad(dw), tape.grad(pw), tape.grad(b)};
    };
    const auto a = run();
    const auto b = run();
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_TRUE(bitwise_equal(a[i], b[i]));
}
