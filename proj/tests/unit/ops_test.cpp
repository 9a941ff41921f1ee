#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "trustgan/errors.hpp"
#include "trustgan/ops.hpp"

using namespace trustgan;

namespace {

Tensor row(std::vector<double> v) {
    const std::size_t n = v.size();
    return Tensor(Shape{1, n}, std::move(v));
}

}  // namespace

TEST(Softmax, KnownRows) {
    Tensor s = ops::softmax(row({0, 0}));
    EXPECT_DOUBLE_EQ(s.at(0), 0.5);
    s = ops::softmax(row({1000, 1000, 1000}));
    for (int i = 0; i < 3; ++i) EXPECT_NEAR(s.at(i), 1.0 / 3.0, 1e-15);
    s = ops::softmax(row({1, 0}));
    const double e = std::exp(1.0);
    EXPECT_NEAR(s.at(0), e / (e + 1), 1e-15);
    EXPECT_NEAR(s.at(0), 0.73106, 1e-5);
    EXPECT_NEAR(s.at(1), 0.26894, 1e-5);
}

TEST(Softmax, RowsSumToOneAtLargeMagnitude) {
    Rng rng(3);
    Tensor x = Tensor::uniform({50, 7}, -1e4, 1e4, rng);
    Tensor s = ops::softmax(x);
    for (std::size_t r = 0; r < 50; ++r) {
        double total = 0;
        for (std::size_t i = 0; i < 7; ++i) {
            const double v = s.at(r * 7 + i);
            EXPECT_GE(v, 0.0);
            EXPECT_LE(v, 1.0);
            total += v;
        }
        EXPECT_NEAR(total, 1.0, 1e-9);
    }
}

TEST(Softmax, NonFiniteIsInvalidInput) {
    EXPECT_THROW(ops::softmax(row({1, std::numeric_limits<double>::quiet_NaN()})), InvalidInput);
    EXPECT_THROW(ops::logsumexp(row({std::numeric_limits<double>::infinity(), 0})), InvalidInput);
    EXPECT_THROW(ops::log_softmax(row({0, -std::numeric_limits<double>::infinity()})), InvalidInput);
}

TEST(Logsumexp, KnownRows) {
    EXPECT_NEAR(ops::logsumexp(row({0, 0})).at(0), std::log(2.0), 1e-15);
    EXPECT_NEAR(ops::logsumexp(Tensor(Shape{1, 1}, {4.25})).at(0), 4.25, 1e-15);
    const double v = ops::logsumexp(row({1000, 1000})).at(0);
    EXPECT_TRUE(std::isfinite(v));
    EXPECT_NEAR(v, 1000 + std::log(2.0), 1e-12);
}

TEST(Logsumexp, BoundedByMaxAndMaxPlusLogN) {
    Rng rng(11);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t n = 2 + trial % 9;
        Tensor x = Tensor::uniform({1, n}, -500, 500, rng);
        const double lse = ops::logsumexp(x).at(0);
        const double mx = ops::max_rows(x).at(0);
        EXPECT_GE(lse, mx);
        EXPECT_LE(lse, mx + std::log(static_cast<double>(n)) + 1e-12);
    }
}

TEST(LogSoftmax, MatchesLogOfSoftmax) {
    Rng rng(5);
    Tensor x = Tensor::uniform({4, 6}, -5, 5, rng);
    Tensor a = ops::log_softmax(x);
    Tensor b = ops::softmax(x);
    for (std::size_t i = 0; i < 24; ++i) EXPECT_NEAR(a.at(i), std::log(b.at(i)), 1e-12);
}

TEST(Elementwise, ShapeMismatchIsRejected) {
    EXPECT_ANY_THROW(ops::add(Tensor(Shape{2}), Tensor(Shape{3})));
    EXPECT_ANY_THROW(ops::mul(Tensor(Shape{2, 1}), Tensor(Shape{1, 2})));
}

TEST(Activations, Values) {
    Tensor x(Shape{4}, {-2, -0.5, 0.5, 2});
    Tensor r = ops::relu(x);
    EXPECT_EQ(r.at(0), 0.0);
    EXPECT_EQ(r.at(3), 2.0);
    Tensor l = ops::leaky_relu(x, 0.2);
    EXPECT_DOUBLE_EQ(l.at(0), -0.4);
    EXPECT_DOUBLE_EQ(l.at(2), 0.5);
    Tensor t = ops::tanh(x);
    EXPECT_DOUBLE_EQ(t.at(3), std::tanh(2.0));
    Tensor p = ops::pow_abs(x, 3.0);
    EXPECT_DOUBLE_EQ(p.at(0), 8.0);
}

TEST(Reductions, Values) {
    Tensor x(Shape{2, 3}, {1, 5, 3, -1, -2, -7});
    EXPECT_EQ(ops::sum(x).item(), -1.0);
    EXPECT_DOUBLE_EQ(ops::mean(x).item(), -1.0 / 6.0);
    EXPECT_EQ(ops::sum_rows(x).at(0), 9.0);
    EXPECT_EQ(ops::mean_rows(x).at(1), -10.0 / 3.0);
    Tensor m = ops::max_rows(x);
    EXPECT_EQ(m.at(0), 5.0);
    EXPECT_EQ(m.at(1), -1.0);
    const std::vector<std::size_t> idx{2, 0};
    Tensor p = ops::pick(x, idx);
    EXPECT_EQ(p.at(0), 3.0);
    EXPECT_EQ(p.at(1), -1.0);
    const std::vector<std::size_t> bad{3, 0};
    EXPECT_THROW(ops::pick(x, bad), InvalidInput);
}

TEST(MaxRows, TieSendsGradientToLowestIndex) {
    Tensor x(Shape{1, 3}, {2, 2, 1}, true);
    ops::sum(ops::max_rows(x)).backward();
    EXPECT_EQ(x.grad()[0], 1.0);
    EXPECT_EQ(x.grad()[1], 0.0);
}

TEST(Matmul, SmallProduct) {
    Tensor a(Shape{2, 3}, {1, 2, 3, 4, 5, 6});
    Tensor b(Shape{3, 2}, {7, 8, 9, 10, 11, 12});
    Tensor c = ops::matmul(a, b);
    EXPECT_EQ(c.at(0), 58);
    EXPECT_EQ(c.at(1), 64);
    EXPECT_EQ(c.at(2), 139);
    EXPECT_EQ(c.at(3), 154);
    EXPECT_ANY_THROW(ops::matmul(a, a));
}

TEST(Linear, MatchesHandComputation) {
    Tensor x(Shape{1, 2}, {1, 2});
    Tensor w(Shape{3, 2}, {1, 0, 0, 1, 1, 1});
    Tensor b(Shape{3}, {0.5, 0, -1});
    Tensor y = ops::linear(x, w, b);
    EXPECT_EQ(y.at(0), 1.5);
    EXPECT_EQ(y.at(1), 2.0);
    EXPECT_EQ(y.at(2), 2.0);
}

namespace {

// Direct nested-loop convolution with zero padding.
std::vector<double> naive_conv2d(const Tensor& x, const Tensor& w, const Tensor& b, std::size_t d = 1) {
    const std::size_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const std::size_t O = w.dim(0), KH = w.dim(2), KW = w.dim(3);
    const long ph = static_cast<long>(d * (KH / 2)), pw = static_cast<long>(d * (KW / 2));
    std::vector<double> out(B * O * H * W);
    for (std::size_t n = 0; n < B; ++n)
        for (std::size_t o = 0; o < O; ++o)
            for (std::size_t i = 0; i < H; ++i)
                for (std::size_t j = 0; j < W; ++j) {
                    double acc = b.at(o);
                    for (std::size_t c = 0; c < C; ++c)
                        for (std::size_t u = 0; u < KH; ++u)
                            for (std::size_t v = 0; v < KW; ++v) {
                                const long yi = static_cast<long>(i + d * u) - ph, xj = static_cast<long>(j + d * v) - pw;
                                if (yi < 0 || xj < 0 || yi >= static_cast<long>(H) || xj >= static_cast<long>(W)) continue;
                                acc += w.at(((o * C + c) * KH + u) * KW + v) * x.at(((n * C + c) * H + yi) * W + xj);
                            }
                    out[((n * O + o) * H + i) * W + j] = acc;
                }
    return out;
}

}  // namespace

TEST(Conv2d, MatchesNaiveLoopsAndPreservesSize) {
    Rng rng(21);
    for (std::size_t k : {1u, 3u, 5u}) {
        Tensor x = Tensor::uniform({2, 3, 5, 4}, -1, 1, rng);
        Tensor w = Tensor::uniform({4, 3, k, k}, -1, 1, rng);
        Tensor b = Tensor::uniform({4}, -1, 1, rng);
        Tensor y = ops::conv2d(x, w, b);
        EXPECT_EQ(y.shape(), (Shape{2, 4, 5, 4}));
        const auto ref = naive_conv2d(x, w, b);
        for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(y.at(i), ref[i], 1e-12);
    }
}

TEST(Conv2d, DilatedMatchesNaiveLoops) {
    Rng rng(22);
    for (std::size_t d : {1u, 2u, 3u, 6u}) {
        Tensor x = Tensor::uniform({2, 2, 6, 5}, -1, 1, rng);
        Tensor w = Tensor::uniform({3, 2, 3, 3}, -1, 1, rng);
        Tensor b = Tensor::uniform({3}, -1, 1, rng);
        Tensor y = ops::conv2d(x, w, b, d);
        EXPECT_EQ(y.shape(), (Shape{2, 3, 6, 5}));
        const auto ref = naive_conv2d(x, w, b, d);
        for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(y.at(i), ref[i], 1e-12) << "dilation " << d;
    }
    EXPECT_ANY_THROW(ops::conv2d(Tensor(Shape{1, 1, 4, 4}), Tensor(Shape{1, 1, 3, 3}), Tensor(Shape{1}), 0));
}

TEST(Conv2d, EvenKernelRejected) {
    EXPECT_ANY_THROW(ops::conv2d(Tensor(Shape{1, 1, 4, 4}), Tensor(Shape{1, 1, 2, 2}), Tensor(Shape{1})));
}

TEST(Conv1d, MatchesConv2dWithUnitHeight) {
    Rng rng(4);
    Tensor x = Tensor::uniform({2, 2, 7}, -1, 1, rng);
    Tensor w = Tensor::uniform({3, 2, 3}, -1, 1, rng);
    Tensor b = Tensor::uniform({3}, -1, 1, rng);
    Tensor y = ops::conv1d(x, w, b);
    EXPECT_EQ(y.shape(), (Shape{2, 3, 7}));
    Tensor y2 = ops::conv2d(ops::reshape(x, {2, 2, 1, 7}), ops::reshape(w, {3, 2, 1, 3}), b);
    for (std::size_t i = 0; i < y.numel(); ++i) EXPECT_DOUBLE_EQ(y.at(i), y2.at(i));
    Tensor yd = ops::conv1d(x, w, b, 2);
    const auto ref = naive_conv2d(ops::reshape(x, {2, 2, 1, 7}), ops::reshape(w, {3, 2, 1, 3}), b, 2);
    for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(yd.at(i), ref[i], 1e-12);
}

TEST(GlobalAvgPool, AveragesSpatialAxes) {
    Tensor x(Shape{1, 2, 2, 2}, {1, 2, 3, 4, 10, 10, 10, 14});
    Tensor p = ops::global_avg_pool(x);
    EXPECT_EQ(p.shape(), (Shape{1, 2}));
    EXPECT_DOUBLE_EQ(p.at(0), 2.5);
    EXPECT_DOUBLE_EQ(p.at(1), 11.0);
}

TEST(BatchNorm, TrainModeNormalizesAndUpdatesRunningStats) {
    Tensor x(Shape{4, 1}, {1, 2, 3, 4});
    Tensor gamma(Shape{1}, {1.0});
    Tensor beta(Shape{1}, {0.0});
    ops::BatchNormStats stats{Tensor(Shape{1}, 0.0), Tensor(Shape{1}, 1.0)};
    Tensor y = ops::batch_norm(x, gamma, beta, stats, true, true);
    const double var = 1.25;  // biased variance of 1..4
    EXPECT_NEAR(y.at(0), (1 - 2.5) / std::sqrt(var + 1e-5), 1e-12);
    EXPECT_NEAR(stats.running_mean.at(0), 0.25, 1e-15);
    // Unbiased variance 5/3 folded with momentum 0.1.
    EXPECT_NEAR(stats.running_var.at(0), 0.9 + 0.1 * (5.0 / 3.0), 1e-15);
}

TEST(BatchNorm, EvalModeUsesRunningStats) {
    Tensor x(Shape{2, 1, 2}, {1, 2, 3, 4});
    Tensor gamma(Shape{1}, {2.0});
    Tensor beta(Shape{1}, {0.5});
    ops::BatchNormStats stats{Tensor(Shape{1}, {1.0}), Tensor(Shape{1}, {4.0})};
    Tensor y = ops::batch_norm(x, gamma, beta, stats, false, false);
    EXPECT_NEAR(y.at(3), 2.0 * (4 - 1) / std::sqrt(4 + 1e-5) + 0.5, 1e-12);
    EXPECT_EQ(stats.running_mean.at(0), 1.0);
}

TEST(BatchNorm, TrainingNeedsTwoValuesPerChannel) {
    Tensor x(Shape{1, 2}, {1, 2});
    ops::BatchNormStats stats{Tensor(Shape{2}, 0.0), Tensor(Shape{2}, 1.0)};
    EXPECT_THROW(ops::batch_norm(x, Tensor(Shape{2}, 1.0), Tensor(Shape{2}, 0.0), stats, true, false), InvalidInput);
}

TEST(Dropout, RateZeroIsIdentityAndDrawsNothing) {
    Rng rng(1), untouched(1);
    Tensor x(Shape{3}, {1, 2, 3});
    Tensor y = ops::dropout(x, 0.0, rng);
    EXPECT_TRUE(y.same_storage(x));
    EXPECT_EQ(rng(), untouched());
}

TEST(Dropout, InvertedScalingAndRateBounds) {
    Rng rng(2);
    Tensor x(Shape{10000}, 1.0);
    Tensor y = ops::dropout(x, 0.3, rng);
    double kept = 0;
    for (double v : y.data()) {
        ASSERT_TRUE(v == 0.0 || std::abs(v - 1.0 / 0.7) < 1e-15);
        kept += v;
    }
    EXPECT_NEAR(kept / 10000.0, 1.0, 0.05);
    EXPECT_THROW(ops::dropout(x, 1.0, rng), InvalidInput);
    EXPECT_THROW(ops::dropout(x, -0.1, rng), InvalidInput);
}

TEST(Activation, NanPassesThrough) {
    Tensor x(Shape{2}, {std::nan(""), -1.0});
    EXPECT_TRUE(std::isnan(ops::relu(x).at(0)));
    EXPECT_TRUE(std::isnan(ops::leaky_relu(x, 0.2).at(0)));
    EXPECT_EQ(ops::relu(x).at(1), 0.0);
}
