#include <gtest/gtest.h>

#include <cmath>

#include "support/gradcheck.hpp"
#include "tcm/attention.hpp"
#include "tcm/ops.hpp"

namespace tcm {
namespace {

using testing::gradient_relative_error;
using testing::probe_loss;
using testing::random_tensor;
using V = Var<double>;
using Fn = std::function<V(const std::vector<V>&)>;

constexpr double kTol = 1e-6;

TEST(Ops, ElementwiseGradients) {
    std::mt19937_64 rng(1);
    const Shape s{2, 3, 4, 5};
    const std::vector<std::pair<const char*, Fn>> cases = {
        {"add", [](const std::vector<V>& v) { return probe_loss(ops::add(v[0], v[1])); }},
        {"sub", [](const std::vector<V>& v) { return probe_loss(ops::sub(v[0], v[1])); }},
        {"mul", [](const std::vector<V>& v) { return probe_loss(ops::mul(v[0], v[1])); }},
        {"gelu", [](const std::vector<V>& v) { return probe_loss(ops::gelu(v[0])); }},
        {"sigmoid", [](const std::vector<V>& v) { return probe_loss(ops::sigmoid(v[0])); }},
        {"tanh", [](const std::vector<V>& v) { return probe_loss(ops::tanh(v[0])); }},
        {"leaky", [](const std::vector<V>& v) { return probe_loss(ops::leaky_relu(v[0])); }},
        {"square", [](const std::vector<V>& v) { return probe_loss(ops::square(v[0])); }},
        {"rsqrt", [](const std::vector<V>& v) { return probe_loss(ops::rsqrt(ops::add_scalar(ops::square(v[0]), 0.5))); }},
        {"mse", [](const std::vector<V>& v) { return ops::mse(v[0], v[1], 255.0); }},
    };
    for (const auto& [name, fn] : cases) {
        const double err = gradient_relative_error<double>({random_tensor<double>(s, rng), random_tensor<double>(s, rng)},
                                                           fn, 1e-6);
        EXPECT_LT(err, kTol) << name;
    }
}

TEST(Ops, ConvGradients) {
    std::mt19937_64 rng(2);
    struct Case { int k, stride, pad, h; };
    for (const Case c : {Case{3, 1, 1, 6}, Case{3, 2, 1, 8}, Case{1, 1, 0, 5}, Case{1, 2, 0, 6}}) {
        const double err = gradient_relative_error<double>(
            {random_tensor<double>({2, 3, c.h, c.h + 1}, rng), random_tensor<double>({4, 3, c.k, c.k}, rng),
             random_tensor<double>({1, 4, 1, 1}, rng)},
            [c](const std::vector<V>& v) { return probe_loss(ops::conv2d(v[0], v[1], v[2], c.stride, c.pad)); },
            1e-6);
        EXPECT_LT(err, kTol) << "k=" << c.k << " stride=" << c.stride;
    }
}

TEST(Ops, ConvMatchesDirectSum) {
    std::mt19937_64 rng(3);
    const auto x = random_tensor<double>({1, 2, 5, 7}, rng);
    const auto w = random_tensor<double>({3, 2, 3, 3}, rng);
    const auto y = ops::conv2d(V(x), V(w), V(), 2, 1).value();
    ASSERT_EQ(y.shape(), (Shape{1, 3, 3, 4}));
    for (int o = 0; o < 3; ++o)
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 4; ++j) {
                double ref = 0;
                for (int c = 0; c < 2; ++c)
                    for (int ky = 0; ky < 3; ++ky)
                        for (int kx = 0; kx < 3; ++kx) {
                            const int iy = 2 * i - 1 + ky, ix = 2 * j - 1 + kx;
                            if (iy >= 0 && iy < 5 && ix >= 0 && ix < 7) ref += x.at(0, c, iy, ix) * w.at(o, c, ky, kx);
                        }
                EXPECT_NEAR(y.at(0, o, i, j), ref, 1e-12);
            }
}

TEST(Ops, ShapeOpGradients) {
    std::mt19937_64 rng(4);
    const std::vector<std::pair<const char*, Fn>> cases = {
        {"shuffle", [](const std::vector<V>& v) { return probe_loss(ops::pixel_shuffle(v[0], 2)); }},
        {"concat", [](const std::vector<V>& v) { return probe_loss(ops::concat_channels<double>({v[0], v[1], v[0]})); }},
        {"slice", [](const std::vector<V>& v) { return probe_loss(ops::slice_channels(v[0], 1, 2)); }},
        {"pad", [](const std::vector<V>& v) { return probe_loss(ops::pad_bottom_right(v[0], 6, 7)); }},
        {"crop", [](const std::vector<V>& v) { return probe_loss(ops::crop(v[0], 3, 2)); }},
    };
    for (const auto& [name, fn] : cases) {
        const double err = gradient_relative_error<double>(
            {random_tensor<double>({2, 4, 4, 4}, rng), random_tensor<double>({2, 4, 4, 4}, rng)}, fn, 1e-6);
        EXPECT_LT(err, kTol) << name;
    }
}

TEST(Ops, PixelShuffleLayout) {
    Tensor<double> x({1, 4, 1, 1}, std::vector<double>{0, 1, 2, 3});
    const auto y = ops::pixel_shuffle(V(x), 2).value();
    EXPECT_EQ(y.at(0, 0, 0, 0), 0);
    EXPECT_EQ(y.at(0, 0, 0, 1), 1);
    EXPECT_EQ(y.at(0, 0, 1, 0), 2);
    EXPECT_EQ(y.at(0, 0, 1, 1), 3);
}

TEST(Ops, LayerNormGradients) {
    std::mt19937_64 rng(5);
    const double err = gradient_relative_error<double>(
        {random_tensor<double>({2, 5, 3, 3}, rng), random_tensor<double>({1, 5, 1, 1}, rng),
         random_tensor<double>({1, 5, 1, 1}, rng)},
        [](const std::vector<V>& v) { return probe_loss(ops::layer_norm_channels(v[0], v[1], v[2])); }, 1e-6);
    EXPECT_LT(err, kTol);
}

TEST(Ops, QuantizeSteForwardAndGradient) {
    Tensor<double> v({1, 1, 1, 3}, std::vector<double>{1.0, 0.3, -2.2});
    Tensor<double> mu({1, 1, 1, 3}, std::vector<double>{0.3, 0.3, 0.5});
    V vv(v, true);
    const auto q = ops::quantize_ste(vv, V(mu));
    EXPECT_DOUBLE_EQ(q.value().data()[0], 1.3);
    EXPECT_DOUBLE_EQ(q.value().data()[1], 0.3);
    EXPECT_DOUBLE_EQ(q.value().data()[2], -2.5);
    backward(ops::sum(q));
    for (double g : vv.grad().storage()) EXPECT_EQ(g, 1.0);
}

TEST(Ops, GaussianBitsValueAndGradient) {
    Tensor<double> zero({1, 1, 1, 1}, 0.0);
    Tensor<double> one({1, 1, 1, 1}, 1.0);
    const double bits = ops::gaussian_bits(V(zero), V(one), std::ldexp(1.0, -16), BoundGradient::kExact).value().data()[0];
    // -log2(Phi(0.5) - Phi(-0.5)) with Phi(0.5) = 0.691462461274013.
    EXPECT_NEAR(bits, -std::log2(2 * 0.691462461274013 - 1), 1e-12);

    std::mt19937_64 rng(6);
    auto sig = random_tensor<double>({1, 2, 3, 3}, rng, 0.2, 3.0);
    const double err = gradient_relative_error<double>(
        {random_tensor<double>({1, 2, 3, 3}, rng, -2.0, 2.0), sig},
        [](const std::vector<V>& v) {
            return ops::gaussian_bits(v[0], v[1], std::ldexp(1.0, -16), BoundGradient::kExact);
        },
        1e-7);
    EXPECT_LT(err, 1e-5);
}

TEST(Ops, LowerBoundPassThrough) {
    Tensor<double> x({1, 1, 1, 2}, std::vector<double>{0.05, 0.5});
    V a(x, true);
    backward(ops::sum(ops::scale(ops::lower_bound(a, 0.11, BoundGradient::kPassThrough), -1.0)));
    EXPECT_EQ(a.grad().data()[0], -1.0);  // would push the value up: passes
    V b(x, true);
    backward(ops::sum(ops::lower_bound(b, 0.11, BoundGradient::kPassThrough)));
    EXPECT_EQ(b.grad().data()[0], 0.0);
    EXPECT_EQ(b.grad().data()[1], 1.0);
}

struct AttnCase {
    int c, heads, window, h, w;
    bool shifted;
    int valid_h, valid_w;
};

class AttentionGrad : public ::testing::TestWithParam<AttnCase> {};

TEST_P(AttentionGrad, MatchesFiniteDifferences) {
    const AttnCase p = GetParam();
    std::mt19937_64 rng(8);
    const int span = 2 * p.window - 1;
    WindowGeometry g{p.window, p.heads, p.shifted, p.valid_h, p.valid_w};
    const double err = gradient_relative_error<double>(
        {random_tensor<double>({2, p.c, p.h, p.w}, rng), random_tensor<double>({3 * p.c, p.c, 1, 1}, rng),
         random_tensor<double>({1, 3 * p.c, 1, 1}, rng), random_tensor<double>({p.c, p.c, 1, 1}, rng),
         random_tensor<double>({1, p.c, 1, 1}, rng), random_tensor<double>({1, p.heads, span, span}, rng)},
        [g](const std::vector<V>& v) {
            return probe_loss(ops::window_attention(v[0], v[1], v[2], v[3], v[4], v[5], g));
        },
        1e-6);
    EXPECT_LT(err, kTol);
}

INSTANTIATE_TEST_SUITE_P(Windows, AttentionGrad,
                         ::testing::Values(AttnCase{4, 2, 2, 4, 4, false, 0, 0}, AttnCase{4, 1, 2, 4, 6, true, 0, 0},
                                           AttnCase{6, 3, 4, 4, 4, true, 3, 4}, AttnCase{4, 2, 2, 4, 4, true, 3, 3}));

TEST(Attention, SingleTokenWindowIsProjectionOfValue) {
    // With window 1 each token attends only to itself: out = Wp (Wv x + bv) + bp.
    std::mt19937_64 rng(9);
    const int c = 4;
    auto x = random_tensor<double>({1, c, 2, 2}, rng);
    auto wqkv = random_tensor<double>({3 * c, c, 1, 1}, rng);
    auto bqkv = random_tensor<double>({1, 3 * c, 1, 1}, rng);
    auto wp = random_tensor<double>({c, c, 1, 1}, rng);
    auto bp = random_tensor<double>({1, c, 1, 1}, rng);
    Tensor<double> rel({1, 2, 1, 1});
    const auto y = ops::window_attention(V(x), V(wqkv), V(bqkv), V(wp), V(bp), V(rel), WindowGeometry{1, 2, false, 0, 0}).value();
    for (int pix = 0; pix < 4; ++pix) {
        std::vector<double> v(c);
        for (int i = 0; i < c; ++i) {
            v[i] = bqkv.data()[2 * c + i];
            for (int j = 0; j < c; ++j) v[i] += wqkv.data()[(2 * c + i) * c + j] * x.data()[j * 4 + pix];
        }
        for (int o = 0; o < c; ++o) {
            double ref = bp.data()[o];
            for (int i = 0; i < c; ++i) ref += wp.data()[o * c + i] * v[i];
            EXPECT_NEAR(y.data()[o * 4 + pix], ref, 1e-12);
        }
    }
}

}  // namespace
}  // namespace tcm
