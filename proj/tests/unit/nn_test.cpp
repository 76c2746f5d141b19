#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "support/gradcheck.hpp"
#include "tcm/errors.hpp"
#include "tcm/nn.hpp"

namespace tcm {
namespace {

using testing::module_gradient_error;
using testing::probe_loss;
using testing::random_tensor;

template <typename T>
void set_identity(nn::Conv2d<T>& conv) {
    Tensor<T>& w = conv.weight().mutable_value();
    w.fill(T(0));
    for (int c = 0; c < conv.out_channels(); ++c) w.at(c, c, 0, 0) = T(1);
    conv.bias().mutable_value().fill(T(0));
}

template <typename T>
void set_zero(nn::Conv2d<T>& conv) {
    conv.weight().mutable_value().fill(T(0));
    conv.bias().mutable_value().fill(T(0));
}

TEST(ResidualBlocks, StrideHalvesAndUpsampleDoubles) {
    nn::InitContext init(1);
    std::mt19937_64 rng(2);
    nn::ResidualBlockStride<float> down(init, 16, 8, 16);
    nn::ResidualBlockUpsample<float> up(init, 16, 8, 16);
    nn::ResidualBlock<float> same(init, 16);
    Var<float> x(random_tensor<float>({1, 16, 16, 16}, rng));

    const Var<float> d = down.forward(x);
    EXPECT_EQ(d.shape(), (Shape{1, 16, 8, 8}));
    const Var<float> u = up.forward(d);
    EXPECT_EQ(u.shape(), (Shape{1, 16, 16, 16}));
    EXPECT_EQ(same.forward(x).shape(), x.shape());
    EXPECT_TRUE(all_finite(u.value()));
}

TEST(ResidualBlocks, StrideRejectsOddExtent) {
    nn::InitContext init(1);
    nn::ResidualBlockStride<float> down(init, 4, 4, 4);
    Var<float> x(Tensor<float>({1, 4, 9, 8}));
    EXPECT_THROW(down.forward(x), ConfigError);
}

TEST(ResidualBlocks, GdnAtInitialization) {
    nn::GDN<double> gdn(1, false);
    nn::GDN<double> igdn(1, true);
    Var<double> x(Tensor<double>({1, 1, 1, 1}, std::vector<double>{2.0}));
    // beta = 1, gamma = 0.1 on the diagonal.
    EXPECT_NEAR(gdn.forward(x).value().data()[0], 2.0 / std::sqrt(1.4), 1e-12);
    EXPECT_NEAR(igdn.forward(x).value().data()[0], 2.0 * std::sqrt(1.4), 1e-12);
}

TEST(Swin, HeadCountAndShape) {
    nn::InitContext init(3);
    std::mt19937_64 rng(4);
    nn::SwinBlock<float> block(init, 64, 32, 8, false);
    EXPECT_EQ(block.heads(), 2);
    Var<float> x(random_tensor<float>({1, 64, 16, 16}, rng));
    const Var<float> y = block.forward(x);
    EXPECT_EQ(y.shape(), x.shape());
    EXPECT_TRUE(all_finite(y.value()));
}

TEST(Swin, StrictPolicyRejectsBadExtents) {
    nn::InitContext init(3);
    nn::SwinBlock<float> block(init, 8, 4, 8, true);
    EXPECT_THROW(block.forward(Var<float>(Tensor<float>({1, 8, 4, 4}))), ConfigError);
    EXPECT_THROW(block.forward(Var<float>(Tensor<float>({1, 8, 12, 16}))), ConfigError);
    EXPECT_THROW(nn::SwinBlock<float>(init, 8, 3, 8, false), ConfigError);
}

TEST(Swin, PaddingPolicyMatchesStrictOnAlignedMaps) {
    std::mt19937_64 rng(5);
    const Tensor<double> input = random_tensor<double>({1, 8, 16, 16}, rng);
    nn::InitContext a(9), b(9);
    nn::SwinBlock<double> strict(a, 8, 4, 8, true, nn::WindowPolicy::kStrict);
    nn::SwinBlock<double> padded(b, 8, 4, 8, true, nn::WindowPolicy::kPadToWindow);
    EXPECT_EQ(max_abs_diff(strict.forward(Var<double>(input)).value(), padded.forward(Var<double>(input)).value()),
              0.0);
}

TEST(Swin, PaddedMapKeepsShapeAndGradients) {
    // 12x10 with window 8 runs on a 16x16 padded grid internally.
    std::mt19937_64 rng(6);
    nn::InitContext init(10);
    nn::SwinBlock<double> block(init, 8, 4, 8, true, nn::WindowPolicy::kPadToWindow);
    const Tensor<double> small = random_tensor<double>({1, 8, 12, 10}, rng);
    const Var<double> y = block.forward(Var<double>(small));
    EXPECT_EQ(y.shape(), small.shape());
    EXPECT_TRUE(all_finite(y.value()));
    const double err = module_gradient_error<double>(
        block, small, [](const Var<double>& v) { return probe_loss(v); }, 1e-6, 100);
    EXPECT_LT(err, 1e-6);
}

TEST(Swin, UnshiftedWindowsPermuteWithInput) {
    std::mt19937_64 rng(7);
    nn::InitContext init(11);
    nn::SwinBlock<double> block(init, 8, 4, 4, false);
    const Tensor<double> x = random_tensor<double>({1, 8, 8, 12}, rng);
    // Window grid is 2x3; swap windows (0,0) <-> (1,2) and (0,1) <-> (1,0).
    const int swaps[2][4] = {{0, 0, 1, 2}, {0, 1, 1, 0}};
    auto permute = [&](const Tensor<double>& t) {
        Tensor<double> out = t;
        for (const auto& s : swaps)
            for (int c = 0; c < 8; ++c)
                for (int i = 0; i < 4; ++i)
                    for (int j = 0; j < 4; ++j) {
                        out.at(0, c, s[0] * 4 + i, s[1] * 4 + j) = t.at(0, c, s[2] * 4 + i, s[3] * 4 + j);
                        out.at(0, c, s[2] * 4 + i, s[3] * 4 + j) = t.at(0, c, s[0] * 4 + i, s[1] * 4 + j);
                    }
        return out;
    };
    const Tensor<double> direct = permute(block.forward(Var<double>(x)).value());
    const Tensor<double> permuted = block.forward(Var<double>(permute(x))).value();
    EXPECT_LT(max_abs_diff(direct, permuted), 1e-12);
}

TEST(TCM, RejectsBadConfigs) {
    nn::InitContext init(1);
    EXPECT_THROW(nn::TCMBlock<float>(init, {7, 8, 1}), ConfigError);
    EXPECT_THROW(nn::TCMBlock<float>(init, {16, 8, 3}), ConfigError);
    EXPECT_NO_THROW(nn::TCMBlock<float>(init, {16, 8, 4}));
}

TEST(TCM, ShapePreserved) {
    nn::InitContext init(2);
    std::mt19937_64 rng(3);
    nn::TCMBlock<float> block(init, {16, 8, 4});
    for (Shape s : {Shape{1, 16, 8, 8}, Shape{2, 16, 16, 24}}) {
        const Var<float> y = block.forward(Var<float>(random_tensor<float>(s, rng)));
        EXPECT_EQ(y.shape(), s);
        EXPECT_TRUE(all_finite(y.value()));
    }
}

TEST(TCM, ZeroFuseIsExactIdentity) {
    nn::InitContext init(4);
    std::mt19937_64 rng(5);
    nn::TCMBlock<float> block(init, {32, 8, 8});
    set_zero(block.stage(0).fuse_conv());
    set_zero(block.stage(1).fuse_conv());
    const Tensor<float> x = random_tensor<float>({1, 32, 16, 16}, rng);
    EXPECT_EQ(max_abs_diff(block.forward(Var<float>(x)).value(), x), 0.0f);
}

TEST(TCM, IdentityBranchesConserveSplitAndConcat) {
    nn::InitContext init(6);
    std::mt19937_64 rng(7);
    nn::TCMBlock<double> block(init, {8, 8, 4});
    const Tensor<double> x = random_tensor<double>({1, 8, 16, 16}, rng);
    const Var<double> xv(x);
    for (int i = 0; i < 2; ++i) {
        auto& stage = block.stage(i);
        stage.set_identity_branches(true);
        const Var<double> expected = ops::add(xv, stage.fuse_conv().forward(stage.entry_conv().forward(xv)));
        EXPECT_EQ(max_abs_diff(stage.forward(xv).value(), expected.value()), 0.0);
        set_identity(stage.entry_conv());
        set_identity(stage.fuse_conv());
        EXPECT_EQ(max_abs_diff(stage.forward(xv).value(), ops::scale(xv, 2.0).value()), 0.0);
    }
    // Two doubling stages.
    EXPECT_EQ(max_abs_diff(block.forward(xv).value(), ops::scale(xv, 4.0).value()), 0.0);
}

TEST(TCM, GradientMatchesFiniteDifferencesDouble) {
    nn::InitContext init(8);
    std::mt19937_64 rng(9);
    nn::TCMBlock<double> block(init, {8, 8, 4});
    const Tensor<double> x = random_tensor<double>({1, 8, 16, 16}, rng);
    const double err =
        module_gradient_error<double>(block, x, [](const Var<double>& v) { return probe_loss(v); }, 1e-5, 300);
    EXPECT_LT(err, 1e-6);
}

TEST(TCM, GradientMatchesFiniteDifferencesFloat) {
    nn::InitContext init(8);
    std::mt19937_64 rng(9);
    nn::TCMBlock<float> block(init, {8, 8, 4});
    const Tensor<float> x = random_tensor<float>({1, 8, 16, 16}, rng);
    const double err =
        module_gradient_error<float>(block, x, [](const Var<float>& v) { return probe_loss(v); }, 1e-2f, 300);
    EXPECT_LT(err, 1e-3);
}

TEST(TCM, ParameterNamesAreUnique) {
    nn::InitContext init(1);
    nn::TCMBlock<float> block(init, {16, 8, 4});
    std::set<std::string> names;
    for (const auto& p : block.parameters()) EXPECT_TRUE(names.insert(p.name).second) << p.name;
    EXPECT_TRUE(names.count("stage2.trans_block.qkv.weight"));
}

TEST(SWAtten, SqueezesAndRestoresWidth) {
    nn::InitContext init(12);
    std::mt19937_64 rng(13);
    nn::SWAtten<float> atten(init, {448, 128, 16, 8});
    EXPECT_EQ(atten.internal_width(), 128);
    const Var<float> x(random_tensor<float>({1, 448, 4, 6}, rng));
    const auto [out, mask] = atten.forward_with_mask(x);
    EXPECT_EQ(out.shape(), x.shape());
    EXPECT_EQ(mask.shape(), (Shape{1, 128, 4, 6}));
    for (float m : mask.value().values()) {
        EXPECT_GT(m, 0.0f);
        EXPECT_LT(m, 1.0f);
    }
}

TEST(SWAtten, WithoutSqueezeKeepsInputWidth) {
    nn::InitContext init(12);
    nn::SWAtten<float> atten(init, {48, 0, 16, 8});
    EXPECT_EQ(atten.internal_width(), 48);
    const Var<float> y = atten.forward(Var<float>(Tensor<float>({1, 48, 8, 8}, 0.5f)));
    EXPECT_EQ(y.shape(), (Shape{1, 48, 8, 8}));
}

TEST(SWAtten, GradientMatchesFiniteDifferences) {
    nn::InitContext init(14);
    std::mt19937_64 rng(15);
    nn::SWAtten<double> atten(init, {24, 16, 8, 4});
    const Tensor<double> x = random_tensor<double>({1, 24, 6, 5}, rng);
    const double err =
        module_gradient_error<double>(atten, x, [](const Var<double>& v) { return probe_loss(v); }, 1e-5, 200);
    EXPECT_LT(err, 1e-6);
}

}  // namespace
}  // namespace tcm
