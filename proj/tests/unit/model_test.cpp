#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <set>

#include "support/gradcheck.hpp"
#include "tcm/errors.hpp"
#include "tcm/model.hpp"

namespace tcm {
namespace {

using testing::random_tensor;

ModelConfig wide_latent_config() {
    // Full latent widths with a narrow transform so the test stays quick.
    ModelConfig cfg = ModelConfig::preset("test");
    cfg.M = 320;
    cfg.Z = 192;
    return cfg;
}

TEST(Config, PresetsValidate) {
    for (const auto& name : ModelConfig::preset_names()) EXPECT_NO_THROW(ModelConfig::preset(name)) << name;
    EXPECT_THROW(ModelConfig::preset("huge"), ConfigError);
}

TEST(Config, RejectsBrokenInvariants) {
    ModelConfig cfg = ModelConfig::preset("medium");
    cfg.slices = 3;
    EXPECT_THROW(cfg.validate(), ConfigError);
    cfg = ModelConfig::preset("medium");
    cfg.C = 190;
    EXPECT_THROW(cfg.validate(), ConfigError);
    cfg = ModelConfig::preset("medium");
    cfg.C = 191;
    EXPECT_THROW(cfg.validate(), ConfigError);
    cfg = ModelConfig::preset("medium");
    cfg.head_dims_main[2] = 64;
    EXPECT_THROW(cfg.validate(), ConfigError);
}

TEST(Config, JsonRoundTrip) {
    ModelConfig cfg = ModelConfig::preset("toy");
    cfg.attention = false;
    cfg.init = nn::InitScheme::kHeNormal;
    const ModelConfig back = ModelConfig::from_json(cfg.to_json());
    EXPECT_EQ(back.to_json(), cfg.to_json());

    const ModelConfig over = ModelConfig::from_json(R"({"preset": "small", "slices": 10})");
    EXPECT_EQ(over.C, 128);
    EXPECT_EQ(over.slices, 10);
    EXPECT_THROW(ModelConfig::from_json("{"), ConfigError);
    EXPECT_THROW(ModelConfig::from_json(R"({"M": "many"})"), ConfigError);

    TrainConfig t = TrainConfig::toy();
    t.lambda = 0.0067;
    EXPECT_EQ(TrainConfig::from_json(t.to_json()).to_json(), t.to_json());
}

TEST(Config, LearningRateDropsAtNinetyPercent) {
    TrainConfig t;
    t.steps = 2000000;
    EXPECT_EQ(t.lr_at(0), 1e-4);
    EXPECT_EQ(t.lr_at(1799999), 1e-4);
    EXPECT_EQ(t.lr_at(1800000), 1e-5);
}

TEST(ChannelAccounting, SupportWidths) {
    const ModelConfig cfg = ModelConfig::preset("medium");
    EXPECT_EQ(cfg.slice_width(), 64);
    for (int i = 0; i < cfg.slices; ++i) EXPECT_EQ(cfg.support_channels(i), 320 + 64 * i);

    ModelConfig ten = cfg;
    ten.slices = 10;
    ten.validate();
    EXPECT_EQ(ten.support_channels(9), 608);
    nn::InitContext init(1);
    const SliceNetwork<float> net(init, ten, 9);
    EXPECT_EQ(net.support_channels(), 608);
    EXPECT_EQ(net.mean_attention()->internal_width(), 128);
    EXPECT_THROW(SliceNetwork<float>(init, ten, 10), ConfigError);
}

TEST(ChannelAccounting, SliceSupportChecksInputCount) {
    const ModelConfig cfg = ModelConfig::preset("micro");
    nn::InitContext init(2);
    const SliceNetwork<float> net(init, cfg, 1);
    std::mt19937_64 rng(1);
    const Var<float> f(random_tensor<float>({1, 16, 4, 4}, rng));
    const Var<float> prev(random_tensor<float>({1, 8, 4, 4}, rng));
    EXPECT_THROW(net.predict(f, f, {}, BoundGradient::kExact), ConfigError);
    const SliceParameters<float> p = net.predict(f, f, {prev}, BoundGradient::kExact);
    EXPECT_EQ(p.mean.shape(), (Shape{1, 8, 4, 4}));
    for (float s : p.scale.value().storage()) EXPECT_GE(s, static_cast<float>(kScaleFloor));
}

TEST(Model, LatentShapes) {
    const TCMModel<float> model(wide_latent_config(), 3);
    std::mt19937_64 rng(4);
    NoGradGuard guard;
    const Var<float> x(random_tensor<float>({1, 3, 256, 256}, rng, 0, 1));
    const Var<float> y = model.analysis(x);
    EXPECT_EQ(y.shape(), (Shape{1, 320, 16, 16}));
    const Var<float> z = model.hyper_analysis(y);
    EXPECT_EQ(z.shape(), (Shape{1, 192, 4, 4}));
    const auto [f_mean, f_scale] = model.hyper_synthesis(z);
    EXPECT_EQ(f_mean.shape(), (Shape{1, 320, 16, 16}));
    EXPECT_EQ(f_scale.shape(), (Shape{1, 320, 16, 16}));
    EXPECT_EQ(model.synthesis(y).shape(), x.shape());
}

TEST(Model, AnalysisRequiresPaddedInput) {
    const TCMModel<float> model(ModelConfig::preset("micro"), 1);
    NoGradGuard guard;
    EXPECT_THROW(model.analysis(Var<float>(Tensor<float>({1, 3, 64, 96}))), ConfigError);
    EXPECT_THROW(model.synthesis(Var<float>(Tensor<float>({1, 7, 4, 4}))), ConfigError);
}

TEST(Model, IdenticalBatchItemsGiveIdenticalLatents) {
    const TCMModel<float> model(ModelConfig::preset("test"), 5);
    std::mt19937_64 rng(6);
    const Tensor<float> one = random_tensor<float>({1, 3, 64, 64}, rng, 0, 1);
    Tensor<float> two({2, 3, 64, 64});
    std::copy(one.storage().begin(), one.storage().end(), two.storage().begin());
    std::copy(one.storage().begin(), one.storage().end(), two.storage().begin() + one.size());
    NoGradGuard guard;
    const Tensor<float> y = model.analysis(Var<float>(two)).value();
    const std::size_t half = y.size() / 2;
    for (std::size_t i = 0; i < half; ++i) ASSERT_EQ(y.data()[i], y.data()[half + i]);
}

TEST(Model, ForwardBundleInvariants) {
    const ModelConfig cfg = ModelConfig::preset("test");
    const TCMModel<float> model(cfg, 7);
    std::mt19937_64 rng(8);
    const Var<float> x(random_tensor<float>({1, 3, 64, 64}, rng, 0, 1));
    NoGradGuard guard;
    ForwardOptions<float> opts;
    opts.quant = QuantMode::kRound;
    const ForwardResult<float> r = model.forward(x, opts);
    ASSERT_EQ(static_cast<int>(r.y_bar.size()), cfg.slices);
    for (int i = 0; i < cfg.slices; ++i) {
        const Tensor<float>& yh = r.y_hat[i].value();
        const Tensor<float>& mu = r.means[i].value();
        const Tensor<float>& yb = r.y_bar[i].value();
        const Tensor<float>& res = r.residuals[i].value();
        for (std::size_t k = 0; k < yh.size(); ++k) {
            ASSERT_EQ(yb.data()[k], yh.data()[k] + res.data()[k]);
            ASSERT_LE(std::abs(res.data()[k]), 0.5f);
            const float q = yh.data()[k] - mu.data()[k];
            ASSERT_NEAR(q, std::round(q), 1e-3f);
        }
        for (float s : r.scales[i].value().storage()) ASSERT_GE(s, static_cast<float>(kScaleFloor));
    }
    EXPECT_EQ(r.x_hat.shape(), x.shape());
    EXPECT_TRUE(std::isfinite(r.bits_y.value().data()[0]));
    EXPECT_TRUE(std::isfinite(r.bits_z.value().data()[0]));
}

TEST(Model, AblationsBuildAndRun) {
    ModelConfig cfg = ModelConfig::preset("micro");
    cfg.residual_prediction = false;
    cfg.attention = false;
    const TCMModel<float> plain(cfg, 1);
    const ModelConfig full = ModelConfig::preset("micro");
    const TCMModel<float> with_all(full, 1);
    EXPECT_LT(plain.parameter_count(), with_all.parameter_count());
    std::mt19937_64 rng(2);
    NoGradGuard guard;
    ForwardOptions<float> opts;
    opts.quant = QuantMode::kRound;
    const ForwardResult<float> r = plain.forward(Var<float>(random_tensor<float>({1, 3, 64, 64}, rng, 0, 1)), opts);
    for (const auto& res : r.residuals)
        for (float v : res.value().storage()) ASSERT_EQ(v, 0.0f);
}

TEST(Model, ParameterCountGrowsWithSize) {
    const std::size_t small = TCMModel<float>(ModelConfig::preset("small"), 1).parameter_count();
    const std::size_t medium = TCMModel<float>(ModelConfig::preset("medium"), 1).parameter_count();
    const std::size_t large = TCMModel<float>(ModelConfig::preset("large"), 1).parameter_count();
    EXPECT_LT(small, medium);
    EXPECT_LT(medium, large);
}

TEST(Model, ParameterNamesAreUniqueAndFinite) {
    TCMModel<float> model(ModelConfig::preset("test"), 11);
    std::set<std::string> names;
    for (const auto& p : model.parameters()) {
        EXPECT_TRUE(names.insert(p.name).second) << p.name;
        EXPECT_TRUE(all_finite(p.var->value())) << p.name;
    }
    EXPECT_TRUE(names.count("slice4.atten_mean.swin2.relative_position_bias"));
}

TEST(Model, LossFiniteAtInitializationForAllPresets) {
    for (const auto& name : ModelConfig::preset_names()) {
        const TCMModel<float> model(ModelConfig::preset(name), 1);
        std::mt19937_64 rng(3);
        const Var<float> x(random_tensor<float>({1, 3, 64, 64}, rng, 0, 1));
        NoGradGuard guard;
        ForwardOptions<float> opts;
        opts.rng = &rng;
        const ForwardResult<float> r = model.forward(x, opts);
        const double bits = r.bits_y.value().data()[0] + r.bits_z.value().data()[0];
        const double mse = ops::mse(r.x_hat, x, 255.0f).value().data()[0];
        EXPECT_TRUE(std::isfinite(bits + 0.013 * mse)) << name;
    }
}

TEST(Padding, SizesAndRoundTrip) {
    EXPECT_EQ(padded_size(512, 768).height, 512);
    EXPECT_EQ(padded_size(512, 768).width, 768);
    EXPECT_EQ(padded_size(375, 500).height, 384);
    EXPECT_EQ(padded_size(375, 500).width, 512);
    EXPECT_THROW(padded_size(0, 3), ConfigError);

    std::mt19937_64 rng(1);
    const Tensor<float> x = random_tensor<float>({1, 3, 375, 500}, rng, 0, 1);
    const Tensor<float> p = pad_image(x);
    EXPECT_EQ(p.shape(), (Shape{1, 3, 384, 512}));
    EXPECT_EQ(max_abs_diff(crop_image(p, 375, 500), x), 0.0f);
    // Reflection without repeating the edge sample.
    EXPECT_EQ(p.at(0, 1, 375, 7), x.at(0, 1, 373, 7));
    EXPECT_EQ(p.at(0, 2, 3, 500), x.at(0, 2, 3, 498));
}

TEST(Padding, TinyImagesWrapPeriodically) {
    std::mt19937_64 rng(2);
    for (int side : {1, 2, 5}) {
        const Tensor<float> x = random_tensor<float>({1, 3, side, side}, rng, 0, 1);
        const Tensor<float> p = pad_image(x);
        EXPECT_EQ(p.shape(), (Shape{1, 3, 64, 64}));
        EXPECT_TRUE(all_finite(p));
        EXPECT_EQ(max_abs_diff(crop_image(p, side, side), x), 0.0f);
    }
}

}  // namespace
}  // namespace tcm
