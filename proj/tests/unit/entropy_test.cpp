#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "support/gradcheck.hpp"
#include "tcm/entropy.hpp"
#include "tcm/errors.hpp"

namespace tcm {
namespace {

using testing::random_tensor;

Tensor<float> filled(Shape s, const std::vector<float>& v) { return Tensor<float>(s, v); }

TEST(Gaussian, IntervalAtTheMean) {
    // Phi(1/2) - Phi(-1/2) for the standard normal.
    EXPECT_NEAR(gaussian_interval(0, 1), 0.3829249225480262, 1e-12);
    // -log2(0.3829249) = 1.38486; 1.3847 is the same value at four digits.
    EXPECT_NEAR(-std::log2(gaussian_interval(0, 1)), 1.3847, 5e-4);
    EXPECT_GT(gaussian_interval(0, kScaleFloor), 1 - 1e-5);
}

TEST(Gaussian, RateGrowsWithDistanceFromTheMean) {
    for (double sigma : {0.11, 0.5, 1.0, 3.7, 40.0}) {
        double previous = 0;
        for (double v = 0; v <= 60; v += 0.25) {
            const double bits = -std::log2(std::max(gaussian_interval(v, sigma), kLikelihoodFloor));
            EXPECT_GE(bits, previous - 1e-12) << "sigma " << sigma << " v " << v;
            previous = bits;
        }
    }
}

TEST(Gaussian, OpMatchesIntervalOracle) {
    std::mt19937_64 rng(4);
    Tensor<double> v = random_tensor<double>({1, 2, 3, 5}, rng, -4, 4);
    Tensor<double> s = random_tensor<double>({1, 2, 3, 5}, rng, 0.2, 3);
    double expected = 0;
    for (std::size_t i = 0; i < v.size(); ++i)
        expected -= std::log2(std::max(gaussian_interval(v.data()[i], s.data()[i]), kLikelihoodFloor));
    const Var<double> bits =
        ops::gaussian_bits(Var<double>(v), Var<double>(s), kLikelihoodFloor, BoundGradient::kExact);
    EXPECT_NEAR(bits.value().data()[0], expected, 1e-9);
}

TEST(Gaussian, SupportRadius) {
    EXPECT_EQ(gaussian_support_radius(0.11), 16);
    EXPECT_EQ(gaussian_support_radius(2.0), 16);
    EXPECT_EQ(gaussian_support_radius(2.01), 17);
    EXPECT_EQ(gaussian_support_radius(100.0), 255);
    EXPECT_EQ(gaussian_support_radius(std::nan("")), 255);
}

TEST(Quantize, MeanConditionedRounding) {
    const Var<float> v(filled({1, 1, 1, 3}, {1.0f, 0.3f, -2.24f}));
    const Var<float> mu(filled({1, 1, 1, 3}, {0.3f, 0.3f, 0.5f}));
    const Var<float> out = ops::quantize_ste(v, mu);
    const Tensor<float>& q = out.value();
    EXPECT_FLOAT_EQ(q.data()[0], 1.3f);
    EXPECT_EQ(q.data()[1], 0.3f);
    EXPECT_FLOAT_EQ(q.data()[2], -2.5f);
}

TEST(Quantize, SymbolEquivalenceAndBound) {
    std::mt19937_64 rng(9);
    const Var<float> v(random_tensor<float>({1, 4, 8, 8}, rng, -20, 20));
    const Var<float> mu(random_tensor<float>({1, 4, 8, 8}, rng, -3, 3));
    const Tensor<float> a = ops::quantize_ste(v, mu).value();
    const Tensor<float> b = ops::add(mu, ops::quantize_ste(ops::sub(v, mu), Var<float>())).value();
    for (std::size_t i = 0; i < a.size(); ++i) {
        EXPECT_EQ(a.data()[i], b.data()[i]);
        EXPECT_LE(std::abs(a.data()[i] - v.value().data()[i]), 0.5f + 1e-5f);
    }
}

TEST(FactorizedPrior, SymmetricInitPeaksAtZero) {
    nn::InitContext init(3);
    FactorizedPrior<double> prior(init, 4, 10.0, true);
    for (int c = 0; c < 4; ++c) {
        const std::vector<double> p = prior.pmf(c, -20, 20);
        const double at_zero = p[20];
        for (int k = 1; k <= 20; ++k) {
            EXPECT_LT(p[20 + k], at_zero);
            EXPECT_NEAR(p[20 + k], p[20 - k], 1e-12);
        }
    }
}

TEST(FactorizedPrior, TableMassAudit) {
    nn::InitContext init(5);
    FactorizedPrior<double> prior(init, 6);
    for (int c = 0; c < 6; ++c) {
        const auto [lo, hi] = prior.support(c);
        ASSERT_LT(lo, hi);
        const std::vector<double> p = prior.pmf(c, lo, hi);
        double inside = 0;
        for (double q : p) {
            EXPECT_GT(q, 0);
            inside += q;
        }
        EXPECT_LE(inside, 1.0 + 1e-12);
        // Each excluded tail holds less than 2^-12.
        EXPECT_GT(inside, 1.0 - 2.0 / 4096.0);
    }
}

TEST(FactorizedPrior, BitsAgreeWithPmf) {
    nn::InitContext init(6);
    FactorizedPrior<double> prior(init, 2);
    Tensor<double> z({1, 2, 1, 3}, {0, 1, -3, 2, 7, -1});
    double expected = 0;
    for (int c = 0; c < 2; ++c)
        for (int i = 0; i < 3; ++i) {
            const int v = static_cast<int>(z.at(0, c, 0, i));
            expected -= std::log2(prior.pmf(c, v, v)[0]);
        }
    const Var<double> bits = prior.bits(Var<double>(z), kLikelihoodFloor, BoundGradient::kExact);
    EXPECT_NEAR(bits.value().data()[0], expected, 1e-9);
}

TEST(FactorizedPrior, MonteCarloRateMatchesEntropy) {
    nn::InitContext init(8);
    FactorizedPrior<double> prior(init, 1);
    const auto [lo, hi] = prior.support(0);
    const std::vector<double> p = prior.pmf(0, lo, hi);
    double entropy = 0, mass = 0;
    for (double q : p) {
        entropy -= q * std::log2(q);
        mass += q;
    }
    entropy /= mass;
    std::vector<double> weights(p.begin(), p.end());
    std::discrete_distribution<int> draw(weights.begin(), weights.end());
    std::mt19937_64 rng(12);
    constexpr int kSamples = 200000;
    Tensor<double> z({1, 1, 1, kSamples});
    for (auto& v : z.storage()) v = lo + draw(rng);
    const double rate = prior.bits(Var<double>(z), kLikelihoodFloor, BoundGradient::kExact).value().data()[0] /
                        kSamples;
    // Cross-entropy of the renormalized table against the model pmf.
    EXPECT_NEAR(rate, entropy, 0.01 * entropy);
}

TEST(FactorizedPrior, GradientMatchesFiniteDifferences) {
    nn::InitContext init(2);
    FactorizedPrior<double> prior(init, 3);
    std::mt19937_64 rng(1);
    const Tensor<double> z = random_tensor<double>({2, 3, 2, 2}, rng, -4, 4);
    const double e = testing::module_gradient_error<double>(
        prior, z, [&](const Var<double>& x) { return prior.bits(x, kLikelihoodFloor, BoundGradient::kExact); }, 1e-6);
    EXPECT_LT(e, 1e-6);
}

TEST(FactorizedPrior, RejectsChannelMismatch) {
    nn::InitContext init(2);
    FactorizedPrior<float> prior(init, 3);
    EXPECT_THROW(prior.bits(Var<float>(Tensor<float>({1, 2, 1, 1})), 1e-6f, BoundGradient::kExact), ConfigError);
}

TEST(ScaledDeviation, ClosedForm) {
    std::mt19937_64 rng(3);
    Tensor<float> y({1, 3, 4, 5});
    for (auto& v : y.storage()) v = (rng() & 1) ? 2.0f : -2.0f;
    Tensor<float> y_hat = y;
    for (auto& v : y_hat.storage()) v += v > 0 ? 0.5f : -0.5f;
    const DeviationReport r = scaled_deviation(y, y_hat);
    EXPECT_EQ(r.scaled, 0.25);
    EXPECT_EQ(r.epsilon, 30.0);
    EXPECT_EQ(r.gamma, 120.0);
    ASSERT_EQ(r.map.shape(), (Shape{1, 1, 4, 5}));
    for (double v : r.map.storage()) EXPECT_NEAR(v, 0.25, 1e-15);
    EXPECT_EQ(scaled_deviation(y, y).scaled, 0.0);
}

TEST(ScaledDeviation, MapMeanEqualsScaledDeviation) {
    std::mt19937_64 rng(5);
    const Tensor<float> y = random_tensor<float>({1, 6, 5, 7}, rng, -3, 3);
    const Tensor<float> y_hat = random_tensor<float>({1, 6, 5, 7}, rng, -3, 3);
    const DeviationReport r = scaled_deviation(y, y_hat);
    double mean = 0;
    for (double v : r.map.storage()) mean += v;
    mean /= static_cast<double>(r.map.size());
    EXPECT_NEAR(mean, r.scaled, 1e-12);
}

TEST(ScaledDeviation, DegenerateInputs) {
    EXPECT_THROW(scaled_deviation(Tensor<float>({1, 1, 2, 2}), Tensor<float>({1, 1, 2, 2})), ConfigError);
    EXPECT_THROW(scaled_deviation(Tensor<float>({1, 1, 2, 2}, 1.0f), Tensor<float>({1, 1, 2, 3})), ConfigError);
}

}  // namespace
}  // namespace tcm
