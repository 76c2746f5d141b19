#pragma once

#include <utility>
#include <vector>

#include "tcm/nn.hpp"

namespace tcm {

/// Probability floor for rate terms and the lower bound on predicted scales.
inline constexpr double kLikelihoodFloor = 1.0 / 65536.0;
inline constexpr double kScaleFloor = 0.11;

/// Per-channel univariate density for the hyper-latent, parametrized by a
/// monotone cumulative-logit network with layer widths (1, 3, 3, 3, 3, 1).
/// The discrete likelihood of an integer-spaced value v is
/// c(v + 1/2) - c(v - 1/2) with c = sigmoid(logits).
template <typename T>
class FactorizedPrior : public nn::Module<T> {
public:
    static constexpr int kLayers = 5;
    static constexpr int kWidths[kLayers + 1] = {1, 3, 3, 3, 3, 1};

    /// init_scale sets the initial density width; `symmetric` zeroes the
    /// initial biases, giving a density symmetric about 0.
    FactorizedPrior(nn::InitContext& init, int channels, double init_scale = 10.0, bool symmetric = false);

    int channels() const { return channels_; }

    /// Sum over all elements of -log2 max(p, p_min), per-channel densities
    /// selected by the channel axis of `z`.
    Var<T> bits(const Var<T>& z, T p_min, BoundGradient mode) const;

    /// Cumulative logits of channel c at each x, evaluated in double
    /// precision from the stored parameters.
    std::vector<double> logits(int c, const std::vector<double>& xs) const;
    /// Discrete likelihoods of the integers lo..hi under channel c.
    std::vector<double> pmf(int c, int lo, int hi) const;
    /// Integer support [lo, hi] kept in the coding table of channel c: the
    /// values whose outer cumulative mass stays above 2^-12, within
    /// [-255, 255].
    std::pair<int, int> support(int c) const;

private:
    int channels_;
    Var<T>* matrices_[kLayers];
    Var<T>* biases_[kLayers];
    Var<T>* factors_[kLayers - 1];
};

/// Discretized Gaussian probability of integer offset k at scale sigma,
/// computed from complementary error functions of |k|.
double gaussian_interval(double k, double sigma);

/// Half-width of the coded Gaussian support: min(255, max(16, ceil(8 sigma))).
int gaussian_support_radius(double sigma);

/// Scaled absolute deviation between latents and their quantized version.
struct DeviationReport {
    double epsilon = 0;  // sum |y_hat - y|
    double gamma = 0;    // sum |y|
    double scaled = 0;   // epsilon / gamma
    // (1, 1, H, W) channel mean of |y_hat - y| relative to mean |y|; its
    // spatial mean equals `scaled`.
    Tensor<double> map;
};

/// Throws ConfigError for shape mismatch or an all-zero `y`.
DeviationReport scaled_deviation(const Tensor<float>& y, const Tensor<float>& y_hat);

}  // namespace tcm
