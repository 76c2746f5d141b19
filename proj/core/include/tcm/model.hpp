#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "tcm/config.hpp"
#include "tcm/entropy.hpp"
#include "tcm/nn.hpp"

namespace tcm {

/// g_a: three (RBS, TCM) levels, then a stride-2 conv3x3 to M channels.
template <typename T>
class AnalysisTransform : public nn::Module<T> {
public:
    AnalysisTransform(nn::InitContext& init, const ModelConfig& cfg);
    Var<T> forward(const Var<T>& x) const;

private:
    std::vector<nn::ResidualBlockStride<T>*> down_;
    std::vector<nn::TCMBlock<T>*> tcm_;
    nn::Conv2d<T>* out_ = nullptr;
};

/// g_s: three (RBU, TCM) levels, then a x2 subpel conv3x3 to 3 channels.
template <typename T>
class SynthesisTransform : public nn::Module<T> {
public:
    SynthesisTransform(nn::InitContext& init, const ModelConfig& cfg);
    Var<T> forward(const Var<T>& y) const;

private:
    int latent_channels_;
    std::vector<nn::ResidualBlockUpsample<T>*> up_;
    std::vector<nn::TCMBlock<T>*> tcm_;
    nn::SubpelConv<T>* out_ = nullptr;
};

/// h_a: RBS (M -> C), hyper TCM, stride-2 conv3x3 to Z channels.
template <typename T>
class HyperAnalysis : public nn::Module<T> {
public:
    HyperAnalysis(nn::InitContext& init, const ModelConfig& cfg);
    Var<T> forward(const Var<T>& y) const;

private:
    nn::ResidualBlockStride<T>& down_;
    nn::TCMBlock<T>& tcm_;
    nn::Conv2d<T>& out_;
};

/// One branch of h_s: RBU (Z -> C), hyper TCM, subpel conv3x3 to M channels.
template <typename T>
class HyperSynthesis : public nn::Module<T> {
public:
    HyperSynthesis(nn::InitContext& init, const ModelConfig& cfg);
    Var<T> forward(const Var<T>& z_hat) const;

private:
    nn::ResidualBlockUpsample<T>& up_;
    nn::TCMBlock<T>& tcm_;
    nn::SubpelConv<T>& out_;
};

/// conv3x3 - GELU - conv3x3 - GELU - conv3x3.
template <typename T>
class SliceTransform : public nn::Module<T> {
public:
    SliceTransform(nn::InitContext& init, int in, int hidden1, int hidden2, int out);
    Var<T> forward(const Var<T>& x) const;
    int in_channels() const { return a_.in_channels(); }

private:
    nn::Conv2d<T>& a_;
    nn::Conv2d<T>& b_;
    nn::Conv2d<T>& c_;
};

/// Outputs of the parameter network of one slice.
template <typename T>
struct SliceParameters {
    Var<T> mean;
    Var<T> scale;         // bounded below by kScaleFloor
    Var<T> mean_support;  // attended mean features, reused by residual prediction
};

/// Slice network e_i: channel-conditional mean and scale prediction with
/// SWAtten, and latent residual prediction.
template <typename T>
class SliceNetwork : public nn::Module<T> {
public:
    SliceNetwork(nn::InitContext& init, const ModelConfig& cfg, int index);

    /// `previous` holds the reconstructed slices of index < i in order.
    SliceParameters<T> predict(const Var<T>& f_mean, const Var<T>& f_scale, const std::vector<Var<T>>& previous,
                               BoundGradient bound) const;
    /// r_i = tanh(lrp(cat(mean_support, y_hat_i))) / 2, or zero when the
    /// config disables residual prediction.
    Var<T> residual(const Var<T>& mean_support, const Var<T>& y_hat) const;

    int index() const { return index_; }
    /// Width of the conditioning input, M + i * M/s.
    int support_channels() const { return support_; }
    const nn::SWAtten<T>* mean_attention() const { return atten_mean_; }

private:
    int index_, support_, width_;
    nn::SWAtten<T>* atten_mean_ = nullptr;
    nn::SWAtten<T>* atten_scale_ = nullptr;
    SliceTransform<T>* cc_mean_ = nullptr;
    SliceTransform<T>* cc_scale_ = nullptr;
    nn::Conv2d<T>* lrp_a_ = nullptr;
    nn::Conv2d<T>* lrp_b_ = nullptr;
};

/// How quantization is modeled in a differentiable forward pass.
enum class QuantMode {
    kTrain,     // uniform noise for the rate terms, straight-through rounding elsewhere
    kNoise,     // uniform noise everywhere (fully differentiable surrogate)
    kRound,     // hard rounding everywhere, no noise
};

template <typename T>
struct ForwardOptions {
    QuantMode quant = QuantMode::kTrain;
    BoundGradient bound = BoundGradient::kPassThrough;
    std::mt19937_64* rng = nullptr;  // required unless quant == kRound
};

template <typename T>
struct ForwardResult {
    Var<T> x_hat;
    Var<T> bits_y;
    Var<T> bits_z;
    Var<T> y;
    Var<T> z;
    Var<T> z_hat;
    std::vector<Var<T>> means, scales, y_hat, residuals, y_bar;
};

/// The complete codec network.
template <typename T>
class TCMModel : public nn::Module<T> {
public:
    TCMModel(const ModelConfig& cfg, std::uint64_t seed);

    const ModelConfig& config() const { return cfg_; }

    Var<T> analysis(const Var<T>& x) const;
    Var<T> synthesis(const Var<T>& y_bar) const;
    Var<T> hyper_analysis(const Var<T>& y) const;
    std::pair<Var<T>, Var<T>> hyper_synthesis(const Var<T>& z_hat) const;

    const FactorizedPrior<T>& prior() const { return prior_; }
    const SliceNetwork<T>& slice(int i) const;

    /// Training/estimation pass over an already padded batch in [0, 1].
    ForwardResult<T> forward(const Var<T>& x, const ForwardOptions<T>& options) const;

    AnalysisTransform<T>& g_a() { return g_a_; }
    SynthesisTransform<T>& g_s() { return g_s_; }
    HyperAnalysis<T>& h_a() { return h_a_; }

private:
    ModelConfig cfg_;
    nn::InitContext init_;
    AnalysisTransform<T>& g_a_;
    SynthesisTransform<T>& g_s_;
    HyperAnalysis<T>& h_a_;
    HyperSynthesis<T>& h_s_mean_;
    HyperSynthesis<T>& h_s_scale_;
    FactorizedPrior<T>& prior_;
    std::vector<SliceNetwork<T>*> slices_;
};

/// Image-domain padding to the next multiple of 64 by mirror reflection
/// (edge sample not repeated; periodic for pads longer than the image).
struct PaddedSize {
    int height;
    int width;
};
PaddedSize padded_size(int height, int width, int multiple = 64);
Tensor<float> pad_image(const Tensor<float>& x, int multiple = 64);
Tensor<float> crop_image(const Tensor<float>& x, int height, int width);

}  // namespace tcm
